use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "selmiss",
    version,
    about = "Monte Carlo study of Bayesian variable selection with missing covariates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one of the three canned simulation reproductions
    Reproduce {
        /// Simulation number: 1 (threshold), 2 (band), 3 (band + selection)
        #[arg(long)]
        sim: u8,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory (default: out/sim<N>)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit nonzero when a reproduction check misses its band
        #[arg(long)]
        strict: bool,
    },
    /// Run an experiment described by a JSON config file
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker thread count (default: logical cores)
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run the built-in oracle self-check suite
    Verify,
    /// Summarize a previously written chain CSV
    Summarize {
        #[arg(long)]
        chain: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Reproduce {
            sim,
            seed,
            out,
            strict,
        } => selmiss::cli::cmd_reproduce(sim, seed, out, strict),
        Command::Run { config, jobs } => selmiss::cli::cmd_run(&config, jobs),
        Command::Verify => selmiss::cli::cmd_verify(),
        Command::Summarize { chain } => selmiss::cli::cmd_summarize(&chain),
    };
    ExitCode::from(code as u8)
}
