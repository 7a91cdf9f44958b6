//! Monte Carlo study of Bayesian variable selection with missing
//! covariates: data generation with MAR censoring, Gibbs data augmentation
//! under a misspecified Gaussian working imputation model, g-prior model
//! selection, convergence diagnostics, and independent numerical oracles.

pub mod cli;
pub mod dgp;
pub mod diagnostics;
pub mod error;
pub mod gprior;
pub mod imputation;
pub mod oracle;
pub mod sampler;
pub mod stochastic;

pub use error::{Error, Result};
