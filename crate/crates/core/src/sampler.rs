//! Gibbs orchestration: the fixed-model data-augmentation chain and the
//! model-selection chain.
//!
//! One sweep is a systematic scan in fixed order: (1) draw the working
//! parameters from the current completed covariate, (2) redraw every
//! missing `x2` from its full conditional, (3) refit the g-prior on the
//! completed design and draw `(beta, sigma2)` (and, in selection mode,
//! first draw the model indicator from its exact enumerated conditional).
//! The scan order is fixed so results are bit-stable for a given
//! `(seed, config, data)`.

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::Dataset;
use crate::error::{Error, Result};
use crate::gprior::{self, ModelIndex};
use crate::imputation::{self, WorkingParams};
use crate::stochastic::RngStream;

/// Number of covariates the data-augmentation sampler handles.
pub const N_COVARIATES: usize = 2;

/// Choice of the g-prior scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GSpecRepr", into = "GSpecRepr")]
pub enum GSpec {
    /// Unit-information prior: `g = n`.
    UnitInformation,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum GSpecRepr {
    Name(String),
    Value(f64),
}

impl TryFrom<GSpecRepr> for GSpec {
    type Error = String;

    fn try_from(v: GSpecRepr) -> std::result::Result<Self, String> {
        match v {
            GSpecRepr::Name(s) if s == "n" => Ok(GSpec::UnitInformation),
            GSpecRepr::Name(s) => Err(format!("unknown g spec {s:?}, expected \"n\" or a number")),
            GSpecRepr::Value(v) if v > 0.0 && v.is_finite() => Ok(GSpec::Fixed(v)),
            GSpecRepr::Value(v) => Err(format!("g must be positive and finite, got {v}")),
        }
    }
}

impl From<GSpec> for GSpecRepr {
    fn from(g: GSpec) -> Self {
        match g {
            GSpec::UnitInformation => GSpecRepr::Name("n".into()),
            GSpec::Fixed(v) => GSpecRepr::Value(v),
        }
    }
}

impl GSpec {
    pub fn resolve(&self, n: usize) -> f64 {
        match self {
            GSpec::UnitInformation => n as f64,
            GSpec::Fixed(v) => *v,
        }
    }
}

/// MCMC run settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub g_value: GSpec,
    pub seed: u64,
    pub chain_count: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 20_000,
            burn_in: 2_000,
            thin: 1,
            g_value: GSpec::UnitInformation,
            seed: 0,
            chain_count: 4,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidParameter(format!(
                "burn_in ({}) must be < iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidParameter("thin must be >= 1".into()));
        }
        if self.chain_count == 0 {
            return Err(Error::InvalidParameter("chain_count must be >= 1".into()));
        }
        Ok(())
    }

    pub fn stored_len(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Fixed-model inference or full model selection.
#[derive(Debug, Clone)]
pub enum Mode {
    Fixed(ModelIndex),
    /// Uniform-or-custom prior over the enumerated covariate subsets.
    Selection { prior: Vec<f64> },
}

impl Mode {
    pub fn selection_uniform() -> Self {
        Mode::Selection {
            prior: vec![0.25; 4],
        }
    }
}

/// Sampler behavior switches.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct RunOptions {
    /// Include an always-present intercept column in the regression of `y`.
    pub intercept: bool,
    /// Ablation: truncate imputations to the nonnegative support.
    pub truncate_support: bool,
}

/// Full parameter state after one Gibbs sweep.
#[derive(Debug, Clone)]
pub struct ChainState {
    /// Intercept coefficient; exactly 0 when the intercept is disabled.
    pub beta0: f64,
    /// Covariate coefficients, zeros in excluded coordinates.
    pub beta_dense: [f64; 2],
    pub sigma2: f64,
    /// Current covariate subset (always the fixed model in fixed mode).
    pub model: ModelIndex,
    pub working: WorkingParams,
    /// Current imputations, one per masked row in row order.
    pub imputed_x2: Vec<f64>,
}

/// Stored post-burn-in, thinned states of one chain.
#[derive(Debug, Clone)]
pub struct Chain {
    pub states: Vec<ChainState>,
    pub config: McmcConfig,
    pub options: RunOptions,
    pub dataset_fingerprint: u64,
    pub stream_id: u64,
}

impl Chain {
    /// Global iteration index of stored state `idx`.
    pub fn iteration_of(&self, idx: usize) -> usize {
        self.config.burn_in + idx * self.config.thin
    }
}

struct Engine<'a> {
    data: &'a Dataset,
    x: DMatrix<f64>,
    y: DVector<f64>,
    g: f64,
    opts: RunOptions,
    /// 1 when an intercept column is prepended, else 0.
    offset: usize,
}

impl<'a> Engine<'a> {
    fn new(data: &'a Dataset, g_spec: &GSpec, opts: RunOptions) -> Self {
        let n = data.n();
        let offset = usize::from(opts.intercept);
        let p_cols = N_COVARIATES + offset;
        let mut x = DMatrix::zeros(n, p_cols);
        for i in 0..n {
            if opts.intercept {
                x[(i, 0)] = 1.0;
            }
            x[(i, offset)] = data.x1()[i];
        }
        Engine {
            data,
            x,
            y: DVector::from_column_slice(data.y()),
            g: g_spec.resolve(n),
            opts,
            offset,
        }
    }

    fn p_cols(&self) -> usize {
        N_COVARIATES + self.offset
    }

    fn forced(&self) -> Vec<usize> {
        if self.opts.intercept {
            vec![1]
        } else {
            vec![]
        }
    }

    /// Covariate-space model -> column-space model over the design.
    fn to_columns(&self, model: &ModelIndex) -> ModelIndex {
        let mut cols = self.forced();
        cols.extend(model.included().iter().map(|j| j + self.offset));
        ModelIndex::new(cols, self.p_cols()).expect("column model")
    }

    /// Column-space model -> covariate-space model.
    fn to_covariates(&self, model: &ModelIndex) -> ModelIndex {
        let cov: Vec<usize> = model
            .included()
            .iter()
            .filter(|&&c| c > self.offset)
            .map(|&c| c - self.offset)
            .collect();
        ModelIndex::new(cov, N_COVARIATES).expect("covariate model")
    }

    fn set_x2_column(&mut self, x2_completed: &[f64]) {
        let col = self.offset + 1;
        for (i, &v) in x2_completed.iter().enumerate() {
            self.x[(i, col)] = v;
        }
    }

    /// Fit + conjugate draw under a covariate-space model, returning the
    /// embedded dense state.
    fn draw_coefficients(
        &self,
        model: &ModelIndex,
        rng: &mut RngStream,
    ) -> Result<(f64, [f64; 2], f64)> {
        let col_model = self.to_columns(model);
        let post = gprior::fit(&col_model, &self.x, &self.y, self.g)?;
        let (beta, sigma2) = gprior::sample_beta_sigma(&post, rng)?;
        let mut beta0 = 0.0;
        let mut dense = [0.0; 2];
        for (slot, &col) in col_model.included().iter().enumerate() {
            if self.opts.intercept && col == 1 {
                beta0 = beta[slot];
            } else {
                dense[col - self.offset - 1] = beta[slot];
            }
        }
        Ok((beta0, dense, sigma2))
    }

    fn init_state(&mut self, mode: &Mode, rng: &mut RngStream) -> Result<ChainState> {
        let (mut x1_cc, mut x2_cc) = (vec![], vec![]);
        for i in 0..self.data.n() {
            if let Some(v) = self.data.observed_x2(i) {
                x1_cc.push(self.data.x1()[i]);
                x2_cc.push(v);
            }
        }
        if x1_cc.len() < 4 {
            return Err(Error::InsufficientData(format!(
                "need at least 4 complete cases, got {}",
                x1_cc.len()
            )));
        }
        let (alpha_hat, rss, _) = imputation::working_least_squares(&x1_cc, &x2_cc)?;
        let tau2 = (rss / (x1_cc.len() as f64 - 2.0)).max(f64::MIN_POSITIVE);
        let working = WorkingParams {
            alpha: alpha_hat,
            tau2,
        };
        // point predictions, no noise
        let imputed: Vec<f64> = self
            .data
            .missing_indices()
            .iter()
            .map(|&i| alpha_hat[0] + alpha_hat[1] * self.data.x1()[i])
            .collect();
        let model = match mode {
            Mode::Fixed(m) => m.clone(),
            Mode::Selection { .. } => ModelIndex::full(N_COVARIATES),
        };
        self.set_x2_column(&self.data.completed_x2(&imputed));
        let (beta0, beta_dense, sigma2) = self.draw_coefficients(&model, rng)?;
        Ok(ChainState {
            beta0,
            beta_dense,
            sigma2,
            model,
            working,
            imputed_x2: imputed,
        })
    }

    /// Blocks (1)-(2) of a sweep: working-parameter draw and imputation.
    fn augment(&mut self, state: &ChainState, rng: &mut RngStream) -> Result<(WorkingParams, Vec<f64>)> {
        let x2_current = self.data.completed_x2(&state.imputed_x2);
        let working = imputation::update_working_params(self.data.x1(), &x2_current, rng)?;
        let imputed = imputation::impute_rows(
            self.data,
            state.beta0,
            state.beta_dense,
            state.sigma2,
            &working,
            self.opts.truncate_support,
            rng,
        );
        self.set_x2_column(&self.data.completed_x2(&imputed));
        Ok((working, imputed))
    }

    fn step_fixed(
        &mut self,
        state: &ChainState,
        model: &ModelIndex,
        rng: &mut RngStream,
    ) -> Result<ChainState> {
        let (working, imputed) = self.augment(state, rng)?;
        let (beta0, beta_dense, sigma2) = self.draw_coefficients(model, rng)?;
        Ok(ChainState {
            beta0,
            beta_dense,
            sigma2,
            model: model.clone(),
            working,
            imputed_x2: imputed,
        })
    }

    fn step_select(
        &mut self,
        state: &ChainState,
        prior: &[f64],
        rng: &mut RngStream,
    ) -> Result<ChainState> {
        let (working, imputed) = self.augment(state, rng)?;
        let mp = gprior::model_posterior_with_forced(&self.x, &self.y, self.g, prior, &self.forced())?;
        // categorical draw from the enumerated conditional
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut pick = mp.posterior.len() - 1;
        for (j, &w) in mp.posterior.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = j;
                break;
            }
        }
        let model = self.to_covariates(&mp.models[pick]);
        let (beta0, beta_dense, sigma2) = self.draw_coefficients(&model, rng)?;
        Ok(ChainState {
            beta0,
            beta_dense,
            sigma2,
            model,
            working,
            imputed_x2: imputed,
        })
    }
}

/// One-shot initial state (exposed for tests and diagnostics).
pub fn init_state(
    data: &Dataset,
    mode: &Mode,
    cfg: &McmcConfig,
    opts: RunOptions,
    rng: &mut RngStream,
) -> Result<ChainState> {
    let mut engine = Engine::new(data, &cfg.g_value, opts);
    engine.init_state(mode, rng)
}

/// One fixed-model sweep (exposed for tests).
pub fn step_fixed(
    state: &ChainState,
    data: &Dataset,
    model: &ModelIndex,
    cfg: &McmcConfig,
    opts: RunOptions,
    rng: &mut RngStream,
) -> Result<ChainState> {
    let mut engine = Engine::new(data, &cfg.g_value, opts);
    engine.step_fixed(state, model, rng)
}

/// One selection sweep (exposed for tests).
pub fn step_select(
    state: &ChainState,
    data: &Dataset,
    prior_models: &[f64],
    cfg: &McmcConfig,
    opts: RunOptions,
    rng: &mut RngStream,
) -> Result<ChainState> {
    let mut engine = Engine::new(data, &cfg.g_value, opts);
    engine.step_select(state, prior_models, rng)
}

/// Run one chain on the given stream, storing post-burn-in thinned states.
/// `progress` is invoked every 1000 iterations with `(done, total)`.
pub fn run_chain(
    data: &Dataset,
    mode: &Mode,
    cfg: &McmcConfig,
    opts: RunOptions,
    stream_id: u64,
    progress: Option<&(dyn Fn(usize, usize) + Sync)>,
) -> Result<Chain> {
    cfg.validate()?;
    if let Mode::Selection { prior } = mode {
        if prior.len() != 1 << N_COVARIATES {
            return Err(Error::InvalidParameter(format!(
                "model prior must have length {}, got {}",
                1 << N_COVARIATES,
                prior.len()
            )));
        }
    }
    let mut rng = RngStream::new(cfg.seed, stream_id);
    let mut engine = Engine::new(data, &cfg.g_value, opts);
    let mut state = engine.init_state(mode, &mut rng)?;
    let cap = cfg.stored_len();
    let mut states = Vec::with_capacity(cap);
    for it in 0..cfg.iterations {
        state = match mode {
            Mode::Fixed(m) => engine.step_fixed(&state, m, &mut rng)?,
            Mode::Selection { prior } => engine.step_select(&state, prior, &mut rng)?,
        };
        if it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 && states.len() < cap {
            states.push(state.clone());
        }
        if let Some(cb) = progress {
            if (it + 1) % 1000 == 0 {
                cb(it + 1, cfg.iterations);
            }
        }
    }
    Ok(Chain {
        states,
        config: cfg.clone(),
        options: opts,
        dataset_fingerprint: data.fingerprint(),
        stream_id,
    })
}

/// Run `cfg.chain_count` chains in parallel on streams
/// `base_stream_id, base_stream_id + 1, ...`, returned in chain order.
pub fn run_chains(
    data: &Dataset,
    mode: &Mode,
    cfg: &McmcConfig,
    opts: RunOptions,
    base_stream_id: u64,
    progress: Option<&(dyn Fn(usize, usize, usize) + Sync)>,
) -> Result<Vec<Chain>> {
    cfg.validate()?;
    (0..cfg.chain_count)
        .into_par_iter()
        .map(|c| {
            let cb = progress.map(|p| move |done: usize, total: usize| p(c, done, total));
            run_chain(
                data,
                mode,
                cfg,
                opts,
                base_stream_id + c as u64,
                cb.as_ref().map(|f| f as &(dyn Fn(usize, usize) + Sync)),
            )
        })
        .collect()
}

/// Dump stored states as CSV:
/// `iter,model,beta1,beta2,sigma2,alpha0,alpha1,tau2[,beta0]`,
/// with the model encoded as a bitmask integer.
pub fn write_chain_csv<W: Write>(chain: &Chain, mut w: W) -> Result<()> {
    if chain.options.intercept {
        writeln!(w, "iter,model,beta1,beta2,sigma2,alpha0,alpha1,tau2,beta0")?;
    } else {
        writeln!(w, "iter,model,beta1,beta2,sigma2,alpha0,alpha1,tau2")?;
    }
    for (idx, s) in chain.states.iter().enumerate() {
        write!(
            w,
            "{},{},{},{},{},{},{},{}",
            chain.iteration_of(idx),
            s.model.bitmask(),
            s.beta_dense[0],
            s.beta_dense[1],
            s.sigma2,
            s.working.alpha[0],
            s.working.alpha[1],
            s.working.tau2
        )?;
        if chain.options.intercept {
            write!(w, ",{}", s.beta0)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Read a chain back from the CSV dump. Imputed values are not part of the
/// dump, so the restored states carry empty imputation vectors.
pub fn read_chain_csv<R: Read>(r: R) -> Result<Chain> {
    let reader = BufReader::new(r);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidInput("empty chain CSV".into()))??;
    let intercept = match header.trim() {
        "iter,model,beta1,beta2,sigma2,alpha0,alpha1,tau2" => false,
        "iter,model,beta1,beta2,sigma2,alpha0,alpha1,tau2,beta0" => true,
        other => {
            return Err(Error::InvalidInput(format!(
                "unexpected chain CSV header: {other}"
            )))
        }
    };
    let want = if intercept { 9 } else { 8 };
    let mut states = Vec::new();
    let mut iters: Vec<usize> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != want {
            return Err(Error::InvalidInput(format!(
                "line {}: expected {want} fields, got {}",
                lineno + 2,
                f.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::InvalidInput(format!("line {}: bad number {s}", lineno + 2)))
        };
        let iter: usize = f[0]
            .parse()
            .map_err(|_| Error::InvalidInput(format!("line {}: bad iter", lineno + 2)))?;
        let mask: u32 = f[1]
            .parse()
            .map_err(|_| Error::InvalidInput(format!("line {}: bad model mask", lineno + 2)))?;
        iters.push(iter);
        states.push(ChainState {
            beta0: if intercept { num(f[8])? } else { 0.0 },
            beta_dense: [num(f[2])?, num(f[3])?],
            sigma2: num(f[4])?,
            model: ModelIndex::from_bitmask(mask, N_COVARIATES)?,
            working: WorkingParams {
                alpha: [num(f[5])?, num(f[6])?],
                tau2: num(f[7])?,
            },
            imputed_x2: vec![],
        });
    }
    if states.is_empty() {
        return Err(Error::InvalidInput("chain CSV has no states".into()));
    }
    let burn_in = iters[0];
    let thin = if iters.len() > 1 { iters[1] - iters[0] } else { 1 };
    let config = McmcConfig {
        iterations: iters.last().unwrap() + thin.max(1),
        burn_in,
        thin: thin.max(1),
        ..McmcConfig::default()
    };
    Ok(Chain {
        states,
        config,
        options: RunOptions {
            intercept,
            ..RunOptions::default()
        },
        dataset_fingerprint: 0,
        stream_id: 0,
    })
}
