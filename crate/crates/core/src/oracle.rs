//! Independent numerical oracles used to validate the analytic code paths:
//! a brute-force quadrature for the marginal likelihood, a grid integrator
//! for the imputation full conditional, Monte Carlo moments of the data
//! generator, and a self-check suite wired into the CLI `verify` command.
//!
//! Nothing here reuses the closed-form posterior algebra beyond locating
//! integration windows, so agreement is meaningful evidence.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dgp::{self, ExpParam, Mechanism, Truth};
use crate::error::{Error, Result};
use crate::gprior::ModelIndex;
use crate::imputation::WorkingParams;
use crate::stochastic::RngStream;

/// P(|x1 - y| < 0.2) under the default generator with the exponential
/// *rate* set to `exp(-x1)`. Frozen from a 2e7-draw Monte Carlo run.
pub const BAND_MISSING_RATE_RATE: f64 = 0.0803;

/// Same band probability with the exponential *mean* set to `exp(-x1)`.
pub const BAND_MISSING_RATE_MEAN: f64 = 0.0780;

fn logsumexp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Trapezoid log-weights for `n + 1` equispaced nodes with spacing `h`.
fn trap_log_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h.ln(); n + 1];
    w[0] = (h / 2.0).ln();
    w[n] = (h / 2.0).ln();
    w
}

struct MlProblem {
    yty: f64,
    xty: DVector<f64>,
    xtx: DMatrix<f64>,
    xtx_inv: DMatrix<f64>,
    beta_hat: DVector<f64>,
    log_det_xtx: f64,
    n: usize,
    k: usize,
    g: f64,
}

impl MlProblem {
    fn new(model: &ModelIndex, x: &DMatrix<f64>, y: &DVector<f64>, g: f64) -> Result<Self> {
        let n = y.len();
        let cols = model.included();
        let k = cols.len();
        let mut xg = DMatrix::zeros(n, k);
        for (j, &c) in cols.iter().enumerate() {
            xg.set_column(j, &x.column(c - 1));
        }
        let xtx = xg.transpose() * &xg;
        let xty = xg.transpose() * y;
        let (xtx_inv, beta_hat, log_det_xtx) = if k == 0 {
            (DMatrix::zeros(0, 0), DVector::zeros(0), 0.0)
        } else {
            let chol = xtx
                .clone()
                .cholesky()
                .ok_or_else(|| Error::OracleFailure("singular X'X in quadrature".into()))?;
            let log_det = 2.0 * (0..k).map(|i| chol.l()[(i, i)].ln()).sum::<f64>();
            (chol.inverse(), chol.solve(&xty), log_det)
        };
        Ok(MlProblem {
            yty: y.dot(y),
            xty,
            xtx,
            xtx_inv,
            beta_hat,
            log_det_xtx,
            n,
            k,
            g,
        })
    }

    /// Log of likelihood x beta-prior density at `(beta, sigma2)`, with the
    /// `1/sigma2` prior absorbed by the `u = ln sigma2` change of variables.
    fn log_integrand(&self, beta: &[f64], sigma2: f64) -> f64 {
        let n = self.n as f64;
        let k = self.k as f64;
        let mut bxty = 0.0;
        let mut bxtxb = 0.0;
        for i in 0..self.k {
            bxty += beta[i] * self.xty[i];
            for j in 0..self.k {
                bxtxb += beta[i] * self.xtx[(i, j)] * beta[j];
            }
        }
        let rss = self.yty - 2.0 * bxty + bxtxb;
        let loglik = -0.5 * n * (2.0 * std::f64::consts::PI * sigma2).ln() - rss / (2.0 * sigma2);
        let logprior = -0.5 * k * (2.0 * std::f64::consts::PI * self.g * sigma2).ln()
            + 0.5 * self.log_det_xtx
            - bxtxb / (2.0 * self.g * sigma2);
        loglik + logprior
    }

    /// Inner tensor-trapezoid integral over beta at a fixed sigma2,
    /// with each axis spanning 12 conditional posterior sds.
    fn log_beta_integral(&self, sigma2: f64, nodes: usize) -> f64 {
        if self.k == 0 {
            return self.log_integrand(&[], sigma2);
        }
        let shrink = self.g / (1.0 + self.g);
        let mut lo = vec![0.0; self.k];
        let mut h = vec![0.0; self.k];
        for j in 0..self.k {
            let c = shrink * self.beta_hat[j];
            let half = 12.0 * (sigma2 * shrink * self.xtx_inv[(j, j)]).sqrt();
            lo[j] = c - half;
            h[j] = 2.0 * half / nodes as f64;
        }
        let logw: Vec<Vec<f64>> = (0..self.k).map(|j| trap_log_weights(nodes, h[j])).collect();
        let mut idx = vec![0usize; self.k];
        let mut beta = vec![0.0; self.k];
        let mut terms = Vec::with_capacity((nodes + 1).pow(self.k as u32));
        loop {
            let mut lw = 0.0;
            for j in 0..self.k {
                beta[j] = lo[j] + idx[j] as f64 * h[j];
                lw += logw[j][idx[j]];
            }
            terms.push(self.log_integrand(&beta, sigma2) + lw);
            // odometer increment over the tensor grid
            let mut j = 0;
            loop {
                if j == self.k {
                    return logsumexp(&terms);
                }
                idx[j] += 1;
                if idx[j] <= nodes {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
        }
    }
}

fn ml_quadrature_impl(
    model: &ModelIndex,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    g: f64,
    range_decades: f64,
) -> Result<f64> {
    if y.len() < 2 || y.dot(y) <= 0.0 {
        return Err(Error::OracleFailure("degenerate response".into()));
    }
    let prob = MlProblem::new(model, x, y, g)?;
    let scale = prob.yty / prob.n as f64;
    let u_lo = (scale * 10f64.powf(-range_decades)).ln();
    let u_hi = (scale * 10f64.powf(range_decades)).ln();
    let mut prev = f64::NAN;
    let mut nodes = 16usize;
    for _ in 0..=12 {
        let h = (u_hi - u_lo) / nodes as f64;
        let logw = trap_log_weights(nodes, h);
        let terms: Vec<f64> = (0..=nodes)
            .map(|i| {
                let sigma2 = (u_lo + i as f64 * h).exp();
                prob.log_beta_integral(sigma2, nodes) + logw[i]
            })
            .collect();
        let val = logsumexp(&terms);
        if (val - prev).abs() < 1e-8 {
            return Ok(val);
        }
        prev = val;
        nodes *= 2;
    }
    Err(Error::OracleFailure(
        "marginal-likelihood quadrature did not converge".into(),
    ))
}

/// Brute-force log marginal likelihood of a submodel under the g-prior,
/// by iterated trapezoid quadrature in `(ln sigma2, beta)` space with grid
/// doubling until successive refinements agree to 1e-8.
pub fn ml_quadrature(
    model: &ModelIndex,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    g: f64,
) -> Result<f64> {
    ml_quadrature_impl(model, x, y, g, 4.0)
}

/// Mean and variance of the missing-`x2` full conditional computed by
/// direct grid integration of `working-prior x likelihood` (no completion
/// of the square). Two passes: a wide bracketing grid, then a tight grid
/// around the located mass.
pub fn conditional_grid_check(
    x1_i: f64,
    y_i: f64,
    beta: [f64; 2],
    sigma2: f64,
    wp: &WorkingParams,
) -> Result<(f64, f64)> {
    if sigma2 <= 0.0 || wp.tau2 <= 0.0 {
        return Err(Error::InvalidParameter(
            "conditional grid check needs positive variances".into(),
        ));
    }
    let log_dens = |x2: f64| -> f64 {
        let prior = -(x2 - wp.alpha[0] - wp.alpha[1] * x1_i).powi(2) / (2.0 * wp.tau2);
        let lik = -(y_i - beta[0] * x1_i - beta[1] * x2).powi(2) / (2.0 * sigma2);
        prior + lik
    };
    let moments = |lo: f64, hi: f64| -> (f64, f64) {
        let m = 100_000usize;
        let h = (hi - lo) / m as f64;
        let logs: Vec<f64> = (0..=m).map(|i| log_dens(lo + i as f64 * h)).collect();
        let lmax = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut z, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for (i, &l) in logs.iter().enumerate() {
            let w = if i == 0 || i == m { 0.5 } else { 1.0 };
            let d = w * (l - lmax).exp();
            let x = lo + i as f64 * h;
            z += d;
            s1 += d * x;
            s2 += d * x * x;
        }
        let mean = s1 / z;
        (mean, s2 / z - mean * mean)
    };
    // pass 1: bracket the union of the prior and likelihood mass
    let pc = wp.alpha[0] + wp.alpha[1] * x1_i;
    let ps = wp.tau2.sqrt();
    let (mut lo, mut hi) = (pc - 15.0 * ps, pc + 15.0 * ps);
    if beta[1].abs() > 1e-12 {
        let lc = (y_i - beta[0] * x1_i) / beta[1];
        let ls = sigma2.sqrt() / beta[1].abs();
        lo = lo.min(lc - 15.0 * ls);
        hi = hi.max(lc + 15.0 * ls);
    }
    let (m1, v1) = moments(lo, hi);
    if !v1.is_finite() || v1 <= 0.0 {
        return Err(Error::OracleFailure(
            "grid check failed to bracket the conditional".into(),
        ));
    }
    // pass 2: tight grid around the located mass
    let sd = v1.sqrt();
    Ok(moments(m1 - 12.0 * sd, m1 + 12.0 * sd))
}

/// Monte Carlo moments of the data generator and both censoring schemes.
#[derive(Debug, Clone, Serialize)]
pub struct DgpMoments {
    pub mean_x1: f64,
    pub mean_x2: f64,
    pub var_x2: f64,
    pub mean_y: f64,
    pub missing_rate_threshold: f64,
    pub missing_rate_band: f64,
    pub n_samples: usize,
}

pub fn dgp_moments(
    n: usize,
    truth: &Truth,
    exp_param: ExpParam,
    seed: u64,
) -> Result<DgpMoments> {
    let mut rng = RngStream::new(seed, u64::MAX);
    let data = dgp::generate_complete(n, truth, exp_param, &mut rng)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mx2 = mean(data.x2_true());
    let vx2 = data
        .x2_true()
        .iter()
        .map(|v| (v - mx2).powi(2))
        .sum::<f64>()
        / (n as f64 - 1.0);
    let thresh = dgp::apply_censoring(&data, &Mechanism::threshold())?;
    let band = dgp::apply_censoring(&data, &Mechanism::band())?;
    Ok(DgpMoments {
        mean_x1: mean(data.x1()),
        mean_x2: mx2,
        var_x2: vx2,
        mean_y: mean(data.y()),
        missing_rate_threshold: thresh.n_missing() as f64 / n as f64,
        missing_rate_band: band.n_missing() as f64 / n as f64,
        n_samples: n,
    })
}

/// Outcome of one self-check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Built-in validation suite: quadrature vs closed-form marginal
/// likelihoods, grid vs closed-form imputation conditional, generator
/// moments vs analytic and frozen reference values, and a complete-data
/// conjugacy check of the sampler. Runs in a few seconds.
pub fn run_verify_suite(seed: u64) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    let mut rng = RngStream::new(seed, u64::MAX - 1);

    // small dataset shared by the marginal-likelihood checks
    let n = 40;
    let data = dgp::generate_complete(n, &Truth::default(), ExpParam::Rate, &mut rng)?;
    let mut x = DMatrix::zeros(n, 2);
    for i in 0..n {
        x[(i, 0)] = data.x1()[i];
        x[(i, 1)] = data.x2_true()[i];
    }
    let y = DVector::from_column_slice(data.y());
    let g = n as f64;
    let mut worst = 0.0f64;
    for model in ModelIndex::enumerate(2)? {
        let closed = crate::gprior::fit(&model, &x, &y, g)?.log_ml;
        let quad = ml_quadrature(&model, &x, &y, g)?;
        worst = worst.max((closed - quad).abs());
    }
    checks.push(check(
        "marginal_likelihood_quadrature",
        worst < 1e-6,
        format!("max |closed - quadrature| over 4 models = {worst:.3e}"),
    ));

    // imputation full conditional vs direct grid integration
    let wp = WorkingParams {
        alpha: [0.8, -0.4],
        tau2: 0.6,
    };
    let mut worst_m = 0.0f64;
    let mut worst_v = 0.0f64;
    for (x1_i, y_i, beta, s2) in [
        (0.3, 1.2, [0.5, 1.5], 0.9),
        (-1.1, 0.4, [0.0, 0.2], 2.0),
        (0.0, -0.7, [1.0, 0.0], 1.0),
    ] {
        let (gm, gv) = conditional_grid_check(x1_i, y_i, beta, s2, &wp)?;
        let (cm, cv) = crate::imputation::impute_full_conditional(x1_i, y_i, beta, s2, &wp);
        worst_m = worst_m.max((gm - cm).abs());
        worst_v = worst_v.max((gv - cv).abs());
    }
    checks.push(check(
        "imputation_conditional_grid",
        worst_m < 1e-6 && worst_v < 1e-6,
        format!("max |mean err| = {worst_m:.3e}, max |var err| = {worst_v:.3e}"),
    ));

    // generator moments: E[x2] = e^{1/2} under the rate parameterization,
    // threshold missing rate = 1/2, band rate = frozen MC constant
    let mom = dgp_moments(400_000, &Truth::default(), ExpParam::Rate, seed)?;
    let e_x2 = (0.5f64).exp();
    checks.push(check(
        "dgp_moments",
        (mom.mean_x2 - e_x2).abs() < 0.02
            && (mom.missing_rate_threshold - 0.5).abs() < 0.005
            && (mom.missing_rate_band - BAND_MISSING_RATE_RATE).abs() < 0.005,
        format!(
            "E[x2] = {:.4} (expect {:.4}), threshold rate = {:.4}, band rate = {:.4} (expect {:.4})",
            mom.mean_x2, e_x2, mom.missing_rate_threshold, mom.missing_rate_band,
            BAND_MISSING_RATE_RATE
        ),
    ));

    // complete-data conjugacy: with nothing missing, chain draws are iid
    // from the closed-form posterior
    let cc = {
        use crate::sampler::{run_chain, GSpec, McmcConfig, Mode, RunOptions};
        let nn = 120;
        let d = {
            let mut r = RngStream::new(seed.wrapping_add(1), u64::MAX - 2);
            dgp::generate_complete(nn, &Truth::default(), ExpParam::Rate, &mut r)?
        };
        let cfg = McmcConfig {
            iterations: 4000,
            burn_in: 500,
            thin: 1,
            g_value: GSpec::UnitInformation,
            seed,
            chain_count: 1,
        };
        let model = ModelIndex::full(2);
        let chain = run_chain(&d, &Mode::Fixed(model.clone()), &cfg, RunOptions::default(), 1, None)?;
        let mut xm = DMatrix::zeros(nn, 2);
        for i in 0..nn {
            xm[(i, 0)] = d.x1()[i];
            xm[(i, 1)] = d.x2_true()[i];
        }
        let post = crate::gprior::fit(&model, &xm, &DVector::from_column_slice(d.y()), nn as f64)?;
        let (mean, cov, _) = crate::gprior::posterior_mean_cov(&post)?;
        let m = chain.states.len() as f64;
        let mut ok = true;
        let mut detail = String::new();
        for j in 0..2 {
            let emp: f64 = chain.states.iter().map(|s| s.beta_dense[j]).sum::<f64>() / m;
            let se = (cov[(j, j)] / m).sqrt();
            let z = (emp - mean[j]).abs() / se;
            ok &= z < 5.0;
            detail.push_str(&format!("beta{} z = {:.2}; ", j + 1, z));
        }
        check("complete_data_conjugacy", ok, detail)
    };
    checks.push(cc);

    Ok(VerifyReport { checks })
}
