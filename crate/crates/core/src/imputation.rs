//! The (deliberately misspecified) Gaussian working model for `x2 | x1`
//! and the exact Gaussian full conditional for each missing `x2`.
//!
//! The working model is the conditional regression
//! `x2 | x1 ~ N(alpha0 + alpha1 x1, tau2)` with a flat prior on `alpha`
//! and `p(tau2) ~ 1/tau2`. Where the true covariate distribution is
//! exponential this family cannot match the truth; imputed values may be
//! negative, and that misfit is the object of study. Truncation to
//! `[0, inf)` is available only as an explicit ablation.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::dgp::Dataset;
use crate::error::{Error, Result};
use crate::stochastic::RngStream;

/// Parameters of the working regression `x2 | x1 ~ N(alpha0 + alpha1 x1, tau2)`.
#[derive(Debug, Clone, Copy)]
pub struct WorkingParams {
    pub alpha: [f64; 2],
    pub tau2: f64,
}

/// Least-squares fit of `x2` on `[1, x1]`: returns `(alpha_hat, rss, (W'W)^{-1})`.
pub fn working_least_squares(x1: &[f64], x2: &[f64]) -> Result<([f64; 2], f64, [[f64; 2]; 2])> {
    let n = x1.len();
    if x2.len() != n {
        return Err(Error::InvalidParameter("x1 and x2 length mismatch".into()));
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!("n = {n} < 2")));
    }
    let nf = n as f64;
    let sx: f64 = x1.iter().sum();
    let sxx: f64 = x1.iter().map(|v| v * v).sum();
    let det = nf * sxx - sx * sx;
    if det <= 1e-12 * nf * sxx.max(1e-300) {
        return Err(Error::SingularDesign("x1 is (nearly) constant".into()));
    }
    let sy: f64 = x2.iter().sum();
    let sxy: f64 = x1.iter().zip(x2).map(|(a, b)| a * b).sum();
    let a1 = (nf * sxy - sx * sy) / det;
    let a0 = (sy - a1 * sx) / nf;
    let rss: f64 = x1
        .iter()
        .zip(x2)
        .map(|(a, b)| {
            let r = b - a0 - a1 * a;
            r * r
        })
        .sum();
    let inv = [[sxx / det, -sx / det], [-sx / det, nf / det]];
    Ok(([a0, a1], rss, inv))
}

/// Conjugate draw of the working parameters under the flat/Jeffreys prior:
/// `tau2 ~ InvGamma((n-2)/2, RSS/2)`, `alpha | tau2 ~ N(alpha_hat, tau2 (W'W)^{-1})`.
pub fn update_working_params(
    x1: &[f64],
    x2_current: &[f64],
    rng: &mut RngStream,
) -> Result<WorkingParams> {
    let n = x1.len();
    if n < 4 {
        return Err(Error::InsufficientData(format!(
            "working update needs n >= 4, got {n}"
        )));
    }
    let (alpha_hat, rss, wtw_inv) = working_least_squares(x1, x2_current)?;
    let scale: f64 = x2_current.iter().map(|v| v * v).sum();
    if rss <= 1e-12 * scale.max(1e-300) {
        return Err(Error::DegenerateScale(
            "x2 is (numerically) affine in x1; tau2 draw undefined".into(),
        ));
    }
    let tau2 = rng.inverse_gamma((n as f64 - 2.0) / 2.0, rss / 2.0)?;
    // 2x2 Cholesky of tau2 * (W'W)^{-1}
    let c00 = (tau2 * wtw_inv[0][0]).sqrt();
    let c10 = tau2 * wtw_inv[1][0] / c00;
    let c11 = (tau2 * wtw_inv[1][1] - c10 * c10).max(0.0).sqrt();
    let z0 = rng.standard_normal();
    let z1 = rng.standard_normal();
    Ok(WorkingParams {
        alpha: [alpha_hat[0] + c00 * z0, alpha_hat[1] + c10 * z0 + c11 * z1],
        tau2,
    })
}

/// Exact Gaussian full conditional of a missing `x2`: the product of the
/// working conditional and the likelihood `N(y; beta1 x1 + beta2 x2, sigma2)`.
///
/// Precision `q = 1/tau2 + beta2^2/sigma2`; returns `(mean, 1/q)`.
pub fn impute_full_conditional(
    x1_i: f64,
    y_i: f64,
    beta: [f64; 2],
    sigma2: f64,
    wp: &WorkingParams,
) -> (f64, f64) {
    debug_assert!(sigma2 > 0.0 && wp.tau2 > 0.0);
    let q = 1.0 / wp.tau2 + beta[1] * beta[1] / sigma2;
    let m = ((wp.alpha[0] + wp.alpha[1] * x1_i) / wp.tau2
        + beta[1] * (y_i - beta[0] * x1_i) / sigma2)
        / q;
    (m, 1.0 / q)
}

/// Draw each masked row's `x2` from its full conditional, in row order.
/// `y_offset` is subtracted from every response (used when the regression
/// carries an always-included intercept).
pub(crate) fn impute_rows(
    data: &Dataset,
    y_offset: f64,
    beta: [f64; 2],
    sigma2: f64,
    wp: &WorkingParams,
    truncate_support: bool,
    rng: &mut RngStream,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.n_missing());
    for i in 0..data.n() {
        if data.observed_x2(i).is_some() {
            continue;
        }
        let (m, v) = impute_full_conditional(data.x1()[i], data.y()[i] - y_offset, beta, sigma2, wp);
        let sd = v.sqrt();
        let draw = if truncate_support {
            truncated_normal_nonneg(m, sd, rng)
        } else {
            m + sd * rng.standard_normal()
        };
        out.push(draw);
    }
    out
}

/// Independent draws from each masked row's full conditional, in row order.
pub fn impute_all(
    data: &Dataset,
    beta_dense: [f64; 2],
    sigma2: f64,
    wp: &WorkingParams,
    rng: &mut RngStream,
) -> Vec<f64> {
    impute_rows(data, 0.0, beta_dense, sigma2, wp, false, rng)
}

/// Inverse-CDF draw from `N(m, sd^2)` truncated to `[0, inf)`.
fn truncated_normal_nonneg(m: f64, sd: f64, rng: &mut RngStream) -> f64 {
    let std = Normal::standard();
    let lo = std.cdf(-m / sd);
    let u = rng.uniform();
    let p = (lo + u * (1.0 - lo)).clamp(f64::MIN_POSITIVE, 1.0 - 1e-16);
    let x = m + sd * std.inverse_cdf(p);
    x.max(0.0)
}
