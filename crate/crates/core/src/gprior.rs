//! Zellner g-prior conjugate algebra for one linear submodel, plus the
//! posterior over the enumerated model space.
//!
//! For a submodel with design `X_g` (k columns of `X`), the prior is
//! `beta | sigma2 ~ N(0, g sigma2 (X_g' X_g)^{-1})` with `p(sigma2) ~ 1/sigma2`.
//! Integrating out gives
//!
//! ```text
//! log m(y) = ln Gamma(n/2) - (n/2) ln pi - (k/2) ln(1+g) - (n/2) ln S
//! S        = y'y - g/(1+g) * beta_hat' X_g' y
//! ```
//!
//! with the null model (`k = 0`) using `S = y'y`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::stochastic::RngStream;

const MAX_P: usize = 20;
const SV_RATIO_GUARD: f64 = 1e-8;

/// One of the `2^p` submodels: a sorted set of column indices over `1..=p`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelIndex {
    included: Vec<usize>,
    p: usize,
}

impl ModelIndex {
    pub fn new(mut included: Vec<usize>, p: usize) -> Result<Self> {
        if p == 0 || p > MAX_P {
            return Err(Error::InvalidParameter(format!(
                "model space dimension p must be in 1..={MAX_P}, got {p}"
            )));
        }
        included.sort_unstable();
        if included.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter("duplicate column index".into()));
        }
        if included.iter().any(|&j| j == 0 || j > p) {
            return Err(Error::InvalidParameter(format!(
                "column indices must lie in 1..={p}: {included:?}"
            )));
        }
        Ok(ModelIndex { included, p })
    }

    pub fn null(p: usize) -> Self {
        ModelIndex::new(vec![], p).expect("null model")
    }

    pub fn full(p: usize) -> Self {
        ModelIndex::new((1..=p).collect(), p).expect("full model")
    }

    pub fn included(&self) -> &[usize] {
        &self.included
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.included.len()
    }

    pub fn is_null(&self) -> bool {
        self.included.is_empty()
    }

    pub fn contains(&self, col: usize) -> bool {
        self.included.binary_search(&col).is_ok()
    }

    /// Bitmask encoding: column `j` maps to bit `j-1`.
    pub fn bitmask(&self) -> u32 {
        self.included.iter().map(|&j| 1u32 << (j - 1)).sum()
    }

    pub fn from_bitmask(mask: u32, p: usize) -> Result<Self> {
        let included = (1..=p).filter(|&j| mask & (1 << (j - 1)) != 0).collect();
        ModelIndex::new(included, p)
    }

    /// All `2^p` submodels, ordered by size then lexicographically.
    pub fn enumerate(p: usize) -> Result<Vec<ModelIndex>> {
        if p == 0 || p > MAX_P {
            return Err(Error::InvalidParameter(format!(
                "model space dimension p must be in 1..={MAX_P}, got {p}"
            )));
        }
        let mut masks: Vec<u32> = (0..(1u32 << p)).collect();
        masks.sort_by_key(|m| {
            // size, then lexicographic over the sorted index list
            let mut key = vec![m.count_ones() as usize];
            key.extend((1..=p).filter(|&j| m & (1 << (j - 1)) != 0));
            key
        });
        masks
            .into_iter()
            .map(|m| ModelIndex::from_bitmask(m, p))
            .collect()
    }

    pub fn label(&self) -> String {
        if self.is_null() {
            "none".to_string()
        } else {
            self.included
                .iter()
                .map(|j| format!("beta{j}"))
                .collect::<Vec<_>>()
                .join("_")
        }
    }
}

/// Closed-form conjugate posterior summary for one submodel.
#[derive(Debug, Clone)]
pub struct GPriorPosterior {
    pub model: ModelIndex,
    pub n: usize,
    pub g: f64,
    /// Least-squares estimate on the submodel columns (length `k`).
    pub beta_hat: DVector<f64>,
    /// `(X_g' X_g)^{-1}` (k x k).
    pub xtx_inverse: DMatrix<f64>,
    /// Posterior scatter `y'y - g/(1+g) * y' H_g y`.
    pub s_gamma: f64,
    /// Log marginal likelihood of the submodel.
    pub log_ml: f64,
}

/// Posterior over the enumerated model space.
#[derive(Debug, Clone)]
pub struct ModelPosterior {
    pub models: Vec<ModelIndex>,
    pub log_ml: Vec<f64>,
    pub prior: Vec<f64>,
    pub posterior: Vec<f64>,
    pub rank_deficient: Vec<bool>,
}

fn gather_columns(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    let n = x.nrows();
    let mut xg = DMatrix::zeros(n, cols.len());
    for (j, &c) in cols.iter().enumerate() {
        xg.set_column(j, &x.column(c - 1));
    }
    xg
}

/// Fit the g-prior posterior for one submodel.
pub fn fit(model: &ModelIndex, x: &DMatrix<f64>, y: &DVector<f64>, g: f64) -> Result<GPriorPosterior> {
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::InvalidParameter(format!("g must be positive, got {g}")));
    }
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::InvalidParameter(format!(
            "y has length {} but X has {n} rows",
            y.len()
        )));
    }
    if model.p() != x.ncols() {
        return Err(Error::InvalidParameter(format!(
            "model is over {} columns but X has {}",
            model.p(),
            x.ncols()
        )));
    }
    let k = model.k();
    if n <= k {
        return Err(Error::InsufficientData(format!("n = {n} <= k = {k}")));
    }
    let yty = y.dot(y);
    if yty <= 0.0 {
        return Err(Error::Numerical("y'y must be positive".into()));
    }
    let shared = ln_gamma(n as f64 / 2.0) - (n as f64 / 2.0) * std::f64::consts::PI.ln();

    if k == 0 {
        return Ok(GPriorPosterior {
            model: model.clone(),
            n,
            g,
            beta_hat: DVector::zeros(0),
            xtx_inverse: DMatrix::zeros(0, 0),
            s_gamma: yty,
            log_ml: shared - (n as f64 / 2.0) * yty.ln(),
        });
    }

    let xg = gather_columns(x, model.included());
    let xtx = xg.tr_mul(&xg);
    let xty = xg.tr_mul(y);

    // singular-value guard on X_g via eigenvalues of X_g'X_g
    let eig = SymmetricEigen::new(xtx.clone());
    let ev_max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let ev_min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if !(ev_max > 0.0) || ev_min <= 0.0 || ev_min.sqrt() <= SV_RATIO_GUARD * ev_max.sqrt() {
        return Err(Error::SingularDesign(format!(
            "columns {:?} nearly collinear (sv ratio {:.3e})",
            model.included(),
            (ev_min.max(0.0) / ev_max.max(f64::MIN_POSITIVE)).sqrt()
        )));
    }

    let chol = Cholesky::new(xtx)
        .ok_or_else(|| Error::SingularDesign(format!("Cholesky failed for {:?}", model.included())))?;
    let beta_hat = chol.solve(&xty);
    let xtx_inverse = chol.inverse();

    let shrink = g / (1.0 + g);
    let s_gamma = yty - shrink * beta_hat.dot(&xty);
    if !(s_gamma > 0.0) {
        return Err(Error::Numerical(format!(
            "posterior scatter non-positive: {s_gamma}"
        )));
    }
    let log_ml = shared - (k as f64 / 2.0) * (1.0 + g).ln() - (n as f64 / 2.0) * s_gamma.ln();
    Ok(GPriorPosterior {
        model: model.clone(),
        n,
        g,
        beta_hat,
        xtx_inverse,
        s_gamma,
        log_ml,
    })
}

/// Draw `(beta, sigma2)` from the conjugate posterior.
///
/// `sigma2 ~ InvGamma(n/2, S/2)`, then
/// `beta | sigma2 ~ N(g/(1+g) beta_hat, sigma2 g/(1+g) (X_g'X_g)^{-1})`.
/// The null model returns an empty beta.
pub fn sample_beta_sigma(post: &GPriorPosterior, rng: &mut RngStream) -> Result<(DVector<f64>, f64)> {
    let sigma2 = rng.inverse_gamma(post.n as f64 / 2.0, post.s_gamma / 2.0)?;
    if post.model.is_null() {
        return Ok((DVector::zeros(0), sigma2));
    }
    let shrink = post.g / (1.0 + post.g);
    let mean = &post.beta_hat * shrink;
    let cov = &post.xtx_inverse * (sigma2 * shrink);
    let beta = rng.mvn(&mean, &cov)?;
    Ok((beta, sigma2))
}

/// Exact conjugate moments: `E[beta]`, `Cov(beta)`, `E[sigma2]`.
pub fn posterior_mean_cov(post: &GPriorPosterior) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
    if post.n <= post.model.k() + 2 {
        return Err(Error::InsufficientData(format!(
            "n = {} too small for finite moments with k = {}",
            post.n,
            post.model.k()
        )));
    }
    let sigma2_mean = post.s_gamma / (post.n as f64 - 2.0);
    let shrink = post.g / (1.0 + post.g);
    let mean = &post.beta_hat * shrink;
    let cov = &post.xtx_inverse * (sigma2_mean * shrink);
    Ok((mean, cov, sigma2_mean))
}

/// Posterior over all `2^p` submodels under the given prior vector
/// (ordered as [`ModelIndex::enumerate`]).
pub fn model_posterior(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    g: f64,
    prior: &[f64],
) -> Result<ModelPosterior> {
    model_posterior_with_forced(x, y, g, prior, &[])
}

/// Like [`model_posterior`] but with `forced` columns included in every
/// submodel; the model space (and prior) enumerate subsets of the
/// remaining free columns.
pub fn model_posterior_with_forced(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    g: f64,
    prior: &[f64],
    forced: &[usize],
) -> Result<ModelPosterior> {
    let p = x.ncols();
    let free: Vec<usize> = (1..=p).filter(|j| !forced.contains(j)).collect();
    let n_models = 1usize
        .checked_shl(free.len() as u32)
        .ok_or_else(|| Error::InvalidParameter("model space too large".into()))?;
    if prior.len() != n_models {
        return Err(Error::InvalidParameter(format!(
            "prior has length {}, expected {n_models}",
            prior.len()
        )));
    }
    if prior.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::InvalidParameter("prior weights must be nonnegative".into()));
    }
    let total: f64 = prior.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParameter(format!(
            "prior must sum to 1 within 1e-10, got {total}"
        )));
    }

    // enumerate subsets of the free columns (size then lex), union forced
    let subsets = ModelIndex::enumerate(free.len().max(1))?;
    let subsets: Vec<Vec<usize>> = if free.is_empty() {
        vec![vec![]]
    } else {
        subsets
            .iter()
            .map(|m| m.included().iter().map(|&j| free[j - 1]).collect())
            .collect()
    };

    let mut models = Vec::with_capacity(n_models);
    let mut log_ml = Vec::with_capacity(n_models);
    let mut rank_deficient = Vec::with_capacity(n_models);
    for subset in &subsets {
        let mut cols: Vec<usize> = forced.to_vec();
        cols.extend(subset);
        let model = ModelIndex::new(cols, p)?;
        match fit(&model, x, y, g) {
            Ok(post) => {
                log_ml.push(post.log_ml);
                rank_deficient.push(false);
            }
            Err(Error::SingularDesign(_)) => {
                log_ml.push(f64::NEG_INFINITY);
                rank_deficient.push(true);
            }
            Err(e) => return Err(e),
        }
        models.push(model);
    }

    let weights: Vec<f64> = (0..n_models)
        .map(|j| {
            if rank_deficient[j] || prior[j] == 0.0 {
                f64::NEG_INFINITY
            } else {
                prior[j].ln() + log_ml[j]
            }
        })
        .collect();
    let max_w = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max_w.is_finite() {
        return Err(Error::NoValidModel);
    }
    let sum_exp: f64 = weights.iter().map(|w| (w - max_w).exp()).sum();
    let posterior: Vec<f64> = weights
        .iter()
        .map(|w| (w - max_w).exp() / sum_exp)
        .collect();
    Ok(ModelPosterior {
        models,
        log_ml,
        prior: prior.to_vec(),
        posterior,
        rank_deficient,
    })
}
