//! Posterior summaries and convergence diagnostics: pooled moments and
//! quantiles, multi-chain effective sample size (Geyer initial positive
//! sequence on split chains), split-R̂, Gaussian KDE, and small SVG helpers
//! for trace and density plots.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dgp::Dataset;
use crate::error::{Error, Result};
use crate::gprior::ModelIndex;
use crate::sampler::{Chain, N_COVARIATES};

/// Posterior quantiles reported for every scalar parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Quantiles {
    pub q2_5: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q97_5: f64,
}

/// Pooled summary of one scalar parameter across all chains.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSummary {
    pub mean: f64,
    pub variance: f64,
    pub sd: f64,
    pub quantiles: Quantiles,
    pub ess: f64,
    pub rhat: f64,
}

/// Full run summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    /// Keyed by parameter name, in fixed order
    /// (`beta0` first when present, then `beta1..tau2`).
    pub parameters: BTreeMap<String, ParamSummary>,
    /// Posterior frequency of each covariate subset, keyed by label.
    pub model_frequencies: BTreeMap<String, f64>,
    /// RMSE of the posterior-mean imputations against the held-back truth;
    /// absent when no rows are masked or the chains carry no imputations.
    pub imputation_rmse: Option<f64>,
    pub n_samples: usize,
    pub n_chains: usize,
}

/// Names of the scalar parameters traced by the sampler, in report order.
pub fn parameter_names(intercept: bool) -> Vec<&'static str> {
    let mut names = vec!["beta1", "beta2", "sigma2", "alpha0", "alpha1", "tau2"];
    if intercept {
        names.insert(0, "beta0");
    }
    names
}

fn extract(chain: &Chain, name: &str) -> Result<Vec<f64>> {
    let get = |f: &dyn Fn(&crate::sampler::ChainState) -> f64| {
        chain.states.iter().map(f).collect::<Vec<f64>>()
    };
    Ok(match name {
        "beta0" => get(&|s| s.beta0),
        "beta1" => get(&|s| s.beta_dense[0]),
        "beta2" => get(&|s| s.beta_dense[1]),
        "sigma2" => get(&|s| s.sigma2),
        "alpha0" => get(&|s| s.working.alpha[0]),
        "alpha1" => get(&|s| s.working.alpha[1]),
        "tau2" => get(&|s| s.working.tau2),
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown parameter {other:?}"
            )))
        }
    })
}

fn mean_of(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Two-pass sample variance (unbiased).
pub fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean_of(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Type-7 (linear interpolation) quantile of already-sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty() && (0.0..=1.0).contains(&p));
    let h = (sorted.len() as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn quantiles_of(sorted: &[f64]) -> Quantiles {
    Quantiles {
        q2_5: quantile_sorted(sorted, 0.025),
        q25: quantile_sorted(sorted, 0.25),
        q50: quantile_sorted(sorted, 0.50),
        q75: quantile_sorted(sorted, 0.75),
        q97_5: quantile_sorted(sorted, 0.975),
    }
}

/// Split every chain in half, dropping one trailing draw on odd lengths.
fn split_halves(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let n = c.len() / 2;
        out.push(&c[..n]);
        out.push(&c[n..2 * n]);
    }
    out
}

struct Pooled {
    w: f64,
    var_plus: f64,
    n: usize,
    m: usize,
}

fn pooled_variances(seqs: &[&[f64]]) -> Pooled {
    let m = seqs.len();
    let n = seqs[0].len();
    let means: Vec<f64> = seqs.iter().map(|s| mean_of(s)).collect();
    let w = seqs.iter().map(|s| sample_variance(s)).sum::<f64>() / m as f64;
    let b_over_n = if m > 1 { sample_variance(&means) } else { 0.0 };
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    Pooled { w, var_plus, n, m }
}

/// Split-R̂ (potential scale reduction) across chains.
/// A constant pooled sample returns exactly 1.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    let seqs = split_halves(chains);
    if seqs.iter().any(|s| s.len() < 2) {
        return Err(Error::InsufficientData(
            "split-Rhat needs at least 4 draws per chain".into(),
        ));
    }
    let p = pooled_variances(&seqs);
    if p.var_plus <= 0.0 || p.w <= 0.0 {
        return Ok(1.0);
    }
    Ok((p.var_plus / p.w).sqrt())
}

fn autocovariance(seq: &[f64], lag: usize) -> f64 {
    let n = seq.len();
    let m = mean_of(seq);
    (0..n - lag)
        .map(|i| (seq[i] - m) * (seq[i + lag] - m))
        .sum::<f64>()
        / n as f64
}

/// Multi-chain effective sample size via Geyer's initial positive, monotone
/// sequence on split chains. A constant sample reports the nominal size.
pub fn ess(chains: &[Vec<f64>]) -> Result<f64> {
    let seqs = split_halves(chains);
    if seqs.iter().any(|s| s.len() < 4) {
        return Err(Error::InsufficientData(
            "ESS needs at least 8 draws per chain".into(),
        ));
    }
    let p = pooled_variances(&seqs);
    let total = (p.m * p.n) as f64;
    if p.var_plus <= 0.0 {
        return Ok(total);
    }
    let max_lag = p.n - 1;
    let rho = |t: usize| -> f64 {
        let mean_acov = seqs.iter().map(|s| autocovariance(s, t)).sum::<f64>() / p.m as f64;
        1.0 - (p.w - mean_acov) / p.var_plus
    };
    // paired sums P_k = rho_{2k} + rho_{2k+1}; stop at the first
    // non-positive pair and enforce monotone decrease
    let mut tau = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 <= max_lag {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        k += 1;
    }
    let tau = (tau - 1.0).max(1.0 / total);
    Ok(total / tau)
}

fn model_label(model: &ModelIndex) -> String {
    model.label()
}

/// Pool chains into a full summary. `data` enables imputation scoring when
/// the stored states still carry their imputation vectors.
pub fn summarize(chains: &[Chain], data: Option<&Dataset>) -> Result<Summary> {
    if chains.is_empty() || chains.iter().any(|c| c.states.is_empty()) {
        return Err(Error::InsufficientData("no stored states".into()));
    }
    let intercept = chains[0].options.intercept;
    let mut parameters = BTreeMap::new();
    for name in parameter_names(intercept) {
        let per_chain: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| extract(c, name))
            .collect::<Result<_>>()?;
        let mut pooled: Vec<f64> = per_chain.iter().flatten().copied().collect();
        let mean = mean_of(&pooled);
        let variance = sample_variance(&pooled);
        let (ess_v, rhat_v) = if chains.len() >= 1 && per_chain[0].len() >= 8 {
            (ess(&per_chain)?, split_rhat(&per_chain)?)
        } else {
            (f64::NAN, f64::NAN)
        };
        pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
        parameters.insert(
            name.to_string(),
            ParamSummary {
                mean,
                variance,
                sd: variance.sqrt(),
                quantiles: quantiles_of(&pooled),
                ess: ess_v,
                rhat: rhat_v,
            },
        );
    }

    let total: usize = chains.iter().map(|c| c.states.len()).sum();
    let mut model_frequencies = BTreeMap::new();
    for m in ModelIndex::enumerate(N_COVARIATES)? {
        model_frequencies.insert(model_label(&m), 0.0);
    }
    for c in chains {
        for s in &c.states {
            *model_frequencies.get_mut(&model_label(&s.model)).unwrap() += 1.0;
        }
    }
    for v in model_frequencies.values_mut() {
        *v /= total as f64;
    }

    let imputation_rmse = data.and_then(|d| imputation_rmse(chains, d));

    Ok(Summary {
        parameters,
        model_frequencies,
        imputation_rmse,
        n_samples: total,
        n_chains: chains.len(),
    })
}

/// RMSE of posterior-mean imputations against the masked true values.
/// Returns `None` when nothing is masked or imputations were not stored.
pub fn imputation_rmse(chains: &[Chain], data: &Dataset) -> Option<f64> {
    let missing = data.missing_indices();
    if missing.is_empty() {
        return None;
    }
    let mut sums = vec![0.0; missing.len()];
    let mut count = 0usize;
    for c in chains {
        for s in &c.states {
            if s.imputed_x2.len() != missing.len() {
                return None;
            }
            for (acc, &v) in sums.iter_mut().zip(&s.imputed_x2) {
                *acc += v;
            }
            count += 1;
        }
    }
    if count == 0 {
        return None;
    }
    let mse = missing
        .iter()
        .enumerate()
        .map(|(j, &i)| {
            let post_mean = sums[j] / count as f64;
            (post_mean - data.x2_true()[i]).powi(2)
        })
        .sum::<f64>()
        / missing.len() as f64;
    Some(mse.sqrt())
}

/// Kernel bandwidth choice for [`density_1d`].
#[derive(Debug, Clone, Copy)]
pub enum Bandwidth {
    /// Silverman's rule: `1.06 * sd * n^(-1/5)`.
    Auto,
    Fixed(f64),
}

/// Gaussian KDE evaluated on an equispaced grid spanning
/// `[min - 3h, max + 3h]`.
pub fn density_1d(
    samples: &[f64],
    grid_size: usize,
    bandwidth: Bandwidth,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData("KDE needs at least 2 samples".into()));
    }
    if grid_size < 2 {
        return Err(Error::InvalidParameter("KDE grid needs >= 2 points".into()));
    }
    let sd = sample_variance(samples).sqrt();
    let h = match bandwidth {
        Bandwidth::Auto => {
            if sd <= 0.0 {
                return Err(Error::DegenerateScale(
                    "KDE bandwidth undefined for constant samples".into(),
                ));
            }
            1.06 * sd * (samples.len() as f64).powf(-0.2)
        }
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => h,
        Bandwidth::Fixed(h) => {
            return Err(Error::InvalidParameter(format!(
                "bandwidth must be positive and finite, got {h}"
            )))
        }
    };
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let step = (hi - lo) / (grid_size as f64 - 1.0);
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let grid: Vec<f64> = (0..grid_size).map(|i| lo + i as f64 * step).collect();
    let dens: Vec<f64> = grid
        .iter()
        .map(|&x| {
            norm * samples
                .iter()
                .map(|&s| (-0.5 * ((x - s) / h).powi(2)).exp())
                .sum::<f64>()
        })
        .collect();
    Ok((grid, dens))
}

/// Write one parameter's draws as `iter,chain,value` CSV across chains.
pub fn trace_export<W: Write>(chains: &[Chain], name: &str, mut w: W) -> Result<()> {
    // validate the name up front so nothing is written on error
    for c in chains {
        extract(c, name)?;
    }
    writeln!(w, "iter,chain,value")?;
    for (ci, c) in chains.iter().enumerate() {
        let vals = extract(c, name)?;
        for (idx, v) in vals.iter().enumerate() {
            writeln!(w, "{},{},{}", c.iteration_of(idx), ci, v)?;
        }
    }
    Ok(())
}

const SVG_W: f64 = 800.0;
const SVG_H: f64 = 400.0;
const MARGIN: f64 = 45.0;

fn scale(v: f64, lo: f64, hi: f64, out_lo: f64, out_hi: f64) -> f64 {
    if hi <= lo {
        return (out_lo + out_hi) / 2.0;
    }
    out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Minimal multi-series line plot (used for traces and densities).
pub fn svg_lines(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" \
         viewBox=\"0 0 {SVG_W} {SVG_H}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"14\">{}</text>\n",
        SVG_W / 2.0,
        xml_escape(title)
    );
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| {
                format!(
                    "{:.2},{:.2}",
                    scale(x, x0, x1, MARGIN, SVG_W - MARGIN),
                    scale(y, y0, y1, SVG_H - MARGIN, MARGIN)
                )
            })
            .collect();
        s.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             fill=\"{color}\">{}</text>\n",
            SVG_W - MARGIN + 4.0,
            MARGIN + 14.0 * i as f64,
            xml_escape(label)
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// Minimal bar plot (used for model frequencies).
pub fn svg_bars(title: &str, bars: &[(String, f64)]) -> String {
    let max = bars.iter().map(|b| b.1).fold(0.0f64, f64::max).max(1e-12);
    let slot = (SVG_W - 2.0 * MARGIN) / bars.len() as f64;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" \
         viewBox=\"0 0 {SVG_W} {SVG_H}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"14\">{}</text>\n",
        SVG_W / 2.0,
        xml_escape(title)
    );
    for (i, (label, v)) in bars.iter().enumerate() {
        let h = (v / max) * (SVG_H - 2.0 * MARGIN);
        let x = MARGIN + i as f64 * slot + 0.15 * slot;
        s.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#1f77b4\"/>\n",
            x,
            SVG_H - MARGIN - h,
            0.7 * slot,
            h
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"11\">{} ({:.4})</text>\n",
            x + 0.35 * slot,
            SVG_H - MARGIN + 16.0,
            xml_escape(label),
            v
        ));
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
