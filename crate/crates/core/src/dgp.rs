//! Data-generating process: the true regression model, the two censoring
//! mechanisms, and the dataset container every stage transforms.
//!
//! The true model draws `x1 ~ N(0,1)`, `x2 | x1` exponential with parameter
//! `e^{-x1}` (rate by default, mean selectable), and
//! `y = beta1*x1 + beta2*x2 + eps` with `eps ~ N(0, sigma2)`.
//!
//! True `x2` values are retained under the missingness mask so diagnostics
//! can score imputations against the truth. Estimators must only read `x2`
//! through [`Dataset::observed_x2`] / [`Dataset::completed_x2`].

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastic::RngStream;

/// True regression parameters: `y = beta[0]*x1 + beta[1]*x2 + eps`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Truth {
    pub beta: [f64; 2],
    pub sigma2: f64,
}

impl Truth {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite())
            || self.beta.iter().any(|b| !b.is_finite())
        {
            return Err(Error::InvalidParameter(format!(
                "truth must have finite beta and positive sigma2, got {self:?}"
            )));
        }
        Ok(())
    }
}

impl Default for Truth {
    fn default() -> Self {
        Truth {
            beta: [0.0, 1.0],
            sigma2: 1.0,
        }
    }
}

/// How the exponential parameter `e^{-x1}` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ExpParam {
    /// `x2 | x1 ~ Exp(rate = e^{-x1})`, so `E[x2 | x1] = e^{x1}`.
    #[default]
    Rate,
    /// `x2 | x1 ~ Exp(mean = e^{-x1})`, so `E[x2 | x1] = e^{-x1}`.
    Mean,
}

/// Censoring rule deciding which `x2` entries are masked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Mechanism {
    /// Censor `x2` iff `x1 < c`.
    Threshold { c: f64 },
    /// Censor `x2` iff `|x1 - y| < w`.
    Band { w: f64 },
    /// No censoring.
    None,
}

impl Mechanism {
    pub fn threshold() -> Self {
        Mechanism::Threshold { c: 0.0 }
    }

    pub fn band() -> Self {
        Mechanism::Band { w: 0.2 }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Mechanism::Band { w } if *w <= 0.0 => Err(Error::InvalidParameter(format!(
                "band width must be positive, got {w}"
            ))),
            _ => Ok(()),
        }
    }

    /// Whether a row is censored under this mechanism.
    pub fn censors(&self, x1: f64, y: f64) -> bool {
        match self {
            Mechanism::Threshold { c } => x1 < *c,
            Mechanism::Band { w } => (x1 - y).abs() < *w,
            Mechanism::None => false,
        }
    }
}

/// Covariates, response, and the missingness mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x1: Vec<f64>,
    x2: Vec<f64>,
    x2_observed: Vec<bool>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(x1: Vec<f64>, x2: Vec<f64>, x2_observed: Vec<bool>, y: Vec<f64>) -> Result<Self> {
        let n = x1.len();
        if n == 0 {
            return Err(Error::InvalidParameter("dataset must be non-empty".into()));
        }
        if x2.len() != n || x2_observed.len() != n || y.len() != n {
            return Err(Error::InvalidParameter(
                "dataset columns must have equal length".into(),
            ));
        }
        Ok(Dataset {
            x1,
            x2,
            x2_observed,
            y,
        })
    }

    pub fn n(&self) -> usize {
        self.x1.len()
    }

    pub fn x1(&self) -> &[f64] {
        &self.x1
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x2_observed(&self) -> &[bool] {
        &self.x2_observed
    }

    /// Observed-view accessor: `None` where `x2` is masked.
    pub fn observed_x2(&self, i: usize) -> Option<f64> {
        if self.x2_observed[i] {
            Some(self.x2[i])
        } else {
            None
        }
    }

    /// The stored true `x2`, masked entries included. For scoring
    /// imputations only; estimators must not read this.
    pub fn x2_true(&self) -> &[f64] {
        &self.x2
    }

    /// Row indices with `x2` masked, in row order.
    pub fn missing_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.x2_observed[i]).collect()
    }

    pub fn n_missing(&self) -> usize {
        self.x2_observed.iter().filter(|&&o| !o).count()
    }

    /// Full `x2` column with masked entries replaced by `imputed`
    /// (one value per masked row, in row order).
    pub fn completed_x2(&self, imputed: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n());
        let mut j = 0;
        for i in 0..self.n() {
            if self.x2_observed[i] {
                out.push(self.x2[i]);
            } else {
                out.push(imputed[j]);
                j += 1;
            }
        }
        debug_assert_eq!(j, imputed.len());
        out
    }

    /// 64-bit content hash (FNV-1a over the raw bytes of all columns).
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for i in 0..self.n() {
            eat(&self.x1[i].to_bits().to_le_bytes());
            eat(&self.x2[i].to_bits().to_le_bytes());
            eat(&[self.x2_observed[i] as u8]);
            eat(&self.y[i].to_bits().to_le_bytes());
        }
        h
    }

    /// Export the observed view as CSV: header `x1,x2,x2_observed,y`,
    /// masked `x2` written as an empty field, booleans as 0/1.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x1,x2,x2_observed,y")?;
        for i in 0..self.n() {
            if self.x2_observed[i] {
                writeln!(w, "{},{},1,{}", self.x1[i], self.x2[i], self.y[i])?;
            } else {
                writeln!(w, "{},,0,{}", self.x1[i], self.y[i])?;
            }
        }
        Ok(())
    }

    /// Import a dataset from the CSV schema written by [`Dataset::write_csv`].
    /// Masked rows get a placeholder true value of 0.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let reader = BufReader::new(r);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidInput("empty CSV".into()))??;
        if header.trim() != "x1,x2,x2_observed,y" {
            return Err(Error::InvalidInput(format!(
                "unexpected CSV header: {header}"
            )));
        }
        let (mut x1, mut x2, mut obs, mut y) = (vec![], vec![], vec![], vec![]);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::InvalidInput(format!(
                    "line {}: expected 4 fields, got {}",
                    lineno + 2,
                    fields.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::InvalidInput(format!("line {}: bad number {s}", lineno + 2)))
            };
            x1.push(parse(fields[0])?);
            let observed = match fields[2].trim() {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::InvalidInput(format!(
                        "line {}: bad x2_observed flag {other}",
                        lineno + 2
                    )))
                }
            };
            x2.push(if fields[1].is_empty() {
                0.0
            } else {
                parse(fields[1])?
            });
            obs.push(observed);
            y.push(parse(fields[3])?);
        }
        Dataset::new(x1, x2, obs, y)
    }
}

/// Generate a complete dataset (no masking) from the true model.
pub fn generate_complete(
    n: usize,
    truth: &Truth,
    exp_param: ExpParam,
    rng: &mut RngStream,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if truth.sigma2 < 0.0 || !truth.sigma2.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sigma2 must be finite and nonnegative, got {}",
            truth.sigma2
        )));
    }
    let noise_sd = truth.sigma2.sqrt();
    let mut x1 = Vec::with_capacity(n);
    let mut x2 = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let a = rng.normal(0.0, 1.0)?;
        let rate = match exp_param {
            ExpParam::Rate => (-a).exp(),
            ExpParam::Mean => a.exp(),
        };
        let b = rng.exponential(rate)?;
        let eps = rng.normal(0.0, noise_sd)?;
        x1.push(a);
        x2.push(b);
        y.push(truth.beta[0] * a + truth.beta[1] * b + eps);
    }
    Dataset::new(x1, x2, vec![true; n], y)
}

/// Copy the dataset with `x2_observed` cleared exactly where the
/// mechanism's predicate holds. `x1`, `x2`, `y` are unchanged.
pub fn apply_censoring(data: &Dataset, mech: &Mechanism) -> Result<Dataset> {
    mech.validate()?;
    let mut out = data.clone();
    for i in 0..out.n() {
        if mech.censors(out.x1[i], out.y[i]) {
            out.x2_observed[i] = false;
        }
    }
    Ok(out)
}

/// Fraction of rows with `x2` masked.
pub fn missing_fraction(data: &Dataset) -> f64 {
    data.n_missing() as f64 / data.n() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        Dataset::new(
            vec![-1.0, 0.5, 1.0, 1.0],
            vec![0.3, 0.7, 2.0, 1.5],
            vec![true; 4],
            vec![0.1, 0.9, 1.1, 1.3],
        )
        .unwrap()
    }

    #[test]
    fn noiseless_case_y_equals_x2() {
        let truth = Truth {
            beta: [0.0, 1.0],
            sigma2: 0.0,
        };
        let mut rng = RngStream::new(5, 0);
        let d = generate_complete(100, &truth, ExpParam::Rate, &mut rng).unwrap();
        for i in 0..d.n() {
            assert_eq!(d.y()[i], d.x2_true()[i]);
        }
    }

    #[test]
    fn zero_n_rejected() {
        let mut rng = RngStream::new(5, 0);
        assert!(generate_complete(0, &Truth::default(), ExpParam::Rate, &mut rng).is_err());
    }

    #[test]
    fn x2_mean_matches_lognormal_mixture_moment() {
        let mut rng = RngStream::new(23, 0);
        let d = generate_complete(1_000_000, &Truth::default(), ExpParam::Rate, &mut rng).unwrap();
        let mean_x2: f64 = d.x2_true().iter().sum::<f64>() / d.n() as f64;
        let expected = (0.5_f64).exp(); // E[e^{x1}] for x1 ~ N(0,1)
        assert!((mean_x2 - expected).abs() <= 0.02, "mean x2 {mean_x2}");
        let mean_x1: f64 = d.x1().iter().sum::<f64>() / d.n() as f64;
        assert!(mean_x1.abs() <= 0.004, "mean x1 {mean_x1}");
        assert!(d.x2_true().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn threshold_predicate_direct() {
        let d = small();
        let c = apply_censoring(&d, &Mechanism::threshold()).unwrap();
        assert_eq!(c.x2_observed(), &[false, true, true, true]);
    }

    #[test]
    fn band_predicate_direct() {
        let d = Dataset::new(
            vec![1.0, 1.0],
            vec![0.0, 0.0],
            vec![true, true],
            vec![1.1, 1.3],
        )
        .unwrap();
        let c = apply_censoring(&d, &Mechanism::band()).unwrap();
        assert_eq!(c.x2_observed(), &[false, true]);
    }

    #[test]
    fn band_boundary_is_strict() {
        // x1 = 0 makes |x1 - y| bit-exact against w = 0.2
        let d = Dataset::new(vec![0.0], vec![0.0], vec![true], vec![0.2]).unwrap();
        let c = apply_censoring(&d, &Mechanism::band()).unwrap();
        assert!(c.x2_observed()[0], "|x1-y| == w must stay observed");
        let d2 = Dataset::new(vec![0.0], vec![0.0], vec![true], vec![0.0]).unwrap();
        let c2 = apply_censoring(&d2, &Mechanism::threshold()).unwrap();
        assert!(c2.x2_observed()[0], "x1 == c must stay observed");
    }

    #[test]
    fn mechanism_none_is_identity() {
        let d = small();
        let c = apply_censoring(&d, &Mechanism::None).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn censoring_never_alters_values() {
        let mut rng = RngStream::new(2, 0);
        let d = generate_complete(500, &Truth::default(), ExpParam::Rate, &mut rng).unwrap();
        let c = apply_censoring(&d, &Mechanism::band()).unwrap();
        assert_eq!(c.x1(), d.x1());
        assert_eq!(c.x2_true(), d.x2_true());
        assert_eq!(c.y(), d.y());
    }

    #[test]
    fn threshold_mask_ignores_y() {
        let mut rng = RngStream::new(9, 0);
        let d = generate_complete(300, &Truth::default(), ExpParam::Rate, &mut rng).unwrap();
        let mut y_perm = d.y().to_vec();
        y_perm.rotate_left(7);
        let d2 = Dataset::new(
            d.x1().to_vec(),
            d.x2_true().to_vec(),
            vec![true; d.n()],
            y_perm,
        )
        .unwrap();
        let m1 = apply_censoring(&d, &Mechanism::threshold()).unwrap();
        let m2 = apply_censoring(&d2, &Mechanism::threshold()).unwrap();
        assert_eq!(m1.x2_observed(), m2.x2_observed());
    }

    #[test]
    fn band_mask_recomputable_from_observables() {
        let mut rng = RngStream::new(10, 0);
        let d = generate_complete(300, &Truth::default(), ExpParam::Rate, &mut rng).unwrap();
        let c = apply_censoring(&d, &Mechanism::band()).unwrap();
        for i in 0..c.n() {
            let predicted = (c.x1()[i] - c.y()[i]).abs() < 0.2;
            assert_eq!(!c.x2_observed()[i], predicted);
        }
    }

    #[test]
    fn missing_fraction_threshold_half() {
        let mut rng = RngStream::new(31, 0);
        let d = generate_complete(100_000, &Truth::default(), ExpParam::Rate, &mut rng).unwrap();
        assert_eq!(missing_fraction(&d), 0.0);
        let c = apply_censoring(&d, &Mechanism::threshold()).unwrap();
        assert!((missing_fraction(&c) - 0.5).abs() <= 0.01);
    }

    #[test]
    fn missing_fraction_band_matches_registered_constant() {
        let mut rng = RngStream::new(32, 0);
        let d = generate_complete(100_000, &Truth::default(), ExpParam::Rate, &mut rng).unwrap();
        let c = apply_censoring(&d, &Mechanism::band()).unwrap();
        assert!(
            (missing_fraction(&c) - crate::oracle::BAND_MISSING_RATE_RATE).abs() <= 0.01,
            "band missing rate {}",
            missing_fraction(&c)
        );
    }

    #[test]
    fn csv_round_trip() {
        let d = small();
        let c = apply_censoring(&d, &Mechanism::threshold()).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(&buf[..]).unwrap();
        assert_eq!(back.x1(), c.x1());
        assert_eq!(back.y(), c.y());
        assert_eq!(back.x2_observed(), c.x2_observed());
        for i in 0..c.n() {
            assert_eq!(back.observed_x2(i), c.observed_x2(i));
        }
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(Dataset::read_csv("nope".as_bytes()).is_err());
        assert!(Dataset::read_csv("x1,x2,x2_observed,y\n1,2,maybe,3\n".as_bytes()).is_err());
    }
}
