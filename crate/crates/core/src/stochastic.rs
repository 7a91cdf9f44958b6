//! Seedable random number streams and the distribution samplers used by
//! every other module.
//!
//! A [`RngStream`] is identified by a `(seed, stream_id)` pair. The same
//! pair reproduces the identical draw sequence bit-for-bit; distinct stream
//! ids select independent ChaCha streams, so replicates and chains can run
//! in parallel without draw-order coupling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

/// A deterministic, single-owner random number stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Draw from `N(mean, sd^2)`. `sd = 0` returns `mean` exactly.
    pub fn normal(&mut self, mean: f64, sd: f64) -> Result<f64> {
        if !mean.is_finite() || !sd.is_finite() || sd < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "normal(mean={mean}, sd={sd})"
            )));
        }
        if sd == 0.0 {
            return Ok(mean);
        }
        Ok(mean + sd * self.standard_normal())
    }

    /// Draw from `Exponential(rate)` (mean `1/rate`) by inverting the CDF,
    /// so the draw is a deterministic function of one uniform.
    pub fn exponential(&mut self, rate: f64) -> Result<f64> {
        if !rate.is_finite() || rate <= 0.0 {
            return Err(Error::InvalidParameter(format!("exponential(rate={rate})")));
        }
        let u = loop {
            let u = self.uniform();
            if u > 0.0 {
                break u;
            }
        };
        Ok(exponential_from_uniform(rate, u))
    }

    /// Draw from `Gamma(shape, rate)`.
    pub fn gamma(&mut self, shape: f64, rate: f64) -> Result<f64> {
        if !(shape > 0.0 && shape.is_finite() && rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma(shape={shape}, rate={rate})"
            )));
        }
        let dist = Gamma::new(shape, 1.0 / rate)
            .map_err(|e| Error::InvalidParameter(format!("gamma: {e}")))?;
        Ok(dist.sample(&mut self.rng))
    }

    /// Draw `X` with `1/X ~ Gamma(shape, rate = scale)`.
    pub fn inverse_gamma(&mut self, shape: f64, scale: f64) -> Result<f64> {
        if !(shape > 0.0 && shape.is_finite() && scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "inverse_gamma(shape={shape}, scale={scale})"
            )));
        }
        let g = self.gamma(shape, scale)?;
        Ok(1.0 / g)
    }

    /// Draw from a multivariate normal `N(mean, covariance)` as
    /// `mean + L z` with `L` a PSD Cholesky-type factor.
    pub fn mvn(&mut self, mean: &DVector<f64>, covariance: &DMatrix<f64>) -> Result<DVector<f64>> {
        let k = mean.len();
        if covariance.nrows() != k || covariance.ncols() != k {
            return Err(Error::InvalidParameter(format!(
                "mvn: mean has length {k} but covariance is {}x{}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        let l = cholesky_psd(covariance)?;
        let z = DVector::from_fn(k, |_, _| self.standard_normal());
        Ok(mean + l * z)
    }
}

/// Inverse-CDF exponential: `-ln(u) / rate` for `u` in `(0, 1]`.
pub fn exponential_from_uniform(rate: f64, u: f64) -> f64 {
    -u.ln() / rate
}

/// Cholesky factor of a symmetric positive semidefinite matrix.
///
/// Semidefinite directions (pivot within `1e-10 * max diagonal` of zero)
/// get a zero column; pivots below `-tol` are a numerical error.
pub(crate) fn cholesky_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::InvalidParameter("cholesky: matrix not square".into()));
    }
    let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0_f64, f64::max);
    let sym_tol = 1e-8 * max_diag.max(1e-300);
    for i in 0..n {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > sym_tol {
                return Err(Error::InvalidParameter(
                    "cholesky: matrix not symmetric".into(),
                ));
            }
        }
    }
    let tol = 1e-10 * max_diag;
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d > tol {
            l[(j, j)] = d.sqrt();
        } else if d >= -tol {
            l[(j, j)] = 0.0;
        } else {
            return Err(Error::Numerical(format!(
                "cholesky: negative pivot {d} at column {j}"
            )));
        }
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = if l[(j, j)] > 0.0 { s / l[(j, j)] } else { 0.0 };
        }
    }
    Ok(l)
}
