//! Low-dose projection noise: Beer-Lambert attenuation, Poisson photon
//! counting with optional Gaussian electronic noise, and the log transform
//! back to line integrals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{fmt_f64, CsvTable, Grid2D, GridKind};
use crate::rng::RngStream;

pub const DEFAULT_FLOOR_COUNTS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Incident photons per detector bin.
    pub i0: f64,
    /// Electronic noise standard deviation, in photon counts.
    pub gaussian_sigma: f64,
    /// Counts below this are floored before the log.
    pub floor_counts: f64,
}

impl NoiseModel {
    pub fn poisson(i0: f64) -> Self {
        Self {
            i0,
            gaussian_sigma: 0.0,
            floor_counts: DEFAULT_FLOOR_COUNTS,
        }
    }

    /// `dose` is the fraction of the full-dose flux `i0_full`.
    pub fn from_dose(i0_full: f64, dose: f64, gaussian_sigma: f64) -> Self {
        Self {
            i0: i0_full * dose,
            gaussian_sigma,
            floor_counts: DEFAULT_FLOOR_COUNTS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.i0 > 0.0) || !self.i0.is_finite() {
            return Err(Error::Config(format!(
                "noise: i0 must be > 0, got {}",
                self.i0
            )));
        }
        if !(self.gaussian_sigma >= 0.0) || !self.gaussian_sigma.is_finite() {
            return Err(Error::Config(format!(
                "noise: gaussian_sigma must be >= 0, got {}",
                self.gaussian_sigma
            )));
        }
        if !(self.floor_counts > 0.0 && self.floor_counts <= 1.0) {
            return Err(Error::Config(format!(
                "noise: floor_counts must be in (0, 1], got {}",
                self.floor_counts
            )));
        }
        Ok(())
    }

    /// One noisy log-domain observation of a bin with clean value `p`.
    /// Always consumes one Poisson draw followed by one Gaussian draw.
    #[inline]
    pub fn observe(&self, p: f64, rng: &mut RngStream) -> f64 {
        let lambda = self.i0 * (-p).exp();
        let counts = rng.poisson(lambda);
        let electronic = self.gaussian_sigma * rng.standard_normal();
        -((counts + electronic).max(self.floor_counts) / self.i0).ln()
    }
}

/// Simulates a low-dose measurement of a clean sinogram, bins in row-major order.
pub fn simulate_ldct(clean: &Grid2D, model: &NoiseModel, rng: &mut RngStream) -> Result<Grid2D> {
    model.validate()?;
    if let Some(i) = clean.data().iter().position(|&p| p < 0.0) {
        return Err(Error::invalid(format!(
            "clean projections must be non-negative, found {} at index {i}",
            clean.data()[i]
        )));
    }
    let data = clean
        .data()
        .iter()
        .map(|&p| model.observe(p, rng))
        .collect();
    Grid2D::new(clean.rows(), clean.cols(), GridKind::Sinogram, data)
}

/// First-order variance of a log-domain observation: `exp(p) / i0`.
pub fn predicted_variance(p: f64, i0: f64) -> f64 {
    p.exp() / i0
}

/// Local SNR `p * sqrt(i0) * exp(-p/2)`, maximal at `p = 2`.
pub fn local_snr(p: f64, i0: f64) -> f64 {
    p * i0.sqrt() * (-p / 2.0).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceRow {
    pub p: f64,
    pub empirical_var: f64,
    pub predicted_var: f64,
}

/// Monte-Carlo sample variance of repeated pure-Poisson observations of
/// constant bins, next to the first-order prediction.
pub fn variance_experiment(
    p_values: &[f64],
    i0: f64,
    reps: usize,
    rng: &mut RngStream,
) -> Result<Vec<VarianceRow>> {
    if reps < 1000 {
        return Err(Error::invalid(format!(
            "variance experiment needs reps >= 1000, got {reps}"
        )));
    }
    let model = NoiseModel::poisson(i0);
    model.validate()?;
    Ok(p_values
        .iter()
        .map(|&p| {
            let draws: Vec<f64> = (0..reps).map(|_| model.observe(p, rng)).collect();
            VarianceRow {
                p,
                empirical_var: sample_variance(&draws),
                predicted_var: predicted_variance(p, i0),
            }
        })
        .collect())
}

pub fn variance_table(rows: &[VarianceRow]) -> CsvTable {
    let mut t = CsvTable::new(["p", "empirical_var", "predicted_var"]);
    for r in rows {
        t.push([
            fmt_f64(r.p),
            fmt_f64(r.empirical_var),
            fmt_f64(r.predicted_var),
        ]);
    }
    t
}

/// Least-squares fit of `ln(empirical_var) = slope * p + intercept`.
pub fn fit_log_variance(rows: &[VarianceRow]) -> (f64, f64) {
    let n = rows.len() as f64;
    let mx = rows.iter().map(|r| r.p).sum::<f64>() / n;
    let my = rows.iter().map(|r| r.empirical_var.ln()).sum::<f64>() / n;
    let sxy: f64 = rows
        .iter()
        .map(|r| (r.p - mx) * (r.empirical_var.ln() - my))
        .sum();
    let sxx: f64 = rows.iter().map(|r| (r.p - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

pub(crate) fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}
