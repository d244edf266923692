//! Full-reference (PSNR, RMSE, SSIM) and reference-free (SNR, CNR, NPS)
//! image-quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{fmt_f64, CsvTable, Grid2D};
use crate::spectrum::{centered_index, Dft2d};

pub const HU_WINDOW: (f64, f64) = (-1024.0, 3072.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    /// Dynamic range `L`; `None` means `max - min` of the reference.
    pub data_range: Option<f64>,
    /// Both images are clipped to this interval first when set.
    pub window: Option<(f64, f64)>,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            data_range: None,
            window: None,
            ssim_window: 11,
            ssim_sigma: 1.5,
            ssim_k1: 0.01,
            ssim_k2: 0.03,
        }
    }
}

impl MetricConfig {
    /// Clinical mode: `[-1024, 3072]` HU window with matching data range.
    pub fn hounsfield() -> Self {
        Self {
            data_range: Some(HU_WINDOW.1 - HU_WINDOW.0),
            window: Some(HU_WINDOW),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.data_range {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::Config(format!(
                    "metrics: data_range must be > 0, got {l}"
                )));
            }
        }
        if let Some((lo, hi)) = self.window {
            if !(hi > lo) {
                return Err(Error::Config(format!(
                    "metrics: window_hi ({hi}) must exceed window_lo ({lo})"
                )));
            }
        }
        if self.ssim_window == 0 || self.ssim_window.is_multiple_of(2) {
            return Err(Error::Config(
                "metrics: ssim_window must be odd and positive".into(),
            ));
        }
        if !(self.ssim_sigma > 0.0) {
            return Err(Error::Config("metrics: ssim_sigma must be > 0".into()));
        }
        Ok(())
    }

    fn prepare(&self, reference: &Grid2D, test: &Grid2D) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        self.validate()?;
        reference.ensure_same_shape(test)?;
        let clip = |g: &Grid2D| -> Vec<f64> {
            match self.window {
                Some((lo, hi)) => g.data().iter().map(|v| v.clamp(lo, hi)).collect(),
                None => g.data().to_vec(),
            }
        };
        let (a, b) = (clip(reference), clip(test));
        let range = match self.data_range {
            Some(l) => l,
            None => {
                let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let min = a.iter().copied().fold(f64::INFINITY, f64::min);
                if !(max > min) {
                    return Err(Error::invalid(
                        "automatic data range of a constant reference is zero",
                    ));
                }
                max - min
            }
        };
        Ok((a, b, range))
    }
}

fn rmse_of(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

pub fn rmse(reference: &Grid2D, test: &Grid2D, cfg: &MetricConfig) -> Result<f64> {
    let (a, b, _) = cfg.prepare(reference, test)?;
    Ok(rmse_of(&a, &b))
}

/// `20 log10(L / rmse)`; identical inputs give `f64::INFINITY`.
pub fn psnr(reference: &Grid2D, test: &Grid2D, cfg: &MetricConfig) -> Result<f64> {
    let (a, b, range) = cfg.prepare(reference, test)?;
    let e = rmse_of(&a, &b);
    Ok(if e == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (range / e).log10()
    })
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let k: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering: output is `(rows - m + 1) x (cols - m + 1)`.
fn filter_valid(x: &[f64], rows: usize, cols: usize, k: &[f64]) -> Vec<f64> {
    let m = k.len();
    let (orows, ocols) = (rows - m + 1, cols - m + 1);
    let mut tmp = vec![0.0; rows * ocols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        for c in 0..ocols {
            tmp[r * ocols + c] = k.iter().zip(&row[c..c + m]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; orows * ocols];
    for r in 0..orows {
        for c in 0..ocols {
            out[r * ocols + c] = (0..m).map(|i| k[i] * tmp[(r + i) * ocols + c]).sum();
        }
    }
    out
}

/// Mean local SSIM with a Gaussian window over positions where the window
/// fits entirely inside the image.
pub fn ssim(reference: &Grid2D, test: &Grid2D, cfg: &MetricConfig) -> Result<f64> {
    let (a, b, range) = cfg.prepare(reference, test)?;
    let (rows, cols) = reference.shape();
    let m = cfg.ssim_window;
    if rows < m || cols < m {
        return Err(Error::invalid(format!(
            "image {rows}x{cols} is smaller than the {m}x{m} SSIM window"
        )));
    }
    let k = gaussian_kernel(m, cfg.ssim_sigma);
    let prod = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(x, y)| x * y).collect() };
    let mu_a = filter_valid(&a, rows, cols, &k);
    let mu_b = filter_valid(&b, rows, cols, &k);
    let aa = filter_valid(&prod(&a, &a), rows, cols, &k);
    let bb = filter_valid(&prod(&b, &b), rows, cols, &k);
    let ab = filter_valid(&prod(&a, &b), rows, cols, &k);
    let c1 = (cfg.ssim_k1 * range).powi(2);
    let c2 = (cfg.ssim_k2 * range).powi(2);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// Axis-aligned rectangle `rows x cols` with top-left corner `(row0, col0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Roi {
    pub fn new(row0: usize, col0: usize, rows: usize, cols: usize) -> Self {
        Self {
            row0,
            col0,
            rows,
            cols,
        }
    }

    pub fn check(&self, image: &Grid2D) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::invalid("ROI is empty"));
        }
        if self.row0 + self.rows > image.rows() || self.col0 + self.cols > image.cols() {
            return Err(Error::invalid(format!(
                "ROI {self:?} exceeds image {:?}",
                image.shape()
            )));
        }
        Ok(())
    }

    pub fn overlaps(&self, other: &Roi) -> bool {
        self.row0 < other.row0 + other.rows
            && other.row0 < self.row0 + self.rows
            && self.col0 < other.col0 + other.cols
            && other.col0 < self.col0 + self.cols
    }

    pub fn values(&self, image: &Grid2D) -> Result<Vec<f64>> {
        self.check(image)?;
        Ok((self.row0..self.row0 + self.rows)
            .flat_map(|r| {
                image.row(r)[self.col0..self.col0 + self.cols]
                    .iter()
                    .copied()
            })
            .collect())
    }

    pub fn extract(&self, image: &Grid2D) -> Result<Grid2D> {
        Grid2D::new(self.rows, self.cols, image.kind(), self.values(image)?)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `(mean(roi) / std(bg), |mean(roi) - mean(bg)| / std(bg))`, population std.
pub fn snr_cnr(image: &Grid2D, roi: &Roi, background: &Roi) -> Result<(f64, f64)> {
    if roi.overlaps(background) {
        return Err(Error::invalid("signal and background ROIs overlap"));
    }
    let (m_roi, _) = mean_std(&roi.values(image)?);
    let (m_bg, s_bg) = mean_std(&background.values(image)?);
    if s_bg == 0.0 {
        return Err(Error::Numeric(
            "background standard deviation is zero".into(),
        ));
    }
    Ok((m_roi / s_bg, (m_roi - m_bg).abs() / s_bg))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NpsBin {
    /// Radial spatial frequency, cycles per unit length.
    pub freq: f64,
    pub nps: f64,
}

/// 2D noise power spectrum averaged over ROIs, `|DFT|^2 * px^2 / (rows cols)`
/// per bin, then averaged radially in rings one frequency sample wide.
pub fn nps_2d(rois: &[Grid2D], pixel_size: f64) -> Result<Grid2D> {
    let first = rois
        .first()
        .ok_or_else(|| Error::invalid("NPS needs at least one ROI"))?;
    if !(pixel_size > 0.0) {
        return Err(Error::invalid(format!(
            "pixel size must be > 0, got {pixel_size}"
        )));
    }
    let (rows, cols) = first.shape();
    let dft = Dft2d::new(rows, cols);
    let mut acc = vec![0.0; rows * cols];
    for roi in rois {
        first.ensure_same_shape(roi)?;
        let mean = roi.data().iter().sum::<f64>() / roi.len() as f64;
        let centered: Vec<f64> = roi.data().iter().map(|v| v - mean).collect();
        // The transform is unitary, so |F|^2 already carries the 1/(rows cols).
        for (a, z) in acc.iter_mut().zip(dft.forward_real(&centered)) {
            *a += z.norm_sqr() * pixel_size * pixel_size;
        }
    }
    let n = rois.len() as f64;
    Grid2D::new(
        rows,
        cols,
        first.kind(),
        acc.into_iter().map(|v| v / n).collect(),
    )
}

pub fn nps(rois: &[Grid2D], pixel_size: f64) -> Result<Vec<NpsBin>> {
    let spec = nps_2d(rois, pixel_size)?;
    let (rows, cols) = spec.shape();
    let df = 1.0 / (rows.min(cols) as f64 * pixel_size);
    let n_bins = ((0.5 / pixel_size) * std::f64::consts::SQRT_2 / df).round() as usize + 1;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for u in 0..rows {
        let fu = centered_index(u, rows) as f64 / (rows as f64 * pixel_size);
        for v in 0..cols {
            let fv = centered_index(v, cols) as f64 / (cols as f64 * pixel_size);
            let bin = ((fu * fu + fv * fv).sqrt() / df).round() as usize;
            sums[bin] += spec.get(u, v);
            counts[bin] += 1;
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .enumerate()
        .filter(|(_, (_, &c))| c > 0)
        .map(|(i, (&s, &c))| NpsBin {
            freq: i as f64 * df,
            nps: s / c as f64,
        })
        .collect())
}

pub fn nps_table(bins: &[NpsBin]) -> CsvTable {
    let mut t = CsvTable::new(["freq", "nps"]);
    for b in bins {
        t.push([fmt_f64(b.freq), fmt_f64(b.nps)]);
    }
    t
}

/// Full-reference metrics of one test image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub psnr: f64,
    pub ssim: f64,
    pub rmse: f64,
}

pub fn quality(reference: &Grid2D, test: &Grid2D, cfg: &MetricConfig) -> Result<QualityReport> {
    Ok(QualityReport {
        psnr: psnr(reference, test, cfg)?,
        ssim: ssim(reference, test, cfg)?,
        rmse: rmse(reference, test, cfg)?,
    })
}

/// `name,value` rows.
pub fn metrics_table<'a>(rows: impl IntoIterator<Item = (&'a str, f64)>) -> CsvTable {
    let mut t = CsvTable::new(["name", "value"]);
    for (name, value) in rows {
        t.push([name.to_string(), fmt_f64(value)]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridKind;
    use crate::rng::RngStream;

    fn constant(rows: usize, cols: usize, v: f64) -> Grid2D {
        Grid2D::new(rows, cols, GridKind::Image, vec![v; rows * cols]).unwrap()
    }

    fn texture(n: usize, seed: u64) -> Grid2D {
        let mut rng = RngStream::new(seed);
        Grid2D::from_fn(n, n, GridKind::Image, |_, _| rng.uniform_range(-1.0, 1.0)).unwrap()
    }

    #[test]
    fn psnr_and_rmse_arithmetic() {
        let cfg = MetricConfig {
            data_range: Some(4096.0),
            ..Default::default()
        };
        let p = psnr(&constant(8, 8, 0.0), &constant(8, 8, 10.0), &cfg).unwrap();
        assert!((p - 52.2472).abs() < 1e-3, "{p}");
        assert_eq!(
            psnr(&constant(8, 8, 1.0), &constant(8, 8, 1.0), &cfg).unwrap(),
            f64::INFINITY
        );
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(
            rmse(&constant(4, 4, 0.0), &constant(4, 4, 3.0), &cfg).unwrap(),
            3.0
        );
        let a = texture(8, 1);
        assert_eq!(rmse(&a, &a, &cfg).unwrap(), 0.0);
        let shifted = a.map(|v| v - 0.25).unwrap();
        assert!((rmse(&a, &shifted, &cfg).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn psnr_rmse_consistency_and_errors() {
        let cfg = MetricConfig::default();
        let a = texture(16, 2);
        let b = texture(16, 3);
        let e = rmse(&a, &b, &cfg).unwrap();
        let range = a.max() - a.min();
        assert_eq!(psnr(&a, &b, &cfg).unwrap(), 20.0 * (range / e).log10());
        assert!(psnr(&a, &texture(8, 3), &cfg).is_err());
        assert!(psnr(&constant(4, 4, 0.0), &a.map(|v| v).unwrap(), &cfg).is_err());
    }

    #[test]
    fn hounsfield_window_clips() {
        let cfg = MetricConfig::hounsfield();
        let a = constant(4, 4, 3072.0);
        let b = constant(4, 4, 5000.0);
        assert_eq!(psnr(&a, &b, &cfg).unwrap(), f64::INFINITY);
        assert!(MetricConfig {
            window: Some((1.0, 0.0)),
            ..cfg
        }
        .validate()
        .is_err());
    }

    #[test]
    fn ssim_properties() {
        let cfg = MetricConfig::default();
        let a = texture(24, 4);
        let b = texture(24, 5);
        assert!((ssim(&a, &a, &cfg).unwrap() - 1.0).abs() < 1e-12);
        // Checkerboard: every Gaussian window has (near) zero mean.
        let board = Grid2D::from_fn(24, 24, GridKind::Image, |r, c| {
            if (r + c) % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        })
        .unwrap();
        let neg = board.map(|v| -v).unwrap();
        assert!(
            ssim(
                &board,
                &neg,
                &MetricConfig {
                    data_range: Some(2.0),
                    ..cfg
                }
            )
            .unwrap()
                < 0.0
        );
        let ab = ssim(
            &a,
            &b,
            &MetricConfig {
                data_range: Some(2.0),
                ..cfg
            },
        )
        .unwrap();
        let ba = ssim(
            &b,
            &a,
            &MetricConfig {
                data_range: Some(2.0),
                ..cfg
            },
        )
        .unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ssim(&texture(8, 1), &texture(8, 2), &cfg).is_err());
    }

    /// Direct per-window evaluation with explicit weights.
    fn ssim_oracle(a: &Grid2D, b: &Grid2D, l: f64) -> f64 {
        let m = 11;
        let g: Vec<f64> = (0..m)
            .map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp())
            .collect();
        let s: f64 = g.iter().sum();
        let n = a.rows();
        let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
        let mut total = 0.0;
        let mut count = 0;
        for r in 0..=n - m {
            for c in 0..=n - m {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..m {
                    for j in 0..m {
                        let w = g[i] * g[j] / (s * s);
                        let (x, y) = (a.get(r + i, c + j), b.get(r + i, c + j));
                        ma += w * x;
                        mb += w * y;
                        saa += w * x * x;
                        sbb += w * y * y;
                        sab += w * x * y;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_affine_matches_oracle() {
        let a = texture(16, 6);
        let b = a.map(|v| 0.5 * v + 0.3).unwrap();
        let cfg = MetricConfig {
            data_range: Some(2.0),
            ..Default::default()
        };
        let got = ssim(&a, &b, &cfg).unwrap();
        assert!(got < 1.0);
        assert!((got - ssim_oracle(&a, &b, 2.0)).abs() < 1e-12);
    }

    #[test]
    fn snr_cnr_values() {
        let mut img = Grid2D::from_fn(20, 20, GridKind::Image, |r, c| {
            if r < 10 {
                100.0
            } else if (r + c) % 2 == 0 {
                10.0
            } else {
                -10.0
            }
        })
        .unwrap();
        let roi = Roi::new(0, 0, 10, 20);
        let bg = Roi::new(10, 0, 10, 20);
        let (snr, cnr) = snr_cnr(&img, &roi, &bg).unwrap();
        assert!((snr - 10.0).abs() < 1e-12 && (cnr - 10.0).abs() < 1e-12);
        assert!(snr_cnr(&img, &roi, &Roi::new(5, 0, 10, 20)).is_err());
        assert!(snr_cnr(&img, &bg, &roi).is_err());
        img = Grid2D::from_fn(20, 20, GridKind::Image, |r, c| {
            if (r + c) % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        })
        .unwrap();
        assert_eq!(snr_cnr(&img, &Roi::new(0, 0, 10, 20), &bg).unwrap().1, 0.0);
        assert!(Roi::new(15, 0, 10, 2).check(&img).is_err());
    }

    #[test]
    fn nps_of_zero_is_zero() {
        let bins = nps(&[constant(16, 16, 3.0)], 1.0).unwrap();
        assert!(bins.iter().all(|b| b.nps == 0.0));
        assert!(nps(&[], 1.0).is_err());
    }

    #[test]
    fn white_noise_nps_is_flat_with_parseval_integral() {
        let mut rng = RngStream::new(7);
        for &px in &[1.0, 0.5] {
            let rois: Vec<Grid2D> = (0..100)
                .map(|_| {
                    Grid2D::from_fn(64, 64, GridKind::Image, |_, _| rng.standard_normal()).unwrap()
                })
                .collect();
            let spec = nps_2d(&rois, px).unwrap();
            let level = spec.data().iter().sum::<f64>() / spec.len() as f64;
            assert!((level / (px * px) - 1.0).abs() < 0.05, "level {level}");
            // Integral over the frequency plane equals the pixel variance.
            let dfu = 1.0 / (64.0 * px);
            let integral = spec.data().iter().sum::<f64>() * dfu * dfu;
            assert!((integral - 1.0).abs() < 0.05, "integral {integral}");
            let bins = nps(&rois, px).unwrap();
            for b in &bins[1..bins.len() - 1] {
                assert!((b.nps / (px * px) - 1.0).abs() < 0.25, "{b:?}");
            }
        }
    }

    #[test]
    fn sinusoid_has_single_dominant_bin() {
        let roi = Grid2D::from_fn(32, 32, GridKind::Image, |_, c| {
            (2.0 * std::f64::consts::PI * 4.0 * c as f64 / 32.0).sin()
        })
        .unwrap();
        let bins = nps(&[roi], 1.0).unwrap();
        let total: f64 = bins.iter().map(|b| b.nps).sum();
        let top = bins.iter().max_by(|a, b| a.nps.total_cmp(&b.nps)).unwrap();
        assert!((top.freq - 4.0 / 32.0).abs() < 1e-12);
        assert!(top.nps / total > 0.99);
        assert!(nps_table(&bins).render().starts_with("freq,nps\n"));
    }
}
