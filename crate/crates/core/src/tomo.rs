//! Parallel-beam tomography: phantom, forward projection and FBP.
//!
//! Pixel `(r, c)` of an `N x N` image sits at `x = c - (N-1)/2`,
//! `y = (N-1)/2 - r` in pixel units. Angle `i` is `theta_i = i*pi/n_angles`
//! and detector `j` measures the ray `x cos(theta) + y sin(theta) = t_j` with
//! `t_j = (j - (n_det-1)/2) * spacing`.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, GridKind};

/// Integration step along each ray, in pixels.
pub const RAY_STEP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanGeometry {
    pub image_size: usize,
    pub n_angles: usize,
    pub n_detectors: usize,
    /// Detector bin width in pixels.
    pub detector_spacing: f64,
}

impl ScanGeometry {
    pub fn new(
        image_size: usize,
        n_angles: usize,
        n_detectors: usize,
        detector_spacing: f64,
    ) -> Result<Self> {
        let g = Self {
            image_size,
            n_angles,
            n_detectors,
            detector_spacing,
        };
        g.validate()?;
        Ok(g)
    }

    /// 128^2 image, 180 angles x 185 detectors.
    pub fn desk() -> Self {
        Self {
            image_size: 128,
            n_angles: 180,
            n_detectors: 185,
            detector_spacing: 1.0,
        }
    }

    /// 1440 angles x 720 detectors over a 512^2 image.
    pub fn paper() -> Self {
        Self {
            image_size: 512,
            n_angles: 1440,
            n_detectors: 720,
            detector_spacing: 1.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.n_angles == 0 || self.n_detectors == 0 {
            return Err(Error::Config(format!(
                "geometry sizes must be positive: image {} angles {} detectors {}",
                self.image_size, self.n_angles, self.n_detectors
            )));
        }
        if !(self.detector_spacing > 0.0) || !self.detector_spacing.is_finite() {
            return Err(Error::Config(format!(
                "detector_spacing must be > 0, got {}",
                self.detector_spacing
            )));
        }
        let span = self.n_detectors as f64 * self.detector_spacing;
        let side = self.image_size as f64;
        if span < side {
            return Err(Error::Config(format!(
                "detector span {span} does not cover the image side {side}"
            )));
        }
        if span < side * std::f64::consts::SQRT_2 {
            log::warn!(
                "detector span {span:.1} is shorter than the image diagonal {:.1}; corners are truncated",
                side * std::f64::consts::SQRT_2
            );
        }
        Ok(())
    }

    pub fn angle(&self, i: usize) -> f64 {
        i as f64 * PI / self.n_angles as f64
    }

    pub fn detector_offset(&self, j: usize) -> f64 {
        (j as f64 - (self.n_detectors as f64 - 1.0) / 2.0) * self.detector_spacing
    }

    pub fn sinogram_shape(&self) -> (usize, usize) {
        (self.n_angles, self.n_detectors)
    }
}

/// Ellipse parameters: intensity, semi-axes (a, b), center (x0, y0), rotation in degrees.
const SHEPP_LOGAN: [[f64; 6]; 10] = [
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
    [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
    [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
    [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
    [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
    [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
    [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
    [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
];

/// Ten-ellipse Shepp-Logan phantom with the contrast-enhanced intensities
/// (skull 1.0, brain 0.2), sampled at pixel centers over `[-1, 1]^2`.
pub fn shepp_logan(size: usize) -> Result<Grid2D> {
    if size < 16 {
        return Err(Error::invalid(format!(
            "phantom size must be >= 16, got {size}"
        )));
    }
    let half = size as f64 / 2.0;
    let center = (size as f64 - 1.0) / 2.0;
    Grid2D::from_fn(size, size, GridKind::Image, |r, c| {
        let x = (c as f64 - center) / half;
        let y = (center - r as f64) / half;
        let mut value = 0.0;
        for &[intensity, a, b, x0, y0, deg] in &SHEPP_LOGAN {
            let (s, co) = deg.to_radians().sin_cos();
            let dx = x - x0;
            let dy = y - y0;
            let xr = dx * co + dy * s;
            let yr = -dx * s + dy * co;
            if (xr / a).powi(2) + (yr / b).powi(2) <= 1.0 {
                value += intensity;
            }
        }
        value.clamp(0.0, 1.0)
    })
}

/// Disk of the given radius (pixels) centered in an `size x size` image.
pub fn centered_disk(size: usize, radius: f64, value: f64) -> Result<Grid2D> {
    let center = (size as f64 - 1.0) / 2.0;
    Grid2D::from_fn(size, size, GridKind::Image, |r, c| {
        let dx = c as f64 - center;
        let dy = r as f64 - center;
        if dx * dx + dy * dy <= radius * radius {
            value
        } else {
            0.0
        }
    })
}

#[inline]
fn bilinear(image: &[f64], n: usize, row: f64, col: f64) -> f64 {
    if row <= -1.0 || col <= -1.0 || row >= n as f64 || col >= n as f64 {
        return 0.0;
    }
    let r0 = row.floor();
    let c0 = col.floor();
    let fr = row - r0;
    let fc = col - c0;
    let r0 = r0 as isize;
    let c0 = c0 as isize;
    let n = n as isize;
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= n || c >= n {
            0.0
        } else {
            image[(r * n + c) as usize]
        }
    };
    (1.0 - fr) * ((1.0 - fc) * at(r0, c0) + fc * at(r0, c0 + 1))
        + fr * ((1.0 - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1))
}

fn check_image(image: &Grid2D, geom: &ScanGeometry) -> Result<()> {
    geom.validate()?;
    if image.rows() != image.cols() || image.rows() != geom.image_size {
        return Err(Error::ShapeMismatch {
            expected: (geom.image_size, geom.image_size),
            found: image.shape(),
        });
    }
    Ok(())
}

/// Line integrals by bilinear sampling every [`RAY_STEP`] pixels.
pub fn radon(image: &Grid2D, geom: &ScanGeometry) -> Result<Grid2D> {
    check_image(image, geom)?;
    let n = geom.image_size;
    let center = (n as f64 - 1.0) / 2.0;
    // Half-length of every ray: covers the image diagonal plus one pixel.
    let half_len = (n as f64) * std::f64::consts::SQRT_2 / 2.0 + 1.0;
    let n_steps = (2.0 * half_len / RAY_STEP).ceil() as usize;
    let s0 = -(n_steps as f64) * RAY_STEP / 2.0;
    let data = image.data();

    let rows: Vec<Vec<f64>> = (0..geom.n_angles)
        .into_par_iter()
        .map(|i| {
            let (sin, cos) = geom.angle(i).sin_cos();
            (0..geom.n_detectors)
                .map(|j| {
                    let t = geom.detector_offset(j);
                    let mut acc = 0.0;
                    for k in 0..n_steps {
                        let s = s0 + (k as f64 + 0.5) * RAY_STEP;
                        let x = t * cos - s * sin;
                        let y = t * sin + s * cos;
                        acc += bilinear(data, n, center - y, x + center);
                    }
                    acc * RAY_STEP
                })
                .collect()
        })
        .collect();
    Ok(Grid2D::from_vec_unchecked(
        geom.n_angles,
        geom.n_detectors,
        GridKind::Sinogram,
        rows.concat(),
    ))
}

/// Reconstruction filter applied in frequency space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RampWindow {
    #[default]
    None,
    Hann,
}

/// Frequency response of the band-limited Ram-Lak kernel on a padded length
/// `len`, built from its spatial samples (1/4 at 0, -1/(pi n)^2 at odd n).
fn ramp_response(len: usize, window: RampWindow) -> Vec<f64> {
    let mut kernel = vec![Complex64::default(); len];
    kernel[0] = Complex64::new(0.25, 0.0);
    for n in (1..len / 2).step_by(2) {
        let v = -1.0 / (PI * n as f64).powi(2);
        kernel[n] = Complex64::new(v, 0.0);
        kernel[len - n] = Complex64::new(v, 0.0);
    }
    FftPlanner::new().plan_fft_forward(len).process(&mut kernel);
    kernel
        .iter()
        .enumerate()
        .map(|(k, z)| {
            let w = match window {
                RampWindow::None => 1.0,
                RampWindow::Hann => 0.5 * (1.0 + (2.0 * PI * k as f64 / len as f64).cos()),
            };
            z.re * w
        })
        .collect()
}

pub fn fbp(sino: &Grid2D, geom: &ScanGeometry) -> Result<Grid2D> {
    fbp_windowed(sino, geom, RampWindow::None)
}

/// Ramp-filtered backprojection scaled by `pi / n_angles`.
pub fn fbp_windowed(sino: &Grid2D, geom: &ScanGeometry, window: RampWindow) -> Result<Grid2D> {
    geom.validate()?;
    if sino.shape() != geom.sinogram_shape() {
        return Err(Error::ShapeMismatch {
            expected: geom.sinogram_shape(),
            found: sino.shape(),
        });
    }
    let n_det = geom.n_detectors;
    let padded = (2 * n_det).next_power_of_two();
    let response = ramp_response(padded, window);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(padded);
    let inv = planner.plan_fft_inverse(padded);

    // Continuous ramp kernel samples scale as 1/spacing^2, convolution as spacing.
    let filter_scale = 1.0 / (geom.detector_spacing * padded as f64);
    let filtered: Vec<Vec<f64>> = (0..geom.n_angles)
        .into_par_iter()
        .map(|i| {
            let mut buf = vec![Complex64::default(); padded];
            for (b, &v) in buf.iter_mut().zip(sino.row(i)) {
                *b = Complex64::new(v, 0.0);
            }
            fwd.process(&mut buf);
            for (b, &h) in buf.iter_mut().zip(&response) {
                *b *= h;
            }
            inv.process(&mut buf);
            buf[..n_det].iter().map(|z| z.re * filter_scale).collect()
        })
        .collect();

    let n = geom.image_size;
    let center = (n as f64 - 1.0) / 2.0;
    let det_center = (n_det as f64 - 1.0) / 2.0;
    let trig: Vec<(f64, f64)> = (0..geom.n_angles)
        .map(|i| geom.angle(i).sin_cos())
        .collect();
    let scale = PI / geom.n_angles as f64;

    // Each pixel sums angles in index order, independent of thread count.
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|r| {
            let y = center - r as f64;
            (0..n)
                .map(|c| {
                    let x = c as f64 - center;
                    let mut acc = 0.0;
                    for (profile, &(sin, cos)) in filtered.iter().zip(&trig) {
                        let pos = (x * cos + y * sin) / geom.detector_spacing + det_center;
                        if pos < 0.0 || pos > (n_det - 1) as f64 {
                            continue;
                        }
                        let j0 = (pos.floor() as usize).min(n_det - 1);
                        let f = pos - j0 as f64;
                        let v0 = profile[j0];
                        let v1 = if j0 + 1 < n_det { profile[j0 + 1] } else { 0.0 };
                        acc += (1.0 - f) * v0 + f * v1;
                    }
                    acc * scale
                })
                .collect()
        })
        .collect();
    Grid2D::new(n, n, GridKind::Image, rows.concat())
}

/// Rotationally symmetric disk whose edge falls off as a raised cosine over
/// `edge` pixels centered on `radius`.
pub fn smooth_disk(size: usize, radius: f64, edge: f64, value: f64) -> Result<Grid2D> {
    let center = (size as f64 - 1.0) / 2.0;
    Grid2D::from_fn(size, size, GridKind::Image, |r, c| {
        let d = ((c as f64 - center).powi(2) + (r as f64 - center).powi(2)).sqrt();
        let t = ((d - (radius - edge / 2.0)) / edge).clamp(0.0, 1.0);
        value * 0.5 * (1.0 + (PI * t).cos())
    })
}

/// Mask of pixels inside the circle inscribed in an `n x n` image.
pub fn inscribed_circle(n: usize) -> Vec<bool> {
    let center = (n as f64 - 1.0) / 2.0;
    let radius = n as f64 / 2.0;
    (0..n * n)
        .map(|i| {
            let dy = (i / n) as f64 - center;
            let dx = (i % n) as f64 - center;
            dx * dx + dy * dy <= radius * radius
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Modified Shepp-Logan ellipse sum evaluated directly at a point.
    fn ellipse_sum(x: f64, y: f64) -> f64 {
        let table: [(f64, f64, f64, f64, f64, f64); 10] = [
            (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
            (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
            (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
            (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
            (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
            (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
            (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
            (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
            (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
            (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
        ];
        table
            .iter()
            .filter(|(_, a, b, x0, y0, deg)| {
                let t = deg * PI / 180.0;
                let u = (x - x0) * t.cos() + (y - y0) * t.sin();
                let v = -(x - x0) * t.sin() + (y - y0) * t.cos();
                u * u / (a * a) + v * v / (b * b) <= 1.0
            })
            .map(|e| e.0)
            .sum()
    }

    #[test]
    fn phantom_landmarks() {
        let p = shepp_logan(256).unwrap();
        assert_eq!(p.max(), 1.0);
        assert_eq!(p.min(), 0.0);
        assert_eq!(p.get(0, 0), 0.0);
        // The brain region at the origin sums to 1.0 - 0.8.
        let center = ellipse_sum(0.0, 0.0);
        assert!((center - 0.2).abs() < 1e-12);
        assert!((p.get(128, 128) - center).abs() < 1e-12);
        // Skull ring on the vertical axis.
        assert_eq!(p.get(12, 128), 1.0);
        assert_eq!(p.get(8, 128), 0.0);
        assert_eq!(p, shepp_logan(256).unwrap());
        assert!(shepp_logan(15).is_err());
    }

    #[test]
    fn zero_image_projects_to_zero() {
        let g = ScanGeometry::new(32, 12, 47, 1.0).unwrap();
        let s = radon(&Grid2D::zeros(32, 32, GridKind::Image), &g).unwrap();
        assert_eq!(s.shape(), (12, 47));
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disk_profiles_are_angle_invariant() {
        let g = ScanGeometry::new(128, 36, 185, 1.0).unwrap();
        let r = 40.0;
        let s = radon(&centered_disk(128, r, 1.0).unwrap(), &g).unwrap();
        // Central chord is 2r up to pixelization of the disk edge.
        assert!(
            (s.get(0, 92) - 2.0 * r).abs() <= 1.0,
            "central {}",
            s.get(0, 92)
        );

        // A staircase edge is not rotation invariant itself; a smooth edge is.
        let s = radon(&smooth_disk(128, r, 16.0, 1.0).unwrap(), &g).unwrap();
        let max = s.max();
        for i in 1..g.n_angles {
            for j in 0..g.n_detectors {
                assert!((s.get(i, j) - s.get(0, j)).abs() < 1e-3 * max);
            }
        }
    }

    #[test]
    fn geometry_coverage() {
        assert!(ScanGeometry::new(128, 180, 100, 1.0).is_err());
        assert!(ScanGeometry::new(128, 180, 130, 1.0).is_ok());
        assert!(ScanGeometry::new(128, 180, 185, 0.0).is_err());
        ScanGeometry::desk().validate().unwrap();
        ScanGeometry::paper().validate().unwrap();
    }

    #[test]
    fn fbp_shape_mismatch() {
        let g = ScanGeometry::new(32, 10, 47, 1.0).unwrap();
        let s = Grid2D::zeros(10, 40, GridKind::Sinogram);
        assert!(matches!(fbp(&s, &g), Err(Error::ShapeMismatch { .. })));
        let z = fbp(&Grid2D::zeros(10, 47, GridKind::Sinogram), &g).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_response_is_nonnegative_ramp() {
        let h = ramp_response(64, RampWindow::None);
        // DC equals the sum of the truncated spatial kernel.
        let dc = 0.25
            - 2.0
                * (1..32)
                    .step_by(2)
                    .map(|n| 1.0 / (PI * n as f64).powi(2))
                    .sum::<f64>();
        assert!((h[0] - dc).abs() < 1e-12 && dc > 0.0 && dc < 0.01);
        // Near-linear in |k| at low frequencies: H(k) ~ k / len.
        assert!((h[4] - 4.0 / 64.0).abs() < 5e-3);
        assert!(h.iter().all(|&v| v > -1e-12));
        let hann = ramp_response(64, RampWindow::Hann);
        assert!(hann[32].abs() < 1e-12);
    }
}
