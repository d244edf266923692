//! Unitary 2D DFT, amplitude/phase decomposition and centrosymmetric fields.
//!
//! Bin `(u, v)` is stored row-major with DC at `(0, 0)`. The transform is
//! scaled by `1/sqrt(H*W)` in both directions, so `sum p^2 == sum amp^2`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, GridKind};
use crate::rng::RngStream;

/// Maximum tolerated imaginary residual of an inverse transform, relative to
/// the spectrum's peak amplitude.
pub const SYMMETRY_TOLERANCE: f64 = 1e-5;

/// Cached row/column plans for one grid shape.
pub struct Dft2d {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Dft2d {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Unitary forward transform of a real row-major buffer.
    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.row_fwd, &self.col_fwd);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.row_inv, &self.col_inv);
    }

    fn transform(&self, buf: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        assert_eq!(buf.len(), self.rows * self.cols);
        row.process(buf);
        let mut column = vec![Complex64::default(); self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                column[r] = buf[r * self.cols + c];
            }
            col.process(&mut column);
            for r in 0..self.rows {
                buf[r * self.cols + c] = column[r];
            }
        }
        let scale = 1.0 / ((self.rows * self.cols) as f64).sqrt();
        buf.iter_mut().for_each(|z| *z *= scale);
    }
}

/// Amplitude and phase of a grid's unitary DFT.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    rows: usize,
    cols: usize,
    kind: GridKind,
    pub amp: Vec<f64>,
    pub phase: Vec<f64>,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_phase(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

impl Spectrum {
    pub fn new(
        rows: usize,
        cols: usize,
        kind: GridKind,
        amp: Vec<f64>,
        phase: Vec<f64>,
    ) -> Result<Self> {
        if amp.len() != rows * cols || phase.len() != rows * cols {
            return Err(Error::invalid("amplitude/phase shapes do not match"));
        }
        if amp.iter().any(|&a| !(a >= 0.0) || !a.is_finite()) {
            return Err(Error::invalid("amplitudes must be finite and non-negative"));
        }
        Ok(Self {
            rows,
            cols,
            kind,
            amp,
            phase,
        })
    }

    pub fn from_complex(rows: usize, cols: usize, kind: GridKind, coeffs: &[Complex64]) -> Self {
        let amp = coeffs.iter().map(|z| z.norm()).collect();
        let phase = coeffs
            .iter()
            .map(|z| {
                let p = z.im.atan2(z.re);
                if p == -PI {
                    PI
                } else {
                    p
                }
            })
            .collect();
        Self {
            rows,
            cols,
            kind,
            amp,
            phase,
        }
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.amp
            .iter()
            .zip(&self.phase)
            .map(|(&a, &p)| Complex64::from_polar(a, p))
            .collect()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn energy(&self) -> f64 {
        self.amp.iter().map(|a| a * a).sum()
    }

    pub fn max_amp(&self) -> f64 {
        self.amp.iter().copied().fold(0.0, f64::max)
    }

    /// Multiplies amplitudes bin-wise by `factor`, leaving the phase untouched.
    pub fn scale_amplitudes(&mut self, factor: impl Fn(usize) -> f64) {
        for (i, a) in self.amp.iter_mut().enumerate() {
            *a *= factor(i);
        }
    }
}

pub fn forward_dft(grid: &Grid2D) -> Spectrum {
    let dft = Dft2d::new(grid.rows(), grid.cols());
    forward_dft_with(&dft, grid)
}

pub fn forward_dft_with(dft: &Dft2d, grid: &Grid2D) -> Spectrum {
    assert_eq!(dft.shape(), grid.shape());
    let coeffs = dft.forward_real(grid.data());
    Spectrum::from_complex(grid.rows(), grid.cols(), grid.kind(), &coeffs)
}

/// Real part of the unitary inverse transform and the largest imaginary
/// magnitude that was discarded.
pub fn inverse_dft(spec: &Spectrum) -> Result<(Grid2D, f64)> {
    let dft = Dft2d::new(spec.rows, spec.cols);
    inverse_dft_with(&dft, spec)
}

pub fn inverse_dft_with(dft: &Dft2d, spec: &Spectrum) -> Result<(Grid2D, f64)> {
    assert_eq!(dft.shape(), spec.shape());
    let mut buf = spec.to_complex();
    dft.inverse(&mut buf);
    let residual = buf.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let limit = SYMMETRY_TOLERANCE * spec.max_amp();
    if residual > limit {
        return Err(Error::SymmetryViolation { residual, limit });
    }
    let data: Vec<f64> = buf.iter().map(|z| z.re).collect();
    let grid = Grid2D::new(spec.rows, spec.cols, spec.kind, data)?;
    Ok((grid, residual))
}

/// Centered frequency index of bin `k` on an axis of length `n`, in
/// `[-ceil(n/2)+1, floor(n/2)]`.
#[inline]
pub fn centered_index(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Index of the conjugate partner `(-u mod H, -v mod W)`.
#[inline]
pub fn mirror(u: usize, v: usize, rows: usize, cols: usize) -> (usize, usize) {
    ((rows - u) % rows, (cols - v) % cols)
}

/// Per-bin normalized polar radius; each axis is scaled by its Nyquist index.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialField {
    rows: usize,
    cols: usize,
    pub rho: Vec<f64>,
}

impl RadialField {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.rho[u * self.cols + v]
    }
}

pub fn radial_field(rows: usize, cols: usize) -> Result<RadialField> {
    if rows < 2 || cols < 2 {
        return Err(Error::invalid(format!(
            "radial field needs at least 2x2 bins, got {rows}x{cols}"
        )));
    }
    let half_r = rows as f64 / 2.0;
    let half_c = cols as f64 / 2.0;
    let mut rho = Vec::with_capacity(rows * cols);
    for u in 0..rows {
        let fu = centered_index(u, rows) as f64 / half_r;
        for v in 0..cols {
            let fv = centered_index(v, cols) as f64 / half_c;
            rho.push((fu * fu + fv * fv).sqrt());
        }
    }
    Ok(RadialField { rows, cols, rho })
}

/// Fills a centrosymmetric field: one draw per canonical bin (self-conjugate
/// bins and the lexicographically smaller member of each conjugate pair), in
/// row-major order, copied to the mirror bin.
fn centrosymmetric_field(rows: usize, cols: usize, mut draw: impl FnMut() -> f64) -> Vec<f64> {
    let mut field = vec![0.0; rows * cols];
    for u in 0..rows {
        for v in 0..cols {
            let (mu, mv) = mirror(u, v, rows, cols);
            if (u, v) <= (mu, mv) {
                let value = draw();
                field[u * cols + v] = value;
                field[mu * cols + mv] = value;
            }
        }
    }
    field
}

/// Mean-one multiplicative field with `Z ~ Uniform(1 - delta, 1 + delta)`.
pub fn centrosymmetric_uniform(
    rows: usize,
    cols: usize,
    delta: f64,
    rng: &mut RngStream,
) -> Result<Grid2D> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::invalid(format!(
            "uniform half-width must be in (0, 1], got {delta}"
        )));
    }
    let data = centrosymmetric_field(rows, cols, || rng.uniform_range(1.0 - delta, 1.0 + delta));
    Grid2D::new(rows, cols, GridKind::Generic, data)
}

/// Binary retention mask with `B ~ Bernoulli(beta)`.
pub fn centrosymmetric_bernoulli(
    rows: usize,
    cols: usize,
    beta: f64,
    rng: &mut RngStream,
) -> Result<Grid2D> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!(
            "retention probability must be in [0, 1], got {beta}"
        )));
    }
    let data = centrosymmetric_field(rows, cols, || if rng.uniform() < beta { 1.0 } else { 0.0 });
    Grid2D::new(rows, cols, GridKind::Generic, data)
}
