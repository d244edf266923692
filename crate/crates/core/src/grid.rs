//! Dense 2D grids and their on-disk formats.
//!
//! Tensor files are laid out as:
//!
//! ```text
//! bytes 0..4     ASCII "FCT1"
//! bytes 4..8     u32 LE header length L
//! bytes 8..8+L   UTF-8 JSON {"dtype","shape","kind","meta"}
//! remainder      rows*cols scalars, little-endian, row-major
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FCT1";

/// Semantic kind carried alongside the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Image,
    Sinogram,
    Generic,
}

impl GridKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GridKind::Image => "image",
            GridKind::Sinogram => "sinogram",
            GridKind::Generic => "generic",
        }
    }
}

/// Storage precision of a tensor file payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Dense row-major 2D array of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    rows: usize,
    cols: usize,
    kind: GridKind,
    data: Vec<f64>,
}

impl Grid2D {
    pub fn new(rows: usize, cols: usize, kind: GridKind, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!(
                "grid dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            rows,
            cols,
            kind,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize, kind: GridKind) -> Self {
        assert!(rows > 0 && cols > 0, "grid dimensions must be positive");
        Self {
            rows,
            cols,
            kind,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        kind: GridKind,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, kind, data)
    }

    /// Builds a grid from values already known to be finite.
    pub(crate) fn from_vec_unchecked(
        rows: usize,
        cols: usize,
        kind: GridKind,
        data: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self {
            rows,
            cols,
            kind,
            data,
        }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn with_kind(mut self, kind: GridKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Applies `f` elementwise; fails if any result is non-finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.rows,
            self.cols,
            self.kind,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        self.map(|v| alpha * v)
    }

    pub fn ensure_same_shape(&self, other: &Grid2D) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                found: other.shape(),
            });
        }
        Ok(())
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// JSON header of a tensor file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub dtype: Dtype,
    pub shape: [usize; 2],
    pub kind: GridKind,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

pub fn write_tensor(grid: &Grid2D, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    write_tensor_with_meta(grid, path, dtype, &BTreeMap::new())
}

pub fn write_tensor_with_meta(
    grid: &Grid2D,
    path: impl AsRef<Path>,
    dtype: Dtype,
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    let path = path.as_ref();
    if let Some(index) = grid.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let bytes = encode_tensor(grid, dtype, meta);
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub(crate) fn encode_tensor(
    grid: &Grid2D,
    dtype: Dtype,
    meta: &BTreeMap<String, String>,
) -> Vec<u8> {
    let header = TensorHeader {
        dtype,
        shape: [grid.rows, grid.cols],
        kind: grid.kind,
        meta: meta.clone(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + header_json.len() + grid.len() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    match dtype {
        Dtype::F64 => grid
            .data
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Dtype::F32 => grid
            .data
            .iter()
            .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
    }
    out
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Grid2D> {
    read_tensor_with_header(path).map(|(g, _)| g)
}

pub fn read_tensor_with_header(path: impl AsRef<Path>) -> Result<(Grid2D, TensorHeader)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}

pub(crate) fn decode_tensor(bytes: &[u8], path: &Path) -> Result<(Grid2D, TensorHeader)> {
    let invalid = |reason: String| Error::InvalidHeader {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        let mut found = [0u8; 4];
        let n = bytes.len().min(4);
        found[..n].copy_from_slice(&bytes[..n]);
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found,
        });
    }
    if bytes.len() < 8 {
        return Err(invalid("missing header length".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header_end = 8usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| invalid(format!("header length {header_len} exceeds file size")))?;
    let header: TensorHeader =
        serde_json::from_slice(&bytes[8..header_end]).map_err(|e| invalid(e.to_string()))?;
    let [rows, cols] = header.shape;
    if rows == 0 || cols == 0 {
        return Err(invalid(format!(
            "shape entries must be >= 1, got {rows}x{cols}"
        )));
    }
    let payload = &bytes[header_end..];
    let expected = rows * cols * header.dtype.size();
    if payload.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    if payload.len() != expected {
        return Err(Error::PayloadMismatch {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    let data: Vec<f64> = match header.dtype {
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    let grid = Grid2D::new(rows, cols, header.kind, data)?;
    Ok((grid, header))
}

/// Maps a value into an 8-bit gray level over the window `[lo, hi]`.
pub fn window_to_u8(v: f64, lo: f64, hi: f64) -> u8 {
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    (255.0 * t + 0.5).floor() as u8
}

/// Writes a binary (P5) PGM with maxval 255.
pub fn export_pgm(grid: &Grid2D, path: impl AsRef<Path>, window: (f64, f64)) -> Result<()> {
    let (lo, hi) = window;
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!(
            "degenerate display window [{lo}, {hi}]"
        )));
    }
    let path = path.as_ref();
    let mut bytes = format!("P5\n{} {}\n255\n", grid.cols, grid.rows).into_bytes();
    bytes.extend(grid.data.iter().map(|&v| window_to_u8(v, lo, hi)));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Minimal CSV table: header row always present, `\n` line endings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<S: Into<String>>(&mut self, row: impl IntoIterator<Item = S>) {
        let row: Vec<String> = row.into_iter().map(Into::into).collect();
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{}", self.header.join(",")).unwrap();
        for row in &self.rows {
            writeln!(out, "{}", row.join(",")).unwrap();
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

/// Formats a float for CSV output; infinities render as `inf` / `-inf`.
pub fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}
