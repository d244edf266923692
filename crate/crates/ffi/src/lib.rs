//! C ABI over `freqct`.
//!
//! Every function returns an [`FctStatus`]. On failure the message is
//! available from [`fct_last_error`] on the same thread. Objects cross the
//! boundary as opaque handles created by `*_new`/`*_load`/producer calls and
//! released with the matching `*_free`. Outputs are written through
//! out-pointers only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use freqct::denoiser::{self, ConvNet, TrainConfig};
use freqct::grid::{self, Dtype};
use freqct::metrics::{self, MetricConfig};
use freqct::noise::{simulate_ldct, NoiseModel};
use freqct::pipeline::{cmd_run_all, load_config};
use freqct::pseudosample::{self, PerturbConfig};
use freqct::tomo::{self, ScanGeometry};
use freqct::{Error, Grid2D, GridKind, RngStream};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FctStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Format = 5,
    Numeric = 6,
    Config = 7,
    Panic = 8,
}

/// Grid semantic kind.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FctKind {
    Image = 0,
    Sinogram = 1,
    Generic = 2,
}

/// Tensor file payload precision.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FctDtype {
    F32 = 0,
    F64 = 1,
}

/// Opaque 2D grid of doubles.
pub struct FctGrid(Grid2D);

/// Opaque trained denoiser with its normalization scale.
pub struct FctNet {
    net: ConvNet,
    scale: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FctGeometry {
    pub image_size: usize,
    pub n_angles: usize,
    pub n_detectors: usize,
    pub detector_spacing: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FctPerturbConfig {
    pub r1: f64,
    pub r2: f64,
    pub beta: f64,
    pub z_delta: f64,
    pub n: usize,
    pub clamp_t: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FctNoiseModel {
    pub i0: f64,
    pub gaussian_sigma: f64,
    pub floor_counts: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FctTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub hidden_channels: usize,
    pub final_relu: bool,
    pub scale_quantile: f64,
    pub use_clamp: bool,
}

impl From<FctGeometry> for ScanGeometry {
    fn from(g: FctGeometry) -> Self {
        ScanGeometry {
            image_size: g.image_size,
            n_angles: g.n_angles,
            n_detectors: g.n_detectors,
            detector_spacing: g.detector_spacing,
        }
    }
}

impl From<ScanGeometry> for FctGeometry {
    fn from(g: ScanGeometry) -> Self {
        FctGeometry {
            image_size: g.image_size,
            n_angles: g.n_angles,
            n_detectors: g.n_detectors,
            detector_spacing: g.detector_spacing,
        }
    }
}

impl From<FctPerturbConfig> for PerturbConfig {
    fn from(c: FctPerturbConfig) -> Self {
        PerturbConfig {
            r1: c.r1,
            r2: c.r2,
            beta: c.beta,
            z_delta: c.z_delta,
            n: c.n,
            clamp_t: c.clamp_t,
        }
    }
}

impl From<PerturbConfig> for FctPerturbConfig {
    fn from(c: PerturbConfig) -> Self {
        FctPerturbConfig {
            r1: c.r1,
            r2: c.r2,
            beta: c.beta,
            z_delta: c.z_delta,
            n: c.n,
            clamp_t: c.clamp_t,
        }
    }
}

impl From<FctTrainConfig> for TrainConfig {
    fn from(c: FctTrainConfig) -> Self {
        TrainConfig {
            steps: c.steps,
            lr: c.lr,
            hidden_channels: c.hidden_channels,
            final_relu: c.final_relu,
            scale_quantile: c.scale_quantile,
            use_clamp: c.use_clamp,
        }
    }
}

impl From<TrainConfig> for FctTrainConfig {
    fn from(c: TrainConfig) -> Self {
        FctTrainConfig {
            steps: c.steps,
            lr: c.lr,
            hidden_channels: c.hidden_channels,
            final_relu: c.final_relu,
            scale_quantile: c.scale_quantile,
            use_clamp: c.use_clamp,
        }
    }
}

impl From<FctKind> for GridKind {
    fn from(k: FctKind) -> Self {
        match k {
            FctKind::Image => GridKind::Image,
            FctKind::Sinogram => GridKind::Sinogram,
            FctKind::Generic => GridKind::Generic,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FctStatus {
    match e {
        Error::Io { .. } => FctStatus::Io,
        Error::BadMagic { .. }
        | Error::Truncated { .. }
        | Error::PayloadMismatch { .. }
        | Error::InvalidHeader { .. } => FctStatus::Format,
        Error::ShapeMismatch { .. } => FctStatus::ShapeMismatch,
        Error::InvalidArgument(_) => FctStatus::InvalidArgument,
        Error::NonFinite { .. } | Error::SymmetryViolation { .. } | Error::Numeric(_) => {
            FctStatus::Numeric
        }
        Error::Config(_) => FctStatus::Config,
        Error::Stage { source, .. } => status_of(source),
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into a status plus last-error text.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FctStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FctStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("null pointer: {what}"));
            FctStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_last_error(format!("internal panic: {msg}"));
            FctStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidArgument(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

fn boxed_grid(g: Grid2D) -> *mut FctGrid {
    Box::into_raw(Box::new(FctGrid(g)))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fct_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fct_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `rows * cols` doubles from `data` into a new grid.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fct_grid_new(
    rows: usize,
    cols: usize,
    kind: FctKind,
    data: *const f64,
    out: *mut *mut FctGrid,
) -> FctStatus {
    guard(|| {
        if data.is_null() {
            return Err(Failure::Null("data"));
        }
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::InvalidArgument("rows * cols overflows".into()))?;
        let values = std::slice::from_raw_parts(data, len).to_vec();
        let g = Grid2D::new(rows, cols, kind.into(), values)?;
        put(out, boxed_grid(g), "out")
    })
}

/// Releases a grid. Null is ignored.
///
/// # Safety
/// `grid` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fct_grid_free(grid: *mut FctGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fct_grid_shape(
    grid: *const FctGrid,
    rows: *mut usize,
    cols: *mut usize,
) -> FctStatus {
    guard(|| {
        let g = &borrow(grid, "grid")?.0;
        put(rows, g.rows(), "rows")?;
        put(cols, g.cols(), "cols")
    })
}

/// Borrowed row-major data, valid while the grid lives.
///
/// # Safety
/// `grid` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fct_grid_data(grid: *const FctGrid) -> *const f64 {
    grid.as_ref().map_or(ptr::null(), |g| g.0.data().as_ptr())
}

/// Reads a tensor file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fct_grid_read(path: *const c_char, out: *mut *mut FctGrid) -> FctStatus {
    guard(|| {
        let g = grid::read_tensor(path_arg(path, "path")?)?;
        put(out, boxed_grid(g), "out")
    })
}

/// # Safety
/// `grid` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fct_grid_write(
    grid: *const FctGrid,
    path: *const c_char,
    dtype: FctDtype,
) -> FctStatus {
    guard(|| {
        let g = &borrow(grid, "grid")?.0;
        let dtype = match dtype {
            FctDtype::F32 => Dtype::F32,
            FctDtype::F64 => Dtype::F64,
        };
        grid::write_tensor(g, path_arg(path, "path")?, dtype)?;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn fct_geometry_desk() -> FctGeometry {
    ScanGeometry::desk().into()
}

#[no_mangle]
pub extern "C" fn fct_perturb_default() -> FctPerturbConfig {
    PerturbConfig::default().into()
}

#[no_mangle]
pub extern "C" fn fct_train_default() -> FctTrainConfig {
    TrainConfig::default().into()
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fct_shepp_logan(size: usize, out: *mut *mut FctGrid) -> FctStatus {
    guard(|| put(out, boxed_grid(tomo::shepp_logan(size)?), "out"))
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fct_radon(
    image: *const FctGrid,
    geometry: *const FctGeometry,
    out: *mut *mut FctGrid,
) -> FctStatus {
    guard(|| {
        let geom: ScanGeometry = (*borrow(geometry, "geometry")?).into();
        let s = tomo::radon(&borrow(image, "image")?.0, &geom)?;
        put(out, boxed_grid(s), "out")
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fct_fbp(
    sino: *const FctGrid,
    geometry: *const FctGeometry,
    out: *mut *mut FctGrid,
) -> FctStatus {
    guard(|| {
        let geom: ScanGeometry = (*borrow(geometry, "geometry")?).into();
        let r = tomo::fbp(&borrow(sino, "sino")?.0, &geom)?;
        put(out, boxed_grid(r), "out")
    })
}

/// Low-dose measurement of a clean sinogram.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fct_simulate_ldct(
    clean: *const FctGrid,
    model: *const FctNoiseModel,
    seed: u64,
    out: *mut *mut FctGrid,
) -> FctStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        let model = NoiseModel {
            i0: m.i0,
            gaussian_sigma: m.gaussian_sigma,
            floor_counts: m.floor_counts,
        };
        model.validate()?;
        let noisy = simulate_ldct(
            &borrow(clean, "clean")?.0,
            &model,
            &mut RngStream::new(seed),
        )?;
        put(out, boxed_grid(noisy), "out")
    })
}

/// One noise-perturbed pseudo-sample.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fct_ppnp(
    sino: *const FctGrid,
    config: *const FctPerturbConfig,
    seed: u64,
    out: *mut *mut FctGrid,
) -> FctStatus {
    guard(|| {
        let cfg: PerturbConfig = (*borrow(config, "config")?).into();
        cfg.validate()?;
        let s = pseudosample::ppnp(&borrow(sino, "sino")?.0, &cfg, &mut RngStream::new(seed))?;
        put(out, boxed_grid(s), "out")
    })
}

/// One mask-perturbed pseudo-sample.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fct_ppmp(
    sino: *const FctGrid,
    config: *const FctPerturbConfig,
    seed: u64,
    out: *mut *mut FctGrid,
) -> FctStatus {
    guard(|| {
        let cfg: PerturbConfig = (*borrow(config, "config")?).into();
        cfg.validate()?;
        let s = pseudosample::ppmp(&borrow(sino, "sino")?.0, &cfg, &mut RngStream::new(seed))?;
        put(out, boxed_grid(s), "out")
    })
}

/// Trains a denoiser on one non-negative low-dose sinogram.
///
/// # Safety
/// Pointers must be valid; `losses` may be null, otherwise it must hold
/// `train->steps` doubles.
#[no_mangle]
pub unsafe extern "C" fn fct_train(
    sino: *const FctGrid,
    perturb: *const FctPerturbConfig,
    train: *const FctTrainConfig,
    seed: u64,
    losses: *mut f64,
    out: *mut *mut FctNet,
) -> FctStatus {
    guard(|| {
        let perturb: PerturbConfig = (*borrow(perturb, "perturb")?).into();
        let train: TrainConfig = (*borrow(train, "train")?).into();
        perturb.validate()?;
        train.validate()?;
        let outcome = denoiser::train(
            &borrow(sino, "sino")?.0,
            &perturb,
            &train,
            &RngStream::new(seed),
        )?;
        if !losses.is_null() {
            std::slice::from_raw_parts_mut(losses, outcome.losses.len())
                .copy_from_slice(&outcome.losses);
        }
        let net = Box::new(FctNet {
            net: outcome.net,
            scale: outcome.scale,
        });
        put(out, Box::into_raw(net), "out")
    })
}

/// Releases a net. Null is ignored.
///
/// # Safety
/// `net` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fct_net_free(net: *mut FctNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fct_net_scale(net: *const FctNet, scale: *mut f64) -> FctStatus {
    guard(|| put(scale, borrow(net, "net")?.scale, "scale"))
}

/// Denoises with the scale stored in the net.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fct_net_infer(
    net: *const FctNet,
    sino: *const FctGrid,
    out: *mut *mut FctGrid,
) -> FctStatus {
    guard(|| {
        let n = borrow(net, "net")?;
        let d = denoiser::infer(&n.net, &borrow(sino, "sino")?.0, n.scale)?;
        put(out, boxed_grid(d), "out")
    })
}

/// Writes the net as a bundle directory.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fct_net_save(net: *const FctNet, dir: *const c_char) -> FctStatus {
    guard(|| {
        let n = borrow(net, "net")?;
        denoiser::save_net(&n.net, n.scale, "", path_arg(dir, "dir")?)?;
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fct_net_load(dir: *const c_char, out: *mut *mut FctNet) -> FctStatus {
    guard(|| {
        let (net, manifest) = denoiser::load_net(path_arg(dir, "dir")?)?;
        let net = Box::new(FctNet {
            net,
            scale: manifest.scale,
        });
        put(out, Box::into_raw(net), "out")
    })
}

fn metric_config(data_range: f64) -> MetricConfig {
    MetricConfig {
        data_range: (data_range > 0.0).then_some(data_range),
        ..MetricConfig::default()
    }
}

/// PSNR in dB. `data_range <= 0` (or NaN) selects the reference's range.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fct_psnr(
    reference: *const FctGrid,
    test: *const FctGrid,
    data_range: f64,
    out: *mut f64,
) -> FctStatus {
    guard(|| {
        let v = metrics::psnr(
            &borrow(reference, "reference")?.0,
            &borrow(test, "test")?.0,
            &metric_config(data_range),
        )?;
        put(out, v, "out")
    })
}

/// SSIM. `data_range` as for [`fct_psnr`].
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fct_ssim(
    reference: *const FctGrid,
    test: *const FctGrid,
    data_range: f64,
    out: *mut f64,
) -> FctStatus {
    guard(|| {
        let v = metrics::ssim(
            &borrow(reference, "reference")?.0,
            &borrow(test, "test")?.0,
            &metric_config(data_range),
        )?;
        put(out, v, "out")
    })
}

/// Full pipeline into `output_dir`. `config_path` may be null for the desk
/// profile with seed 0.
///
/// # Safety
/// `config_path` is null or NUL-terminated; `output_dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fct_run_all(
    config_path: *const c_char,
    output_dir: *const c_char,
) -> FctStatus {
    guard(|| {
        let config = if config_path.is_null() {
            None
        } else {
            Some(path_arg(config_path, "config_path")?)
        };
        let dir = path_arg(output_dir, "output_dir")?;
        let dir = dir
            .to_str()
            .ok_or_else(|| Error::InvalidArgument("output_dir is not valid UTF-8".into()))?;
        let overrides = [(
            "output_dir".to_string(),
            format!("\"{}\"", dir.replace('\\', "\\\\").replace('"', "\\\"")),
        )];
        let resolved = load_config(config.as_deref(), &overrides)?;
        cmd_run_all(&resolved.config)?;
        Ok(())
    })
}
