//! End-to-end runs: phantom, projection, low-dose simulation, self-supervised
//! training, inference, reconstruction and evaluation.
//!
//! A [`RunConfig`] is resolved from a profile's defaults, an optional JSON
//! file and dotted `section.field=value` overrides, in that order. Every run
//! of [`cmd_run_all`] leaves a `manifest.json` behind, including failed ones.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::denoiser::{
    fit, infer, prepare_training_data, save_net, ConvNet, TrainConfig, TrainingData,
};
use crate::error::{Error, Result};
use crate::grid::{export_pgm, fmt_f64, write_tensor, CsvTable, Dtype, Grid2D};
use crate::metrics::{metrics_table, quality, snr_cnr, MetricConfig, QualityReport, Roi};
use crate::noise::{simulate_ldct, NoiseModel, DEFAULT_FLOOR_COUNTS};
use crate::pseudosample::PerturbConfig;
use crate::rng::{tags, RngStream};
use crate::tomo::{fbp, radon, shepp_logan, ScanGeometry};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!(
                "profile must be `desk` or `paper`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Full-dose incident photons per bin.
    pub i0_full: f64,
    /// Fraction of the full dose actually delivered.
    pub dose: f64,
    pub gaussian_sigma: f64,
    pub floor_counts: f64,
    /// The phantom's sinogram is rescaled so its largest line integral
    /// equals this attenuation.
    pub peak_projection: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            i0_full: 1e5,
            dose: 0.10,
            gaussian_sigma: 0.0,
            floor_counts: DEFAULT_FLOOR_COUNTS,
            peak_projection: 4.0,
        }
    }
}

impl NoiseConfig {
    pub fn model(&self) -> NoiseModel {
        NoiseModel {
            floor_counts: self.floor_counts,
            ..NoiseModel::from_dose(self.i0_full, self.dose, self.gaussian_sigma)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dose > 0.0 && self.dose <= 1.0) {
            return Err(Error::Config(format!(
                "noise: dose must be in (0, 1], got {}",
                self.dose
            )));
        }
        if !(self.peak_projection > 0.0) || !self.peak_projection.is_finite() {
            return Err(Error::Config(format!(
                "noise: peak_projection must be > 0, got {}",
                self.peak_projection
            )));
        }
        if !(self.i0_full > 0.0) {
            return Err(Error::Config(format!(
                "noise: i0_full must be > 0, got {}",
                self.i0_full
            )));
        }
        self.model().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Also write the training banks as tensor files.
    pub save_banks: bool,
    pub geometry: ScanGeometry,
    pub noise: NoiseConfig,
    pub perturb: PerturbConfig,
    pub train: TrainConfig,
    pub metrics: MetricConfig,
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let desk = Self {
            profile,
            seed: 0,
            output_dir: PathBuf::from("runs/out"),
            save_banks: true,
            geometry: ScanGeometry::desk(),
            noise: NoiseConfig::default(),
            perturb: PerturbConfig::default(),
            train: TrainConfig {
                steps: 500,
                hidden_channels: 32,
                ..TrainConfig::default()
            },
            metrics: MetricConfig::default(),
        };
        match profile {
            Profile::Desk => desk,
            Profile::Paper => Self {
                geometry: ScanGeometry::paper(),
                train: TrainConfig {
                    steps: 1500,
                    hidden_channels: 64,
                    ..desk.train
                },
                ..desk
            },
        }
    }

    pub fn desk(seed: u64) -> Self {
        Self {
            seed,
            ..Self::for_profile(Profile::Desk)
        }
    }

    /// Invariant violations as `(section, message)` pairs, in section order.
    pub fn issues(&self) -> Vec<(&'static str, String)> {
        let checks: [(&'static str, Result<()>); 5] = [
            ("geometry", self.geometry.validate()),
            ("noise", self.noise.validate()),
            ("perturb", self.perturb.validate()),
            ("train", self.train.validate()),
            ("metrics", self.metrics.validate()),
        ];
        checks
            .into_iter()
            .filter_map(|(section, r)| r.err().map(|e| (section, e.to_string())))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        match self.issues().into_iter().next() {
            None => Ok(()),
            Some((_, msg)) => Err(Error::Config(
                msg.trim_start_matches("invalid configuration: ")
                    .to_string(),
            )),
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        sha256_hex(
            serde_json::to_string(&c)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Parses an override value as JSON, falling back to a plain string.
fn override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            Error::Config(format!(
                "override `{path}`: `{}` is not a section",
                parts[..i].join(".")
            ))
        })?;
        if i + 1 == parts.len() {
            if !obj.contains_key(*part) {
                return Err(Error::Config(format!(
                    "override `{path}`: unknown field `{part}`"
                )));
            }
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .get_mut(*part)
            .ok_or_else(|| Error::Config(format!("override `{path}`: unknown section `{part}`")))?;
    }
    Ok(())
}

/// Accepts either a bare config object or a run manifest (its `config`).
fn config_object(user: Value) -> Value {
    match user {
        Value::Object(mut o) if o.contains_key("config") && o.contains_key("artifacts") => {
            o.remove("config").unwrap_or(Value::Null)
        }
        v => v,
    }
}

/// Resolved config plus warnings about applied defaults.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub warnings: Vec<String>,
}

/// Merges profile defaults, `user` and `overrides` without checking invariants.
fn assemble(user: Option<Value>, overrides: &[(String, String)]) -> Result<Resolved> {
    let user = user.map(config_object);
    if let Some(u) = &user {
        if !u.is_object() {
            return Err(Error::Config("configuration must be a JSON object".into()));
        }
    }
    let profile_raw = overrides
        .iter()
        .rev()
        .find(|(k, _)| k == "profile")
        .map(|(_, v)| v.clone())
        .or_else(|| {
            user.as_ref()
                .and_then(|u| u.get("profile"))
                .and_then(|p| p.as_str())
                .map(str::to_string)
        });
    let profile: Profile = match profile_raw {
        Some(p) => p.parse()?,
        None => Profile::Desk,
    };
    let mut warnings = Vec::new();
    let has_seed = user.as_ref().is_some_and(|u| u.get("seed").is_some())
        || overrides.iter().any(|(k, _)| k == "seed");
    if !has_seed {
        warnings.push("no seed given; using seed 0".to_string());
    }
    let mut value =
        serde_json::to_value(RunConfig::for_profile(profile)).expect("config serializes");
    if let Some(u) = user {
        merge(&mut value, u);
    }
    for (path, raw) in overrides {
        set_path(&mut value, path, override_value(raw))?;
    }
    let config: RunConfig =
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
    Ok(Resolved { config, warnings })
}

pub fn resolve_config(user: Option<Value>, overrides: &[(String, String)]) -> Result<Resolved> {
    let resolved = assemble(user, overrides)?;
    resolved.config.validate()?;
    Ok(resolved)
}

pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Resolved> {
    let user = match path {
        None => None,
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Some(
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            )
        }
    };
    resolve_config(user, overrides)
}

/// One diagnostic of `validate-config`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub config: Option<RunConfig>,
    pub warnings: Vec<String>,
    pub errors: Vec<ConfigIssue>,
}

impl Diagnostics {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }
}

/// 1-based line of the first `"key"` after the line holding `"section"`.
fn find_key_line(text: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    let start = section
        .and_then(|s| {
            let sec = format!("\"{s}\"");
            text.lines().position(|l| l.contains(&sec))
        })
        .unwrap_or(0);
    text.lines()
        .enumerate()
        .skip(start)
        .find(|(_, l)| l.contains(&needle))
        .or_else(|| text.lines().enumerate().find(|(_, l)| l.contains(&needle)))
        .map(|(i, _)| i + 1)
}

fn section_fields(section: &str) -> &'static [&'static str] {
    match section {
        "geometry" => &["image_size", "n_angles", "n_detectors", "detector_spacing"],
        "noise" => &[
            "i0_full",
            "dose",
            "gaussian_sigma",
            "floor_counts",
            "peak_projection",
            "i0",
        ],
        "perturb" => &["r1", "r2", "beta", "z_delta", "n", "clamp_t"],
        "train" => &[
            "steps",
            "lr",
            "hidden_channels",
            "final_relu",
            "scale_quantile",
            "use_clamp",
        ],
        "metrics" => &[
            "data_range",
            "window",
            "ssim_window",
            "ssim_sigma",
            "ssim_k1",
            "ssim_k2",
        ],
        _ => &[],
    }
}

fn backticked(msg: &str) -> Option<&str> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(&msg[start..start + len])
}

/// Full invariant check of a config file with line-level messages.
pub fn cmd_validate_config(path: &Path) -> Result<Diagnostics> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut diag = Diagnostics {
        config: None,
        warnings: Vec::new(),
        errors: Vec::new(),
    };
    let user: Value = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(e) => {
            diag.errors.push(ConfigIssue {
                line: Some(e.line()),
                message: format!("parse error at column {}: {e}", e.column()),
            });
            return Ok(diag);
        }
    };
    match assemble(Some(user), &[]) {
        Err(e) => {
            let message = e.to_string();
            let line = backticked(&message).and_then(|k| find_key_line(&text, None, k));
            diag.errors.push(ConfigIssue { line, message });
        }
        Ok(r) => {
            for (section, message) in r.config.issues() {
                let message = message
                    .trim_start_matches("invalid configuration: ")
                    .to_string();
                let key = section_fields(section).iter().find(|f| {
                    message
                        .split(|c: char| !c.is_alphanumeric() && c != '_')
                        .any(|w| w == **f)
                });
                let line = key.and_then(|k| find_key_line(&text, Some(section), k));
                diag.errors.push(ConfigIssue { line, message });
            }
            diag.warnings = r.warnings;
            diag.config = Some(r.config);
        }
    }
    Ok(diag)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub noisy: QualityReport,
    pub denoised: QualityReport,
    pub cnr_noisy: f64,
    pub cnr_denoised: f64,
    pub snr_noisy: f64,
    pub snr_denoised: f64,
    /// Sinogram-domain PSNR against the clean sinogram.
    pub sino_psnr_noisy: f64,
    pub sino_psnr_denoised: f64,
    /// FBP of the clean sinogram against the phantom: the reconstruction ceiling.
    pub clean_fbp: QualityReport,
    /// Noisy and denoised recons against the clean-sinogram FBP.
    pub noisy_vs_clean_fbp: QualityReport,
    pub denoised_vs_clean_fbp: QualityReport,
    pub final_loss: f64,
    /// Normalization scale `s` used in training and inference.
    pub scale: f64,
    /// Factor mapping phantom line integrals to attenuation.
    pub attenuation_scale: f64,
}

impl MetricSummary {
    pub fn table(&self) -> CsvTable {
        metrics_table([
            ("psnr_noisy", self.noisy.psnr),
            ("psnr_denoised", self.denoised.psnr),
            ("ssim_noisy", self.noisy.ssim),
            ("ssim_denoised", self.denoised.ssim),
            ("rmse_noisy", self.noisy.rmse),
            ("rmse_denoised", self.denoised.rmse),
            ("cnr_noisy", self.cnr_noisy),
            ("cnr_denoised", self.cnr_denoised),
            ("snr_noisy", self.snr_noisy),
            ("snr_denoised", self.snr_denoised),
            ("sino_psnr_noisy", self.sino_psnr_noisy),
            ("sino_psnr_denoised", self.sino_psnr_denoised),
            ("psnr_clean_fbp", self.clean_fbp.psnr),
            ("ssim_clean_fbp", self.clean_fbp.ssim),
            ("psnr_noisy_vs_clean_fbp", self.noisy_vs_clean_fbp.psnr),
            (
                "psnr_denoised_vs_clean_fbp",
                self.denoised_vs_clean_fbp.psnr,
            ),
            ("ssim_noisy_vs_clean_fbp", self.noisy_vs_clean_fbp.ssim),
            (
                "ssim_denoised_vs_clean_fbp",
                self.denoised_vs_clean_fbp.ssim,
            ),
            ("final_loss", self.final_loss),
            ("scale", self.scale),
            ("attenuation_scale", self.attenuation_scale),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub artifacts: Vec<ArtifactRecord>,
    pub timings: Vec<StageTiming>,
    pub metrics: Option<MetricSummary>,
    pub error: Option<String>,
}

/// Signal (inside the upper 0.3 ellipse) and background (brain) squares of
/// the phantom, scaled to `size`.
pub fn phantom_rois(size: usize) -> (Roi, Roi) {
    let half = size as f64 / 2.0;
    let center = (size as f64 - 1.0) / 2.0;
    let square = |x: f64, y: f64, h: f64| {
        let side = ((2.0 * h * half).round() as usize).max(2);
        let r0 = (center - y * half - side as f64 / 2.0).round().max(0.0) as usize;
        let c0 = (center + x * half - side as f64 / 2.0).round().max(0.0) as usize;
        Roi::new(r0, c0, side, side)
    };
    (square(0.0, 0.35, 0.08), square(0.3, -0.4, 0.08))
}

/// Everything a run produces, in memory.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub phantom: Grid2D,
    pub clean_sino: Grid2D,
    pub noisy_sino: Grid2D,
    pub training: TrainingData,
    pub net: ConvNet,
    pub losses: Vec<f64>,
    pub denoised_sino: Grid2D,
    pub recon_clean: Grid2D,
    pub recon_noisy: Grid2D,
    pub recon_denoised: Grid2D,
    pub summary: MetricSummary,
    pub timings: Vec<StageTiming>,
}

/// Phantom, its scaled clean sinogram, and the attenuation factor applied.
pub fn clean_data(cfg: &RunConfig) -> Result<(Grid2D, Grid2D, f64)> {
    let phantom = shepp_logan(cfg.geometry.image_size)?;
    let raw = radon(&phantom, &cfg.geometry)?;
    let peak = raw.max();
    if !(peak > 0.0) {
        return Err(Error::Numeric("phantom projects to zero".into()));
    }
    let factor = cfg.noise.peak_projection / peak;
    Ok((phantom, raw.scaled(factor)?, factor))
}

pub fn noisy_data(cfg: &RunConfig, clean: &Grid2D) -> Result<Grid2D> {
    simulate_ldct(
        clean,
        &cfg.noise.model(),
        &mut RngStream::new(cfg.seed).derive(tags::NOISE),
    )
}

struct Evaluation<'a> {
    phantom: &'a Grid2D,
    clean: &'a Grid2D,
    noisy: &'a Grid2D,
    denoised: &'a Grid2D,
    recon_clean: &'a Grid2D,
    recon_noisy: &'a Grid2D,
    recon_denoised: &'a Grid2D,
}

fn evaluate(
    cfg: &RunConfig,
    e: &Evaluation,
    final_loss: f64,
    scale: f64,
    factor: f64,
) -> Result<MetricSummary> {
    let (roi, bg) = phantom_rois(e.phantom.rows());
    let (snr_noisy, cnr_noisy) = snr_cnr(e.recon_noisy, &roi, &bg)?;
    let (snr_denoised, cnr_denoised) = snr_cnr(e.recon_denoised, &roi, &bg)?;
    let sino_cfg = MetricConfig {
        data_range: None,
        window: None,
        ..cfg.metrics
    };
    Ok(MetricSummary {
        noisy: quality(e.phantom, e.recon_noisy, &cfg.metrics)?,
        denoised: quality(e.phantom, e.recon_denoised, &cfg.metrics)?,
        cnr_noisy,
        cnr_denoised,
        snr_noisy,
        snr_denoised,
        sino_psnr_noisy: crate::metrics::psnr(e.clean, e.noisy, &sino_cfg)?,
        sino_psnr_denoised: crate::metrics::psnr(e.clean, e.denoised, &sino_cfg)?,
        clean_fbp: quality(e.phantom, e.recon_clean, &cfg.metrics)?,
        noisy_vs_clean_fbp: quality(e.recon_clean, e.recon_noisy, &cfg.metrics)?,
        denoised_vs_clean_fbp: quality(e.recon_clean, e.recon_denoised, &cfg.metrics)?,
        final_loss,
        scale,
        attenuation_scale: factor,
    })
}

/// Collects timings and, with an output directory, writes artifacts.
struct Recorder {
    dir: Option<PathBuf>,
    artifacts: Vec<ArtifactRecord>,
    timings: Vec<StageTiming>,
}

impl Recorder {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        log::info!("stage {name}");
        let t0 = Instant::now();
        let out = f(self).map_err(|e| Error::Stage {
            stage: name.to_string(),
            source: Box::new(e),
        });
        self.timings.push(StageTiming {
            stage: name.to_string(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        out
    }

    fn record(&mut self, path: &Path) -> Result<()> {
        let dir = self.dir.as_ref().expect("recording requires an output dir");
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let rel = path.strip_prefix(dir).unwrap_or(path);
        self.artifacts.push(ArtifactRecord {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn grid(&mut self, name: &str, grid: &Grid2D) -> Result<()> {
        if let Some(dir) = self.dir.clone() {
            let path = dir.join(name);
            write_tensor(grid, &path, Dtype::F64)?;
            self.record(&path)?;
        }
        Ok(())
    }

    fn image(&mut self, name: &str, grid: &Grid2D) -> Result<()> {
        self.grid(&format!("{name}.fct"), grid)?;
        if let Some(dir) = self.dir.clone() {
            let path = dir.join(format!("{name}.pgm"));
            export_pgm(grid, &path, (0.0, 1.0))?;
            self.record(&path)?;
        }
        Ok(())
    }

    fn table(&mut self, name: &str, table: &CsvTable) -> Result<()> {
        if let Some(dir) = self.dir.clone() {
            let path = dir.join(name);
            table.write(&path)?;
            self.record(&path)?;
        }
        Ok(())
    }

    fn files(&mut self, paths: Vec<PathBuf>) -> Result<()> {
        for p in paths {
            self.record(&p)?;
        }
        Ok(())
    }
}

fn run_stages(cfg: &RunConfig, rec: &mut Recorder) -> Result<Scenario> {
    let (phantom, clean, factor) = rec.stage("phantom", |r| {
        let out = clean_data(cfg)?;
        r.image("phantom", &out.0)?;
        r.grid("sino_clean.fct", &out.1)?;
        Ok(out)
    })?;
    let noisy = rec.stage("simulate", |r| {
        let noisy = noisy_data(cfg, &clean)?;
        r.grid("sino_noisy.fct", &noisy)?;
        Ok(noisy)
    })?;
    let root = RngStream::new(cfg.seed);
    // Log counts above i0 give slightly negative line integrals; the
    // denoiser works on the physical, non-negative part.
    let ld = noisy.map(|v| v.max(0.0))?;
    let training = rec.stage("banks", |r| {
        let data = prepare_training_data(&ld, &cfg.perturb, &cfg.train, &root)?;
        if cfg.save_banks {
            if let Some(dir) = r.dir.clone() {
                let banks = dir.join("banks");
                fs::create_dir_all(&banks).map_err(|e| Error::io(&banks, e))?;
                let paths = data.noise.save(&banks)?;
                r.files(paths)?;
                let paths = data.mask.save(&banks)?;
                r.files(paths)?;
            }
        }
        Ok(data)
    })?;
    let (net, losses) = rec.stage("train", |r| {
        let (net, losses) = fit(&training, &cfg.train, &root)?;
        if let Some(dir) = r.dir.clone() {
            let paths = save_net(&net, training.scale, &cfg.hash(), dir.join("net"))?;
            r.files(paths)?;
            let mut t = CsvTable::new(["step", "loss"]);
            for (i, l) in losses.iter().enumerate() {
                t.push([i.to_string(), fmt_f64(*l)]);
            }
            r.table("losses.csv", &t)?;
        }
        Ok((net, losses))
    })?;
    let denoised = rec.stage("infer", |r| {
        let out = infer(&net, &ld, training.scale)?;
        r.grid("sino_denoised.fct", &out)?;
        Ok(out)
    })?;
    let (recon_clean, recon_noisy, recon_denoised) = rec.stage("fbp", |r| {
        let rc = fbp(&clean, &cfg.geometry)?.scaled(1.0 / factor)?;
        let rn = fbp(&noisy, &cfg.geometry)?.scaled(1.0 / factor)?;
        let rd = fbp(&denoised, &cfg.geometry)?.scaled(1.0 / factor)?;
        r.image("recon_clean", &rc)?;
        r.image("recon_noisy", &rn)?;
        r.image("recon_denoised", &rd)?;
        Ok((rc, rn, rd))
    })?;
    let summary = rec.stage("metrics", |r| {
        let e = Evaluation {
            phantom: &phantom,
            clean: &clean,
            noisy: &noisy,
            denoised: &denoised,
            recon_clean: &recon_clean,
            recon_noisy: &recon_noisy,
            recon_denoised: &recon_denoised,
        };
        let final_loss = losses.last().copied().unwrap_or(f64::NAN);
        let summary = evaluate(cfg, &e, final_loss, training.scale, factor)?;
        r.table("metrics.csv", &summary.table())?;
        Ok(summary)
    })?;
    Ok(Scenario {
        phantom,
        clean_sino: clean,
        noisy_sino: noisy,
        training,
        net,
        losses,
        denoised_sino: denoised,
        recon_clean,
        recon_noisy,
        recon_denoised,
        summary,
        timings: rec.timings.clone(),
    })
}

/// Runs every stage in memory without touching the filesystem.
pub fn run_scenario(cfg: &RunConfig) -> Result<Scenario> {
    cfg.validate()?;
    let mut rec = Recorder {
        dir: None,
        artifacts: Vec::new(),
        timings: Vec::new(),
    };
    run_stages(cfg, &mut rec)
}

pub fn write_manifest(manifest: &RunManifest, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidHeader {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Runs the whole pipeline into `cfg.output_dir`. The manifest is written
/// even when a stage fails; the error is then returned after writing it.
pub fn cmd_run_all(cfg: &RunConfig) -> Result<(RunManifest, Option<Scenario>)> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut rec = Recorder {
        dir: Some(dir.clone()),
        artifacts: Vec::new(),
        timings: Vec::new(),
    };
    let result = run_stages(cfg, &mut rec);
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        config_hash: cfg.hash(),
        artifacts: rec.artifacts,
        timings: rec.timings,
        metrics: result.as_ref().ok().map(|s| s.summary),
        error: result.as_ref().err().map(|e| e.to_string()),
    };
    write_manifest(&manifest, &dir)?;
    match result {
        Ok(s) => Ok((manifest, Some(s))),
        Err(e) => Err(e),
    }
}
