//! Diagnostic experiments: PCA embeddings of sample banks, residual
//! autocorrelation, the truncation ablation and hyperparameter sweeps.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{fmt_f64, CsvTable, Grid2D};
use crate::metrics::QualityReport;
use crate::pipeline::{clean_data, noisy_data, run_scenario, RunConfig};
use crate::pseudosample::{build_banks, clamp_bank, SampleBank};
use crate::rng::{tags, RngStream};
use crate::spectrum::Dft2d;

/// Principal components of flattened samples, computed from the
/// samples x samples Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit directions in sample space; all-zero for degenerate components.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the Gram matrix, descending.
    pub eigenvalues: Vec<f64>,
    /// `coords[i][j]`: sample `i` on component `j`.
    pub coords: Vec<Vec<f64>>,
}

impl Pca {
    /// Centered sample `i` rebuilt from its coordinates.
    pub fn reconstruct(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.mean.len()];
        for (c, u) in self.coords[i].iter().zip(&self.components) {
            out.iter_mut().zip(u).for_each(|(o, v)| *o += c * v);
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative eigenvalue floor below which a component counts as degenerate.
const DEGENERATE: f64 = 1e-12;

pub fn pca(samples: &[Grid2D], k: usize) -> Result<Pca> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!(
            "PCA needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    for s in &samples[1..] {
        samples[0].ensure_same_shape(s)?;
    }
    let m = samples.len();
    let d = samples[0].len();
    if k == 0 || k > (m - 1).min(d) {
        return Err(Error::invalid(format!(
            "k must be in 1..={}, got {k}",
            (m - 1).min(d)
        )));
    }
    let mut mean = vec![0.0; d];
    for s in samples {
        mean.iter_mut().zip(s.data()).for_each(|(a, v)| *a += v);
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    let centered: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.data().iter().zip(&mean).map(|(v, mu)| v - mu).collect())
        .collect();
    let gram = DMatrix::from_fn(m, m, |i, j| dot(&centered[i], &centered[j]));
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);

    let mut components = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let lambda = eig.eigenvalues[idx];
        eigenvalues.push(lambda.max(0.0));
        if !(lambda > DEGENERATE * top) || top == 0.0 {
            log::warn!(
                "PCA component {} is degenerate (eigenvalue {lambda:e}); embedding it at 0",
                components.len() + 1
            );
            components.push(vec![0.0; d]);
            continue;
        }
        let v = eig.eigenvectors.column(idx);
        let mut u = vec![0.0; d];
        for (i, row) in centered.iter().enumerate() {
            u.iter_mut().zip(row).for_each(|(a, x)| *a += v[i] * x);
        }
        let norm = dot(&u, &u).sqrt();
        u.iter_mut().for_each(|a| *a /= norm);
        // Sign convention: the largest-magnitude entry is positive.
        let pivot = u.iter().copied().fold(
            0.0f64,
            |best, x| if x.abs() > best.abs() { x } else { best },
        );
        if pivot < 0.0 {
            u.iter_mut().for_each(|a| *a = -*a);
        }
        components.push(u);
    }
    let coords = centered
        .iter()
        .map(|x| components.iter().map(|u| dot(x, u)).collect())
        .collect();
    Ok(Pca {
        mean,
        components,
        eigenvalues,
        coords,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPoint {
    pub label: String,
    pub coords: Vec<f64>,
}

pub fn pca_embed(samples: &[(String, Grid2D)], k: usize) -> Result<Vec<EmbeddingPoint>> {
    let grids: Vec<Grid2D> = samples.iter().map(|(_, g)| g.clone()).collect();
    let p = pca(&grids, k)?;
    Ok(samples
        .iter()
        .zip(p.coords)
        .map(|((label, _), coords)| EmbeddingPoint {
            label: label.clone(),
            coords,
        })
        .collect())
}

pub fn embedding_table(points: &[EmbeddingPoint]) -> CsvTable {
    let k = points.first().map_or(0, |p| p.coords.len());
    let mut t = CsvTable::new(
        std::iter::once("label".to_string()).chain((1..=k).map(|i| format!("pc{i}"))),
    );
    for p in points {
        t.push(std::iter::once(p.label.clone()).chain(p.coords.iter().map(|&c| fmt_f64(c))));
    }
    t
}

/// Mean silhouette coefficient with Euclidean distances. Points in
/// singleton clusters score 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if points.len() != labels.len() || points.len() < 2 {
        return Err(Error::invalid("silhouette needs >= 2 labelled points"));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::invalid("silhouette needs at least two clusters"));
    }
    let dist = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let mean_to = |class: usize| -> Option<f64> {
            let ds: Vec<f64> = points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i && labels[j] == class)
                .map(|(_, q)| dist(p, q))
                .collect();
            (!ds.is_empty()).then(|| ds.iter().sum::<f64>() / ds.len() as f64)
        };
        let Some(a) = mean_to(labels[i]) else {
            continue;
        };
        let b = classes
            .iter()
            .filter(|&&c| c != labels[i])
            .filter_map(|&c| mean_to(c))
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / points.len() as f64)
}

/// Circular autocorrelation of a mean-removed field, normalized to 1 at lag
/// (0, 0). Entry `(r, c)` holds lag `(r, c)` modulo the shape.
pub fn autocorr_map(field: &Grid2D) -> Result<Grid2D> {
    let (rows, cols) = field.shape();
    let mean = field.data().iter().sum::<f64>() / field.len() as f64;
    let centered: Vec<f64> = field.data().iter().map(|v| v - mean).collect();
    if centered.iter().all(|&v| v == 0.0) {
        return Err(Error::Numeric("residual has zero variance".into()));
    }
    let dft = Dft2d::new(rows, cols);
    let mut spec = dft.forward_real(&centered);
    spec.iter_mut().for_each(|z| *z = (z.norm_sqr()).into());
    dft.inverse(&mut spec);
    let zero = spec[0].re;
    Grid2D::new(
        rows,
        cols,
        field.kind(),
        spec.iter().map(|z| z.re / zero).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutocorrRow {
    pub lag_row: i64,
    pub lag_col: i64,
    pub corr: f64,
}

/// Central cross profiles (row lags at column lag 0, then column lags at row
/// lag 0) of the autocorrelation of `noisy - clean`.
pub fn residual_autocorr(
    noisy: &Grid2D,
    clean: &Grid2D,
    max_lag: usize,
) -> Result<Vec<AutocorrRow>> {
    noisy.ensure_same_shape(clean)?;
    let (rows, cols) = noisy.shape();
    if 2 * max_lag >= rows.min(cols) {
        return Err(Error::invalid(format!(
            "max_lag {max_lag} must be below half of {}",
            rows.min(cols)
        )));
    }
    let residual = Grid2D::new(
        rows,
        cols,
        noisy.kind(),
        noisy
            .data()
            .iter()
            .zip(clean.data())
            .map(|(a, b)| a - b)
            .collect(),
    )?;
    let map = autocorr_map(&residual)?;
    let wrap = |lag: i64, n: usize| lag.rem_euclid(n as i64) as usize;
    let l = max_lag as i64;
    let mut out: Vec<AutocorrRow> = (-l..=l)
        .map(|lr| AutocorrRow {
            lag_row: lr,
            lag_col: 0,
            corr: map.get(wrap(lr, rows), 0),
        })
        .collect();
    out.extend((-l..=l).filter(|&lc| lc != 0).map(|lc| AutocorrRow {
        lag_row: 0,
        lag_col: lc,
        corr: map.get(0, wrap(lc, cols)),
    }));
    Ok(out)
}

pub fn autocorr_table(rows: &[AutocorrRow]) -> CsvTable {
    let mut t = CsvTable::new(["lag_row", "lag_col", "corr"]);
    for r in rows {
        t.push([
            r.lag_row.to_string(),
            r.lag_col.to_string(),
            fmt_f64(r.corr),
        ]);
    }
    t
}

/// Mean `|corr|` over profile entries whose nonzero lag lies in `lo..=hi`.
pub fn mean_abs_corr(rows: &[AutocorrRow], lo: i64, hi: i64) -> f64 {
    let sel: Vec<f64> = rows
        .iter()
        .filter(|r| {
            let lag = r.lag_row.abs().max(r.lag_col.abs());
            (lo..=hi).contains(&lag)
        })
        .map(|r| r.corr.abs())
        .collect();
    sel.iter().sum::<f64>() / sel.len() as f64
}

/// Banks built from one simulated noisy sinogram, before and after clamping.
#[derive(Debug, Clone)]
pub struct BankStudy {
    pub scale: f64,
    pub source: Grid2D,
    pub reference: Grid2D,
    pub raw: (SampleBank, SampleBank),
    pub clamped: (SampleBank, SampleBank),
    pub clamp_t: f64,
}

/// Simulates `cfg`'s noisy sinogram and builds its normalized banks with
/// the same streams training uses.
pub fn bank_study(cfg: &RunConfig) -> Result<BankStudy> {
    cfg.validate()?;
    let (_, clean, _) = clean_data(cfg)?;
    let noisy = noisy_data(cfg, &clean)?.map(|v| v.max(0.0))?;
    let scale = crate::denoiser::quantile(noisy.data(), cfg.train.scale_quantile);
    let source = noisy.scaled(1.0 / scale)?;
    let reference = clean.scaled(1.0 / scale)?;
    let raw = build_banks(
        &source,
        &cfg.perturb,
        &mut RngStream::new(cfg.seed).derive(tags::BANKS),
    )?;
    let t = cfg.perturb.clamp_t;
    let clamped = (clamp_bank(&raw.0, t)?, clamp_bank(&raw.1, t)?);
    Ok(BankStudy {
        scale,
        source,
        reference,
        raw,
        clamped,
        clamp_t: t,
    })
}

#[derive(Debug, Clone)]
pub struct EmbeddingStudy {
    pub before: Vec<EmbeddingPoint>,
    pub after: Vec<EmbeddingPoint>,
    /// Silhouette of noise vs mask points, before and after clamping.
    pub silhouette_before: f64,
    pub silhouette_after: f64,
}

fn labelled(
    noise: &SampleBank,
    mask: &SampleBank,
    source: &Grid2D,
    reference: &Grid2D,
) -> Vec<(String, Grid2D)> {
    let mut out: Vec<(String, Grid2D)> = Vec::new();
    out.extend(
        noise
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("noise_{i}"), s.clone())),
    );
    out.extend(
        mask.samples
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("mask_{i}"), s.clone())),
    );
    out.push(("source".into(), source.clone()));
    out.push(("reference".into(), reference.clone()));
    out
}

fn kind_silhouette(points: &[EmbeddingPoint]) -> Result<f64> {
    let (pts, labels): (Vec<Vec<f64>>, Vec<usize>) = points
        .iter()
        .filter_map(|p| {
            let class = if p.label.starts_with("noise_") {
                0
            } else if p.label.starts_with("mask_") {
                1
            } else {
                return None;
            };
            Some((p.coords.clone(), class))
        })
        .unzip();
    silhouette(&pts, &labels)
}

pub fn embedding_study(study: &BankStudy, k: usize) -> Result<EmbeddingStudy> {
    let before = pca_embed(
        &labelled(&study.raw.0, &study.raw.1, &study.source, &study.reference),
        k,
    )?;
    let clamp = |g: &Grid2D| g.map(|v| v.clamp(0.0, study.clamp_t));
    let after = pca_embed(
        &labelled(
            &study.clamped.0,
            &study.clamped.1,
            &clamp(&study.source)?,
            &clamp(&study.reference)?,
        ),
        k,
    )?;
    Ok(EmbeddingStudy {
        silhouette_before: kind_silhouette(&before)?,
        silhouette_after: kind_silhouette(&after)?,
        before,
        after,
    })
}

#[derive(Debug, Clone)]
pub struct CorrelationStudy {
    pub ldct: Vec<AutocorrRow>,
    /// Profiles of each clamped noise-bank sample against the clamped reference.
    pub pseudo: Vec<Vec<AutocorrRow>>,
    pub mean_abs_ldct: f64,
    pub mean_abs_pseudo: f64,
}

/// Mean |corr| over lags `1..=10` of raw low-dose residuals versus clamped
/// pseudo-sample residuals.
pub fn correlation_study(study: &BankStudy, max_lag: usize) -> Result<CorrelationStudy> {
    let ldct = residual_autocorr(&study.source, &study.reference, max_lag)?;
    let reference = study.reference.map(|v| v.clamp(0.0, study.clamp_t))?;
    let pseudo = study
        .clamped
        .0
        .samples
        .iter()
        .map(|s| residual_autocorr(s, &reference, max_lag))
        .collect::<Result<Vec<_>>>()?;
    let hi = max_lag.min(10) as i64;
    let mean_abs_pseudo =
        pseudo.iter().map(|p| mean_abs_corr(p, 1, hi)).sum::<f64>() / pseudo.len() as f64;
    Ok(CorrelationStudy {
        mean_abs_ldct: mean_abs_corr(&ldct, 1, hi),
        ldct,
        pseudo,
        mean_abs_pseudo,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub objective: String,
    pub seed: u64,
    pub report: QualityReport,
    /// Hash of the config with the clamp flag normalized: equal across the
    /// two objectives of one seed.
    pub control_hash: String,
}

pub fn control_hash(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.train.use_clamp = true;
    c.hash()
}

/// Clamped and unclamped training for every seed, all else identical.
pub fn truncation_ablation(base: &RunConfig, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::invalid("ablation needs at least one seed"));
    }
    let mut rows = Vec::new();
    for &seed in seeds {
        for (objective, clamp) in [("clamped", true), ("unclamped", false)] {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.train.use_clamp = clamp;
            let s = run_scenario(&cfg)?;
            log::info!(
                "ablation seed {seed} {objective}: psnr {:.3}",
                s.summary.denoised.psnr
            );
            rows.push(AblationRow {
                objective: objective.into(),
                seed,
                report: s.summary.denoised,
                control_hash: control_hash(&cfg),
            });
        }
    }
    Ok(rows)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (
        mean,
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt(),
    )
}

/// Per-seed rows followed by `mean` and `std` rows per objective.
pub fn ablation_table(rows: &[AblationRow]) -> CsvTable {
    let mut t = CsvTable::new(["objective", "seed", "psnr", "ssim", "rmse", "control_hash"]);
    for r in rows {
        t.push([
            r.objective.clone(),
            r.seed.to_string(),
            fmt_f64(r.report.psnr),
            fmt_f64(r.report.ssim),
            fmt_f64(r.report.rmse),
            r.control_hash.clone(),
        ]);
    }
    for objective in ["clamped", "unclamped"] {
        let sel: Vec<&AblationRow> = rows.iter().filter(|r| r.objective == objective).collect();
        if sel.is_empty() {
            continue;
        }
        let stats = [
            mean_std(&sel.iter().map(|r| r.report.psnr).collect::<Vec<_>>()),
            mean_std(&sel.iter().map(|r| r.report.ssim).collect::<Vec<_>>()),
            mean_std(&sel.iter().map(|r| r.report.rmse).collect::<Vec<_>>()),
        ];
        for (name, pick) in [("mean", 0usize), ("std", 1)] {
            let v = |s: (f64, f64)| if pick == 0 { s.0 } else { s.1 };
            t.push([
                objective.to_string(),
                name.to_string(),
                fmt_f64(v(stats[0])),
                fmt_f64(v(stats[1])),
                fmt_f64(v(stats[2])),
                String::new(),
            ]);
        }
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    N,
    RRange,
    Beta,
    ZDelta,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" => Ok(SweepParam::N),
            "r_range" => Ok(SweepParam::RRange),
            "beta" => Ok(SweepParam::Beta),
            "z_delta" => Ok(SweepParam::ZDelta),
            other => Err(Error::invalid(format!(
                "sweep parameter must be one of n, r_range, beta, z_delta; got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SweepValue {
    Scalar(f64),
    Range(f64, f64),
}

impl std::fmt::Display for SweepValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepValue::Scalar(v) => write!(f, "{v}"),
            SweepValue::Range(a, b) => write!(f, "{a}:{b}"),
        }
    }
}

impl std::str::FromStr for SweepValue {
    type Err = Error;

    /// `0.5` or `0.3:0.5`.
    fn from_str(s: &str) -> Result<Self> {
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad sweep value `{s}`")))
        };
        match s.split_once(':') {
            Some((a, b)) => Ok(SweepValue::Range(num(a)?, num(b)?)),
            None => Ok(SweepValue::Scalar(num(s)?)),
        }
    }
}

/// `base` with one perturbation hyperparameter replaced.
pub fn apply_sweep(base: &RunConfig, param: SweepParam, value: SweepValue) -> Result<RunConfig> {
    let mut cfg = base.clone();
    match (param, value) {
        (SweepParam::N, SweepValue::Scalar(v)) if v >= 1.0 && v.fract() == 0.0 => {
            cfg.perturb.n = v as usize
        }
        (SweepParam::RRange, SweepValue::Range(a, b)) => {
            cfg.perturb.r1 = a;
            cfg.perturb.r2 = b;
        }
        (SweepParam::Beta, SweepValue::Scalar(v)) => cfg.perturb.beta = v,
        (SweepParam::ZDelta, SweepValue::Scalar(v)) => cfg.perturb.z_delta = v,
        (p, v) => {
            return Err(Error::invalid(format!(
                "value `{v}` does not fit sweep parameter {p:?}"
            )))
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: SweepValue,
    pub seed: u64,
    pub report: QualityReport,
    pub config_hash: String,
}

pub fn hyperparam_sweep(
    base: &RunConfig,
    param: SweepParam,
    values: &[SweepValue],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::invalid(
            "sweep needs at least one value and one seed",
        ));
    }
    let mut rows = Vec::new();
    for &value in values {
        for &seed in seeds {
            let mut cfg = apply_sweep(base, param, value)?;
            cfg.seed = seed;
            let s = run_scenario(&cfg)?;
            log::info!(
                "sweep {param:?}={value} seed {seed}: psnr {:.3}",
                s.summary.denoised.psnr
            );
            rows.push(SweepRow {
                param,
                value,
                seed,
                report: s.summary.denoised,
                config_hash: cfg.hash(),
            });
        }
    }
    Ok(rows)
}

pub fn sweep_table(rows: &[SweepRow]) -> CsvTable {
    let mut t = CsvTable::new([
        "param",
        "value",
        "seed",
        "psnr",
        "ssim",
        "rmse",
        "config_hash",
    ]);
    for r in rows {
        let param = serde_json::to_value(r.param).expect("serializes");
        t.push([
            param.as_str().unwrap_or_default().to_string(),
            r.value.to_string(),
            r.seed.to_string(),
            fmt_f64(r.report.psnr),
            fmt_f64(r.report.ssim),
            fmt_f64(r.report.rmse),
            r.config_hash.clone(),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridKind;

    fn random(rows: usize, cols: usize, rng: &mut RngStream) -> Grid2D {
        Grid2D::from_fn(rows, cols, GridKind::Sinogram, |_, _| rng.standard_normal()).unwrap()
    }

    #[test]
    fn identical_samples_embed_at_origin() {
        let g = random(4, 5, &mut RngStream::new(1));
        let pts = pca_embed(&[("a".into(), g.clone()), ("b".into(), g)], 1).unwrap();
        assert!(pts.iter().all(|p| p.coords == vec![0.0]));
    }

    #[test]
    fn antipodal_pair_is_rank_one() {
        let v = random(3, 4, &mut RngStream::new(2));
        let neg = v.map(|x| -x).unwrap();
        let norm = v.sum_squares().sqrt();
        let p = pca(&[v, neg], 1).unwrap();
        assert!((p.coords[0][0].abs() - norm).abs() < 1e-12);
        assert!((p.coords[0][0] + p.coords[1][0]).abs() < 1e-12);
        let u = &p.components[0];
        let pivot = u
            .iter()
            .copied()
            .fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
        assert!(pivot > 0.0);
    }

    #[test]
    fn full_rank_reconstruction() {
        let mut rng = RngStream::new(3);
        let samples: Vec<Grid2D> = (0..6).map(|_| random(8, 9, &mut rng)).collect();
        let p = pca(&samples, 5).unwrap();
        assert!(p.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        for (i, s) in samples.iter().enumerate() {
            let rec = p.reconstruct(i);
            let centered: Vec<f64> = s.data().iter().zip(&p.mean).map(|(a, m)| a - m).collect();
            let norm = dot(&centered, &centered).sqrt();
            let err = rec
                .iter()
                .zip(&centered)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(err < 1e-8 * norm);
        }
        assert!(pca(&samples[..1], 1).is_err());
        assert!(pca(&samples, 6).is_err());
    }

    #[test]
    fn silhouette_of_separated_clusters() {
        let pts = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1]];
        let s = silhouette(&pts, &[0, 0, 1, 1]).unwrap();
        assert!(s > 0.9);
        let mixed = silhouette(&pts, &[0, 1, 0, 1]).unwrap();
        assert!(mixed < 0.0);
        assert!(silhouette(&pts, &[0, 0, 0, 0]).is_err());
    }

    #[test]
    fn white_noise_autocorrelation() {
        let mut rng = RngStream::new(4);
        let noisy = random(64, 80, &mut rng);
        let clean = Grid2D::zeros(64, 80, GridKind::Sinogram);
        let rows = residual_autocorr(&noisy, &clean, 10).unwrap();
        let bound = 4.0 / ((64 * 80) as f64).sqrt();
        for r in &rows {
            if r.lag_row == 0 && r.lag_col == 0 {
                assert_eq!(r.corr, 1.0);
            } else {
                assert!(r.corr.abs() < bound, "{r:?}");
            }
        }
        assert_eq!(rows.len(), 41);
        assert!(residual_autocorr(&noisy, &clean, 32).is_err());
        assert!(residual_autocorr(&clean, &clean, 5).is_err());
    }

    #[test]
    fn periodic_residual_peaks_at_period() {
        let mut rng = RngStream::new(5);
        let pattern: Vec<f64> = (0..6).map(|_| rng.standard_normal()).collect();
        let noisy = Grid2D::from_fn(20, 36, GridKind::Sinogram, |_, c| pattern[c % 6]).unwrap();
        let clean = Grid2D::zeros(20, 36, GridKind::Sinogram);
        let rows = residual_autocorr(&noisy, &clean, 8).unwrap();
        let at6 = rows
            .iter()
            .find(|r| r.lag_row == 0 && r.lag_col == 6)
            .unwrap();
        assert!((at6.corr - 1.0).abs() < 1e-12);
        let csv = autocorr_table(&rows).render();
        assert!(csv.starts_with("lag_row,lag_col,corr\n-8,0,"));
    }

    #[test]
    fn sweep_values_parse_and_apply() {
        let base = RunConfig::desk(0);
        let v: SweepValue = "0.3:0.5".parse().unwrap();
        let cfg = apply_sweep(&base, SweepParam::RRange, v).unwrap();
        assert_eq!((cfg.perturb.r1, cfg.perturb.r2), (0.3, 0.5));
        let cfg = apply_sweep(&base, SweepParam::N, "8".parse().unwrap()).unwrap();
        assert_eq!(cfg.perturb.n, 8);
        assert!(apply_sweep(&base, SweepParam::N, "2.5".parse().unwrap()).is_err());
        assert!(apply_sweep(&base, SweepParam::RRange, "0.5".parse().unwrap()).is_err());
        assert!(apply_sweep(&base, SweepParam::RRange, "0.7:0.5".parse().unwrap()).is_err());
        assert!("x".parse::<SweepParam>().is_err());
    }

    #[test]
    fn control_hash_ignores_only_the_clamp_flag() {
        let a = RunConfig::desk(3);
        let mut b = a.clone();
        b.train.use_clamp = false;
        assert_eq!(control_hash(&a), control_hash(&b));
        b.perturb.n = 2;
        assert_ne!(control_hash(&a), control_hash(&b));
    }

    #[test]
    fn bank_study_on_small_geometry() {
        let mut cfg = RunConfig::desk(1);
        cfg.geometry = crate::tomo::ScanGeometry::new(32, 24, 47, 1.0).unwrap();
        let study = bank_study(&cfg).unwrap();
        let emb = embedding_study(&study, 2).unwrap();
        assert_eq!(emb.before.len(), 2 * cfg.perturb.n + 2);
        assert!(emb.before.iter().all(|p| p.coords.len() == 2));
        assert!(emb.silhouette_before.is_finite());
        let corr = correlation_study(&study, 5).unwrap();
        assert_eq!(corr.pseudo.len(), cfg.perturb.n);
        assert!(corr.mean_abs_ldct.is_finite() && corr.mean_abs_pseudo.is_finite());
        assert!(embedding_table(&emb.before)
            .render()
            .starts_with("label,pc1,pc2\nnoise_0,"));
    }
}
