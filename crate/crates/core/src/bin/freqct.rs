//! `freqct` command-line interface.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
//! Any `--section.field value` (or `--section.field=value`) flag overrides
//! the matching config field.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use freqct::analysis::{
    ablation_table, autocorr_table, bank_study, correlation_study, embedding_study,
    embedding_table, hyperparam_sweep, sweep_table, truncation_ablation, SweepParam, SweepValue,
};
use freqct::denoiser::{fit, infer, load_net, prepare_training_data, save_net};
use freqct::grid::{
    export_pgm, read_tensor, write_tensor, write_tensor_with_meta, CsvTable, Dtype,
};
use freqct::metrics::{
    metrics_table, nps, nps_table, psnr, rmse, snr_cnr, ssim, MetricConfig, Roi,
};
use freqct::noise::{fit_log_variance, simulate_ldct, variance_experiment, variance_table};
use freqct::pipeline::{cmd_run_all, cmd_validate_config, load_config, RunConfig};
use freqct::pseudosample::{build_banks, clamp_bank};
use freqct::rng::{tags, RngStream};
use freqct::tomo::{fbp_windowed, radon, shepp_logan, RampWindow};
use freqct::{Error, Grid2D, GridKind, Result};

#[derive(Parser, Debug)]
#[command(
    name = "freqct",
    version,
    about = "Zero-shot frequency-domain low-dose CT sinogram denoising"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// JSON run config (or a run manifest to replay).
    #[arg(long)]
    config: Option<PathBuf>,
    /// `desk` or `paper`.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a Shepp-Logan phantom.
    Phantom {
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pgm: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Parallel-beam projection of an image.
    Project {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Rescale so the largest line integral equals `noise.peak_projection`.
        #[arg(long)]
        to_attenuation: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Low-dose measurement of a clean sinogram.
    SimulateNoise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Noise and mask pseudo-sample banks of a sinogram.
    BuildBanks {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Divide by the training quantile scale first.
        #[arg(long)]
        normalize: bool,
        /// Clamp samples to `[0, perturb.clamp_t]`.
        #[arg(long)]
        clamp: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a denoiser on one noisy sinogram.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Apply a trained denoiser.
    Denoise {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filtered backprojection.
    Fbp {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Window::None)]
        window: Window,
        /// Divide the reconstruction by this factor.
        #[arg(long, default_value_t = 1.0)]
        divide_by: f64,
        #[arg(long)]
        pgm: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Image-quality metrics as `name,value` CSV.
    Metrics {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        data_range: Option<f64>,
        /// Clip to the [-1024, 3072] HU window.
        #[arg(long)]
        hu: bool,
        /// Signal ROI `row0,col0,rows,cols` for SNR/CNR.
        #[arg(long, requires = "background")]
        roi: Option<String>,
        #[arg(long, requires = "roi")]
        background: Option<String>,
        /// Also write the NPS of the background ROI of `test - reference`.
        #[arg(long, requires = "background")]
        nps_out: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Diagnostic experiments.
    #[command(subcommand)]
    Experiment(Experiment),
    /// Full pipeline with artifacts and a manifest.
    RunAll {
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Check a config file; exit 0 iff valid.
    ValidateConfig { path: PathBuf },
}

#[derive(Subcommand, Debug)]
enum Experiment {
    /// Monte-Carlo check of the log-domain variance law.
    Variance {
        #[arg(long, default_value_t = 1e4)]
        i0: f64,
        #[arg(long, default_value_t = 100_000)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PCA embedding of noise/mask banks before and after clamping.
    Pca {
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Residual autocorrelation of low-dose data and clamped pseudo-samples.
    Autocorr {
        #[arg(long, default_value_t = 10)]
        max_lag: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Clamped versus unclamped training.
    Ablation {
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// One pipeline run per (value, seed).
    Sweep {
        /// n, r_range, beta or z_delta.
        #[arg(long)]
        param: String,
        /// Comma-separated; ranges as `lo:hi`.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Window {
    None,
    Hann,
}

/// Splits `--a.b v` / `--a.b=v` flags out of `args`.
fn extract_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut iter = args.into_iter().peekable();
    while let Some(arg) = iter.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if !name.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = inline.or_else(|| iter.next()).unwrap_or_default();
        overrides.push((name, value));
    }
    (rest, overrides)
}

struct Ctx {
    overrides: Vec<(String, String)>,
}

impl Ctx {
    fn config(&self, args: &ConfigArgs) -> Result<RunConfig> {
        let mut ov = Vec::new();
        if let Some(p) = &args.profile {
            ov.push(("profile".to_string(), p.clone()));
        }
        if let Some(s) = args.seed {
            ov.push(("seed".to_string(), s.to_string()));
        }
        ov.extend(self.overrides.iter().cloned());
        let resolved = load_config(args.config.as_deref(), &ov)?;
        for w in &resolved.warnings {
            log::warn!("{w}");
        }
        Ok(resolved.config)
    }
}

fn parse_roi(s: &str) -> Result<Roi> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| {
            Error::InvalidArgument(format!("ROI must be `row0,col0,rows,cols`, got `{s}`"))
        })?;
    match v.as_slice() {
        [r0, c0, r, c] => Ok(Roi::new(*r0, *c0, *r, *c)),
        _ => Err(Error::InvalidArgument(format!(
            "ROI must have four fields, got `{s}`"
        ))),
    }
}

fn emit(table: &CsvTable, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => table.write(p),
        None => {
            print!("{}", table.render());
            Ok(())
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli, ctx: &Ctx) -> Result<()> {
    match cli.command {
        Command::Phantom {
            size,
            out,
            pgm,
            cfg,
        } => {
            let size = match size {
                Some(s) => s,
                None => ctx.config(&cfg)?.geometry.image_size,
            };
            let p = shepp_logan(size)?;
            write_tensor(&p, &out, Dtype::F64)?;
            if let Some(path) = pgm {
                export_pgm(&p, path, (0.0, 1.0))?;
            }
        }
        Command::Project {
            input,
            out,
            to_attenuation,
            cfg,
        } => {
            let cfg = ctx.config(&cfg)?;
            let image = read_tensor(&input)?;
            let mut sino = radon(&image, &cfg.geometry)?;
            let mut meta = std::collections::BTreeMap::new();
            if to_attenuation {
                let factor = cfg.noise.peak_projection / sino.max();
                sino = sino.scaled(factor)?;
                meta.insert("attenuation_scale".to_string(), factor.to_string());
            }
            write_tensor_with_meta(&sino, &out, Dtype::F64, &meta)?;
        }
        Command::SimulateNoise { input, out, cfg } => {
            let cfg = ctx.config(&cfg)?;
            let clean = read_tensor(&input)?;
            let model = cfg.noise.model();
            let noisy = simulate_ldct(
                &clean,
                &model,
                &mut RngStream::new(cfg.seed).derive(tags::NOISE),
            )?;
            let meta = [
                ("noise.i0".to_string(), model.i0.to_string()),
                (
                    "noise.gaussian_sigma".to_string(),
                    model.gaussian_sigma.to_string(),
                ),
                (
                    "noise.floor_counts".to_string(),
                    model.floor_counts.to_string(),
                ),
                ("seed".to_string(), cfg.seed.to_string()),
            ]
            .into_iter()
            .collect();
            write_tensor_with_meta(&noisy, &out, Dtype::F64, &meta)?;
        }
        Command::BuildBanks {
            input,
            out_dir,
            normalize,
            clamp,
            cfg,
        } => {
            let cfg = ctx.config(&cfg)?;
            let mut sino = read_tensor(&input)?;
            if normalize {
                let s = freqct::denoiser::quantile(sino.data(), cfg.train.scale_quantile);
                sino = sino.scaled(1.0 / s)?;
            }
            let (mut noise, mut mask) = build_banks(
                &sino,
                &cfg.perturb,
                &mut RngStream::new(cfg.seed).derive(tags::BANKS),
            )?;
            if clamp {
                noise = clamp_bank(&noise, cfg.perturb.clamp_t)?;
                mask = clamp_bank(&mask, cfg.perturb.clamp_t)?;
            }
            create_dir(&out_dir)?;
            noise.save(&out_dir)?;
            mask.save(&out_dir)?;
        }
        Command::Train {
            input,
            out_dir,
            cfg,
        } => {
            let cfg = ctx.config(&cfg)?;
            let sino = read_tensor(&input)?.map(|v| v.max(0.0))?;
            let root = RngStream::new(cfg.seed);
            let data = prepare_training_data(&sino, &cfg.perturb, &cfg.train, &root)?;
            let (net, losses) = fit(&data, &cfg.train, &root)?;
            save_net(&net, data.scale, &cfg.hash(), &out_dir)?;
            let mut t = CsvTable::new(["step", "loss"]);
            for (i, l) in losses.iter().enumerate() {
                t.push([i.to_string(), freqct::grid::fmt_f64(*l)]);
            }
            t.write(out_dir.join("losses.csv"))?;
        }
        Command::Denoise { net, input, out } => {
            let (net, manifest) = load_net(&net)?;
            let sino = read_tensor(&input)?.map(|v| v.max(0.0))?;
            write_tensor(&infer(&net, &sino, manifest.scale)?, &out, Dtype::F64)?;
        }
        Command::Fbp {
            input,
            out,
            window,
            divide_by,
            pgm,
            cfg,
        } => {
            let cfg = ctx.config(&cfg)?;
            let window = match window {
                Window::None => RampWindow::None,
                Window::Hann => RampWindow::Hann,
            };
            let recon = fbp_windowed(&read_tensor(&input)?, &cfg.geometry, window)?
                .scaled(1.0 / divide_by)?;
            write_tensor(&recon, &out, Dtype::F64)?;
            if let Some(path) = pgm {
                export_pgm(&recon, path, (0.0, 1.0))?;
            }
        }
        Command::Metrics {
            reference,
            test,
            data_range,
            hu,
            roi,
            background,
            nps_out,
            out,
        } => {
            let mut mc = if hu {
                MetricConfig::hounsfield()
            } else {
                MetricConfig::default()
            };
            if data_range.is_some() {
                mc.data_range = data_range;
            }
            let a = read_tensor(&reference)?;
            let b = read_tensor(&test)?;
            let mut rows = vec![
                ("psnr", psnr(&a, &b, &mc)?),
                ("ssim", ssim(&a, &b, &mc)?),
                ("rmse", rmse(&a, &b, &mc)?),
            ];
            if let (Some(r), Some(bg)) = (roi, background) {
                let (r, bg) = (parse_roi(&r)?, parse_roi(&bg)?);
                let (snr, cnr) = snr_cnr(&b, &r, &bg)?;
                rows.push(("snr", snr));
                rows.push(("cnr", cnr));
                if let Some(path) = nps_out {
                    let residual = Grid2D::new(
                        b.rows(),
                        b.cols(),
                        GridKind::Image,
                        b.data().iter().zip(a.data()).map(|(x, y)| x - y).collect(),
                    )?;
                    nps_table(&nps(&[bg.extract(&residual)?], 1.0)?).write(path)?;
                }
            }
            emit(&metrics_table(rows), out.as_deref())?;
        }
        Command::Experiment(exp) => run_experiment(exp, ctx)?,
        Command::RunAll { output_dir, cfg } => {
            let mut cfg = ctx.config(&cfg)?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            let (manifest, _) = cmd_run_all(&cfg)?;
            if let Some(m) = manifest.metrics {
                print!("{}", m.table().render());
            }
        }
        Command::ValidateConfig { path } => {
            let diag = cmd_validate_config(&path)?;
            for w in &diag.warnings {
                eprintln!("warning: {w}");
            }
            for e in &diag.errors {
                eprintln!("error: {}: {e}", path.display());
            }
            match (&diag.config, diag.is_valid()) {
                (Some(cfg), true) => {
                    println!(
                        "{}",
                        serde_json::to_string_pretty(cfg).expect("config serializes")
                    );
                }
                _ => {
                    return Err(Error::Config(format!(
                        "{} has {} error(s)",
                        path.display(),
                        diag.errors.len()
                    )));
                }
            }
        }
    }
    Ok(())
}

fn run_experiment(exp: Experiment, ctx: &Ctx) -> Result<()> {
    match exp {
        Experiment::Variance {
            i0,
            reps,
            seed,
            out,
        } => {
            let grid: Vec<f64> = (0..=8).map(|k| k as f64 * 0.5).collect();
            let rows = variance_experiment(
                &grid,
                i0,
                reps,
                &mut RngStream::new(seed).derive(tags::EXPERIMENT),
            )?;
            let (slope, intercept) = fit_log_variance(&rows);
            log::info!(
                "ln(var) = {slope:.4} p + {intercept:.4} (predicted 1, {:.4})",
                -i0.ln()
            );
            emit(&variance_table(&rows), out.as_deref())?;
        }
        Experiment::Pca { k, out_dir, cfg } => {
            let cfg = ctx.config(&cfg)?;
            let study = embedding_study(&bank_study(&cfg)?, k)?;
            create_dir(&out_dir)?;
            embedding_table(&study.before).write(out_dir.join("pca_before.csv"))?;
            embedding_table(&study.after).write(out_dir.join("pca_after.csv"))?;
            emit(
                &metrics_table([
                    ("silhouette_before", study.silhouette_before),
                    ("silhouette_after", study.silhouette_after),
                ]),
                None,
            )?;
        }
        Experiment::Autocorr {
            max_lag,
            out_dir,
            cfg,
        } => {
            let cfg = ctx.config(&cfg)?;
            let study = correlation_study(&bank_study(&cfg)?, max_lag)?;
            create_dir(&out_dir)?;
            autocorr_table(&study.ldct).write(out_dir.join("autocorr_ldct.csv"))?;
            for (i, p) in study.pseudo.iter().enumerate() {
                autocorr_table(p).write(out_dir.join(format!("autocorr_pseudo_{i}.csv")))?;
            }
            emit(
                &metrics_table([
                    ("mean_abs_corr_ldct", study.mean_abs_ldct),
                    ("mean_abs_corr_pseudo", study.mean_abs_pseudo),
                ]),
                None,
            )?;
        }
        Experiment::Ablation { seeds, out, cfg } => {
            let cfg = ctx.config(&cfg)?;
            emit(
                &ablation_table(&truncation_ablation(&cfg, &seeds)?),
                out.as_deref(),
            )?;
        }
        Experiment::Sweep {
            param,
            values,
            seeds,
            out,
            cfg,
        } => {
            let cfg = ctx.config(&cfg)?;
            let param: SweepParam = param.parse()?;
            let values = values
                .iter()
                .map(|v| v.parse::<SweepValue>())
                .collect::<Result<Vec<_>>>()?;
            emit(
                &sweep_table(&hyperparam_sweep(&cfg, param, &values, &seeds)?),
                out.as_deref(),
            )?;
        }
    }
    Ok(())
}

fn init_threads() {
    let Ok(raw) = std::env::var("FREQCT_THREADS") else {
        return;
    };
    match raw.parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
            {
                log::warn!("could not size the thread pool: {e}");
            }
        }
        _ => log::warn!("ignoring FREQCT_THREADS={raw:?}; expected a positive integer"),
    }
}

fn main() -> ExitCode {
    let (args, overrides) = extract_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    init_threads();
    match run(cli, &Ctx { overrides }) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}
