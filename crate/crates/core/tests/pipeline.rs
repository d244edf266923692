use std::path::Path;

use freqct::pipeline::{cmd_run_all, read_manifest, resolve_config, RunConfig, MANIFEST_FILE};
use freqct::Error;
use serde_json::json;

/// A pipeline small enough for unit-test time budgets.
fn tiny(seed: u64, dir: &Path) -> RunConfig {
    let user = json!({
        "seed": seed,
        "output_dir": dir,
        "geometry": {"image_size": 32, "n_angles": 24, "n_detectors": 47, "detector_spacing": 1.0},
        "train": {"steps": 4, "hidden_channels": 4},
    });
    resolve_config(Some(user), &[]).unwrap().config
}

#[test]
fn run_all_writes_artifacts_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(42, dir.path());
    let (manifest, scenario) = cmd_run_all(&cfg).unwrap();
    assert!(scenario.is_some());
    assert!(manifest.artifacts.len() >= 8);
    for a in &manifest.artifacts {
        let p = dir.path().join(&a.path);
        assert!(p.exists(), "{} missing", a.path);
        assert_eq!(std::fs::metadata(&p).unwrap().len(), a.bytes);
    }
    for name in [
        "phantom.fct",
        "sino_clean.fct",
        "sino_noisy.fct",
        "sino_denoised.fct",
        "recon_noisy.fct",
        "recon_denoised.fct",
        "metrics.csv",
    ] {
        assert!(
            manifest.artifacts.iter().any(|a| a.path == name),
            "{name} not recorded"
        );
    }
    let on_disk = read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(on_disk, manifest);
    assert!(on_disk.error.is_none());
    let m = on_disk.metrics.unwrap();
    assert!(m.noisy.psnr.is_finite() && m.denoised.psnr.is_finite());
    let stages: Vec<_> = on_disk.timings.iter().map(|t| t.stage.as_str()).collect();
    assert_eq!(
        stages,
        ["phantom", "simulate", "banks", "train", "infer", "fbp", "metrics"]
    );
}

#[test]
fn manifest_config_replays_bit_identically() {
    let a = tempfile::tempdir().unwrap();
    let (first, _) = cmd_run_all(&tiny(7, a.path())).unwrap();

    let b = tempfile::tempdir().unwrap();
    let mut replay = first.clone();
    replay.config.output_dir = b.path().to_path_buf();
    let text = serde_json::to_string(&replay).unwrap();
    let cfg_path = b.path().join("replay.json");
    std::fs::write(&cfg_path, text).unwrap();
    let cfg = freqct::pipeline::load_config(Some(&cfg_path), &[])
        .unwrap()
        .config;
    let (second, _) = cmd_run_all(&cfg).unwrap();

    assert_eq!(first.config_hash, second.config_hash);
    let sums = |m: &freqct::pipeline::RunManifest| {
        m.artifacts
            .iter()
            .map(|a| (a.path.clone(), a.sha256.clone()))
            .collect::<Vec<_>>()
    };
    assert_eq!(sums(&first), sums(&second));
}

#[test]
fn different_seeds_change_noisy_data() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ma, _) = cmd_run_all(&tiny(1, a.path())).unwrap();
    let (mb, _) = cmd_run_all(&tiny(2, b.path())).unwrap();
    let sum = |m: &freqct::pipeline::RunManifest, name: &str| {
        m.artifacts
            .iter()
            .find(|x| x.path == name)
            .unwrap()
            .sha256
            .clone()
    };
    assert_eq!(sum(&ma, "sino_clean.fct"), sum(&mb, "sino_clean.fct"));
    assert_ne!(sum(&ma, "sino_noisy.fct"), sum(&mb, "sino_noisy.fct"));
}

#[test]
fn failing_stage_still_writes_partial_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(3, dir.path());
    cfg.train.lr = 1e300;
    cfg.train.steps = 20;
    let err = cmd_run_all(&cfg).unwrap_err();
    assert!(
        matches!(err, Error::Stage { ref stage, .. } if stage == "train"),
        "{err}"
    );
    assert!(!err.is_usage());

    let manifest = read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert!(manifest.error.unwrap().contains("train"));
    assert!(manifest.metrics.is_none());
    assert!(manifest
        .artifacts
        .iter()
        .any(|a| a.path == "sino_noisy.fct"));
    assert!(!manifest
        .artifacts
        .iter()
        .any(|a| a.path == "sino_denoised.fct"));
}
