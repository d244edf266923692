use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_freqct");

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &[&str] = &[
    "--geometry.image_size",
    "32",
    "--geometry.n_angles",
    "24",
    "--geometry.n_detectors=47",
    "--train.steps",
    "3",
    "--train.hidden_channels",
    "4",
];

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(TINY.iter().copied()).collect()
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["--help"], dir.path())), 0);
    assert_eq!(code(&run(&["--version"], dir.path())), 0);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&[], dir.path())), 1);
    assert_eq!(code(&run(&["no-such-command"], dir.path())), 1);
    assert_eq!(code(&run(&["phantom"], dir.path())), 1);
    let o = run(
        &["phantom", "--out", "p.fct", "--perturb.r1", "0.9"],
        dir.path(),
    );
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("r1"));
    let o = run(
        &["phantom", "--out", "p.fct", "--perturb.bogus", "1"],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["fbp", "--input", "missing.fct", "--out", "r.fct"],
        dir.path(),
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    std::fs::write(dir.path().join("junk.fct"), b"not a tensor").unwrap();
    assert_eq!(
        code(&run(
            &["denoise", "--net", ".", "--input", "junk.fct", "--out", "d.fct"],
            dir.path()
        )),
        2
    );
}

#[test]
fn stage_subcommands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = |args: Vec<&str>| {
        let o = run(&args, d);
        assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
        o
    };
    ok(with_tiny(&[
        "phantom", "--out", "p.fct", "--pgm", "p.pgm", "--seed", "1",
    ]));
    ok(with_tiny(&[
        "project",
        "--input",
        "p.fct",
        "--out",
        "s.fct",
        "--to-attenuation",
        "--seed",
        "1",
    ]));
    ok(with_tiny(&[
        "simulate-noise",
        "--input",
        "s.fct",
        "--out",
        "n.fct",
        "--seed",
        "1",
    ]));
    ok(with_tiny(&[
        "build-banks",
        "--input",
        "n.fct",
        "--out-dir",
        "banks",
        "--normalize",
        "--clamp",
        "--seed",
        "1",
    ]));
    ok(with_tiny(&[
        "train",
        "--input",
        "n.fct",
        "--out-dir",
        "net",
        "--seed",
        "1",
    ]));
    ok(vec![
        "denoise", "--net", "net", "--input", "n.fct", "--out", "d.fct",
    ]);
    ok(with_tiny(&[
        "fbp", "--input", "d.fct", "--out", "r.fct", "--seed", "1",
    ]));
    let m = ok(vec![
        "metrics",
        "--reference",
        "s.fct",
        "--test",
        "d.fct",
        "--roi",
        "4,4,6,6",
        "--background",
        "14,30,6,6",
        "--nps-out",
        "nps.csv",
    ]);

    let table = stdout(&m);
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("name,value"));
    let names: Vec<_> = lines
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    assert_eq!(names, ["psnr", "ssim", "rmse", "snr", "cnr"]);
    assert!(std::fs::read_to_string(d.join("nps.csv"))
        .unwrap()
        .starts_with("freq,nps"));
    assert_eq!(std::fs::read_dir(d.join("banks")).unwrap().count(), 8);
    assert!(d.join("net/net.json").exists());
    assert!(d.join("net/losses.csv").exists());
}

#[test]
fn run_all_prints_metrics_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &with_tiny(&["run-all", "--seed", "5", "--output-dir", "out"]),
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("psnr_denoised"));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["config"]["seed"], 5);
    assert_eq!(manifest["config"]["geometry"]["image_size"], 32);
}

#[test]
fn failing_run_all_exits_two_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &with_tiny(&[
            "run-all",
            "--seed",
            "5",
            "--output-dir",
            "out",
            "--train.lr",
            "1e300",
            "--train.steps",
            "20",
        ]),
        dir.path(),
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("stage `train` failed"));
    assert!(dir.path().join("out/manifest.json").exists());
}

#[test]
fn validate_config_reports_lines() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("good.json"), "{\n  \"seed\": 3\n}\n").unwrap();
    let o = run(&["validate-config", "good.json"], d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("\"n_angles\": 180"));

    std::fs::write(
        d.join("paper.json"),
        "{\"profile\": \"paper\", \"seed\": 1}",
    )
    .unwrap();
    let o = run(&["validate-config", "paper.json"], d);
    assert_eq!(code(&o), 0);
    assert!(
        stdout(&o).contains("\"n_angles\": 1440") && stdout(&o).contains("\"n_detectors\": 720")
    );

    std::fs::write(d.join("noseed.json"), "{}").unwrap();
    let o = run(&["validate-config", "noseed.json"], d);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("seed 0"));

    std::fs::write(
        d.join("bad.json"),
        "{\n  \"seed\": 1,\n  \"perturb\": {\n    \"r1\": 0.9,\n    \"r2\": 0.5\n  }\n}\n",
    )
    .unwrap();
    let o = run(&["validate-config", "bad.json"], d);
    assert_eq!(code(&o), 1);
    assert!(
        stderr(&o).contains("line 4") && stderr(&o).contains("r1"),
        "{}",
        stderr(&o)
    );

    std::fs::write(d.join("broken.json"), "{\n  \"seed\": 1,\n  oops\n}\n").unwrap();
    let o = run(&["validate-config", "broken.json"], d);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn variance_experiment_emits_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["experiment", "variance", "--reps", "2000"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 10);
}
