use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn uqcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uqcast"))
        .args(args)
        .env("UQCAST_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(out: Output) -> Output {
    assert_eq!(
        code(&out),
        0,
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, profile: &str, days: usize, seed: u64) -> PathBuf {
    let path = dir.join(format!("{profile}_{seed}.csv"));
    ok(uqcast(&[
        "synth",
        "--profile",
        profile,
        "--days",
        &days.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        s(&path),
    ]));
    path
}

fn quick_config(dir: &Path, epochs: usize, extra: &str) -> PathBuf {
    let path = dir.join("config.json");
    let body = format!(r#"{{"lstm_units": [8], "dense_units": [6, 2], "epochs": {epochs}, "seed": 3{extra}}}"#);
    fs::write(&path, body).unwrap();
    path
}

fn train(dir: &Path, config: &Path, data: &Path, name: &str) -> PathBuf {
    let out = dir.join(name);
    ok(uqcast(&["train", "--config", s(config), "--data", s(data), "--out", s(&out)]));
    out
}

#[test]
fn synth_is_deterministic_with_288_rows_per_day() {
    let dir = TempDir::new().unwrap();
    let a = synth(dir.path(), "benchmark", 30, 4);
    let first = fs::read(&a).unwrap();
    let b = synth(dir.path(), "benchmark", 30, 4);
    assert_eq!(first, fs::read(&b).unwrap());
    let text = String::from_utf8(first).unwrap();
    assert_eq!(text.lines().count(), 8640 + 1);
    assert_eq!(text.lines().next(), Some("timestamp,flow"));
}

#[test]
fn synth_accepts_profile_files_and_rejects_zero_days() {
    let dir = TempDir::new().unwrap();
    let profile = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/profiles/sinusoid.json");
    let from_file = dir.path().join("f.csv");
    ok(uqcast(&["synth", "--profile", s(&profile), "--days", "1", "--out", s(&from_file)]));
    let from_preset = synth(dir.path(), "sinusoid", 1, 0);
    assert_eq!(fs::read(from_file).unwrap(), fs::read(from_preset).unwrap());

    let out = uqcast(&["synth", "--profile", "benchmark", "--days", "0", "--out", s(&dir.path().join("z.csv"))]);
    assert_eq!(code(&out), 1);
    let out = uqcast(&["synth", "--profile", "no_such_profile", "--days", "1", "--out", s(&dir.path().join("z.csv"))]);
    assert_ne!(code(&out), 0);
}

#[test]
fn spectral_training_writes_one_loss_row_per_epoch() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "benchmark", 3, 1);
    let cfg = quick_config(dir.path(), 100, r#", "norm_mode": "spectral""#);
    let out = train(dir.path(), &cfg, &data, "run");
    let loss = fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 100 + 1);
    let resolved = fs::read_to_string(out.join("resolved_config.json")).unwrap();
    assert!(resolved.contains(r#""norm_mode": "spectral""#));
    assert!(out.join("model.json").exists());
}

#[test]
fn train_and_uq_are_byte_reproducible() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "benchmark", 4, 2);
    let cfg = quick_config(dir.path(), 4, "");
    let a = train(dir.path(), &cfg, &data, "a");
    let b = train(dir.path(), &cfg, &data, "b");
    for f in ["model.json", "loss.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    let model = a.join("model.json");
    let run_uq = |name: &str| {
        let out = dir.path().join(name);
        ok(uqcast(&["uq", "--model", s(&model), "--data", s(&data), "--passes", "10", "--seed", "7", "--out", s(&out)]));
        out
    };
    let (u1, u2) = (run_uq("u1"), run_uq("u2"));
    let files = [
        "uncertainty.csv",
        "metrics.csv",
        "summary.csv",
        "chart.svg",
        "saliency.csv",
        "dispersion.csv",
    ];
    for f in files {
        assert_eq!(fs::read(u1.join(f)).unwrap(), fs::read(u2.join(f)).unwrap(), "{f}");
    }

    let summary: serde_json::Value = serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    let test_windows = summary["test_windows"].as_u64().unwrap() as usize;
    let rows = fs::read_to_string(u1.join("uncertainty.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows, test_windows);
}

#[test]
fn uq_refuses_single_pass_and_zero_dropout_has_no_epistemic_spread() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "benchmark", 4, 3);
    let cfg = quick_config(dir.path(), 1, r#", "dropout_rate": 0.0"#);
    let run = train(dir.path(), &cfg, &data, "run");
    let model = run.join("model.json");

    let out = uqcast(&["uq", "--model", s(&model), "--data", s(&data), "--passes", "1", "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("epistemic"));

    let u = dir.path().join("u");
    ok(uqcast(&["uq", "--model", s(&model), "--data", s(&data), "--passes", "5", "--out", s(&u)]));
    let csv = fs::read_to_string(u.join("uncertainty.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|&h| h == "epistemic_std").unwrap();
    for line in csv.lines().skip(1) {
        assert_eq!(line.split(',').nth(col), Some("0"), "{line}");
    }
}

#[test]
fn exit_codes_follow_the_table() {
    let dir = TempDir::new().unwrap();
    let cfg = quick_config(dir.path(), 4, "");
    let missing = dir.path().join("missing.csv");
    let out = uqcast(&["train", "--config", s(&cfg), "--data", s(&missing), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "timestamp,flow\n0,1\nnot-a-time,2\n").unwrap();
    let out = uqcast(&["train", "--config", s(&cfg), "--data", s(&bad), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 3);

    let typo = dir.path().join("typo.json");
    fs::write(&typo, r#"{"epoch": 3}"#).unwrap();
    let out = uqcast(&["train", "--config", s(&typo), "--data", s(&bad), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 1);

    assert_eq!(code(&uqcast(&["frobnicate"])), 1);
    assert_eq!(code(&uqcast(&["--help"])), 0);
    assert_eq!(code(&uqcast(&["--version"])), 0);
}

#[test]
fn transfer_emits_with_and_without_retrain_rows() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "benchmark", 4, 5);
    let target = synth(dir.path(), "shifted", 4, 6);
    let run = train(dir.path(), &quick_config(dir.path(), 4, ""), &data, "run");
    let out = dir.path().join("t");
    ok(uqcast(&[
        "transfer",
        "--model",
        s(&run.join("model.json")),
        "--target",
        s(&target),
        "--retrain",
        "--fraction",
        "0.2",
        "--epochs",
        "3",
        "--passes",
        "5",
        "--out",
        s(&out),
    ]));
    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert!(csv.starts_with("dataset,norm_mode,retrain,metric,value\n"));
    assert!(csv.lines().any(|l| l.contains(",no,rmse,")));
    assert!(csv.lines().any(|l| l.contains(",yes,rmse,")));
    assert!(out.join("model_retrained.json").exists());

    let bad = uqcast(&[
        "transfer",
        "--model",
        s(&run.join("model.json")),
        "--target",
        s(&target),
        "--retrain",
        "--fraction",
        "1.5",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn similarity_ranks_constructed_stations() {
    let dir = TempDir::new().unwrap();
    let reference = synth(dir.path(), "benchmark", 30, 1);
    let far = synth(dir.path(), "station_far", 30, 2);
    let near = synth(dir.path(), "station_near", 30, 3);
    let mid = synth(dir.path(), "station_mid", 30, 4);
    let out = dir.path().join("sim");
    ok(uqcast(&[
        "similarity",
        "--train",
        s(&reference),
        "--candidates",
        s(&far),
        s(&near),
        s(&mid),
        s(&reference),
        "--days",
        "30",
        "--out",
        s(&out),
    ]));
    let ranking = fs::read_to_string(out.join("ranking.csv")).unwrap();
    let order: Vec<&str> = ranking.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(order, ["benchmark_1", "station_near_3", "station_mid_4", "station_far_2"]);
    let first = ranking.lines().nth(1).unwrap();
    assert_eq!(first.split(',').nth(2), Some("0"));
    assert!(out.join("similarity.json").exists());
    assert!(out.join("similarity_station_mid_4.csv").exists());

    let missing = dir.path().join("gone.csv");
    let out = uqcast(&[
        "similarity",
        "--train",
        s(&reference),
        "--candidates",
        s(&near),
        s(&missing),
        "--out",
        s(&dir.path().join("sim2")),
    ]);
    assert_eq!(code(&out), 2);

    let short = synth(dir.path(), "station_near", 5, 9);
    let out = uqcast(&["similarity", "--train", s(&reference), "--candidates", s(&short), "--out", s(&dir.path().join("s3"))]);
    assert_eq!(code(&out), 3);
}

#[test]
fn verify_passes_and_detects_a_corrupted_rule() {
    let out = ok(uqcast(&["verify", "--fast"]));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS gradient/spectral"));
    let out = uqcast(&["verify", "--fast", "--corrupt-rule", "tanh"]);
    assert_eq!(code(&out), 5);
    assert!(String::from_utf8_lossy(&out.stdout).contains("rule `tanh` corrupted"));
    assert_eq!(code(&uqcast(&["verify", "--corrupt-rule", "nonsense"])), 1);
}
