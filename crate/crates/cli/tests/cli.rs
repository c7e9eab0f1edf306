use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn mmlstm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmlstm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn mmlstm")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stdout);
    let first = text.lines().next().expect("config echo");
    serde_json::from_str(first).expect("config echo is JSON")
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn gradcheck_passes_quickly() {
    let start = Instant::now();
    let out = mmlstm(&["gradcheck"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(start.elapsed() < Duration::from_secs(60));
    assert_eq!(stdout_json(&out)["command"], "gradcheck");
    let report = String::from_utf8_lossy(&out.stderr);
    assert!(report.contains("PASS mm_lstm"));
    assert!(!report.contains("FAIL"));
}

#[test]
fn unknown_subcommand_prints_usage_and_fails() {
    let out = mmlstm(&["frobnicate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_fails() {
    let out = mmlstm(&["gen", "--out", "x", "--bogus"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn gen_default_size_writes_3600_sequences() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("dm");
    let out = mmlstm(&[
        "gen",
        "--out",
        data.to_str().unwrap(),
        "--per-class",
        "600",
        "--classes",
        "6",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(data.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 3600);
    assert_eq!(stdout_json(&out)["generator"]["samples_per_class"], 600);
}

#[test]
fn serial_and_parallel_gen_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let common = [
        "--per-class",
        "5",
        "--seed",
        "9",
        "--cross-modal",
        "--noise",
        "0.7",
        "--feature-dim",
        "16",
    ];
    let mut args = vec!["gen", "--out", a.to_str().unwrap(), "--serial"];
    args.extend(common);
    assert!(mmlstm(&args).status.success());
    let mut args = vec!["gen", "--out", b.to_str().unwrap()];
    args.extend(common);
    assert!(mmlstm(&args).status.success());
    assert_eq!(files_in(&a), files_in(&b));
}

#[test]
fn train_then_eval_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let gen = mmlstm(&["gen", "--out", &p("data"), "--per-class", "5", "--feature-dim", "16"]);
    assert!(gen.status.success());

    let train = mmlstm(&[
        "train",
        "--data",
        &p("data"),
        "--model",
        "ms2",
        "--weighting",
        "linear",
        "--epochs",
        "1",
        "--hidden",
        "8",
        "--lr",
        "0.05",
        "--seed",
        "2",
        "--out",
        &p("model"),
    ]);
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    let echo = stdout_json(&train);
    assert_eq!(echo["train"]["hidden"], 8);
    assert_eq!(echo["train"]["weighting"]["kind"], "linear");
    assert!(dir.path().join("model/model.mmw").exists());
    assert!(dir.path().join("model/model.json").exists());
    let log: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("model/train_log.json")).unwrap()).unwrap();
    assert_eq!(log["epochs"].as_array().unwrap().len(), 1);

    let eval = mmlstm(&[
        "eval",
        "--model",
        &p("model"),
        "--data",
        &p("data"),
        "--report-dir",
        &p("report"),
    ]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    assert_eq!(
        stdout_json(&eval)["horizons"],
        serde_json::json!([1.0, 2.0, 3.0, 4.0, 5.0])
    );
    assert_eq!(files_in(&dir.path().join("report")).len(), 7);

    // Same inputs, same report bytes.
    let again = mmlstm(&[
        "eval",
        "--model",
        &p("model"),
        "--data",
        &p("data"),
        "--report-dir",
        &p("report2"),
    ]);
    assert!(again.status.success());
    assert_eq!(
        files_in(&dir.path().join("report")),
        files_in(&dir.path().join("report2"))
    );
}

#[test]
fn single_modality_baseline_trains() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    assert!(
        mmlstm(&["gen", "--out", &p("data"), "--per-class", "3", "--feature-dim", "16"])
            .status
            .success()
    );
    let out = mmlstm(&[
        "train",
        "--data",
        &p("data"),
        "--model",
        "single",
        "--modalities",
        "motion",
        "--epochs",
        "1",
        "--hidden",
        "4",
        "--out",
        &p("m"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        stdout_json(&out)["train"]["sources"],
        serde_json::json!([{ "feature": 1 }])
    );
}

#[test]
fn failures_give_a_one_line_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = mmlstm(&[
        "eval",
        "--model",
        missing.to_str().unwrap(),
        "--data",
        missing.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("error:")).collect();
    assert_eq!(lines.len(), 1, "{err}");

    let out = mmlstm(&["train", "--data", "x", "--out", "y", "--modalities", "sonar"]);
    assert!(!out.status.success());
}

#[test]
fn ms2_without_vehicle_streams_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    assert!(
        mmlstm(&["gen", "--out", &p("data"), "--per-class", "2", "--feature-dim", "16"])
            .status
            .success()
    );
    let out = mmlstm(&[
        "train",
        "--data",
        &p("data"),
        "--model",
        "ms2",
        "--modalities",
        "appearance,motion",
        "--out",
        &p("m"),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ms2 needs"));
}
