use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sdde(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdde"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("SDDE_OUT_DIR")
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn missing_eta_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = sdde(&["lyapunov", "--T", "200"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--eta"));
}

#[test]
fn malformed_eta_and_sizes_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["lyapunov", "--eta", "spline:3"][..],
        &["lyapunov", "--eta", "const:0"],
        &["lyapunov", "--eta", "const:1", "--N", "0"],
        &["frobnicate"],
    ] {
        assert_eq!(sdde(args, dir.path()).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn config_file_values_reach_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"eta": "const:1", "N": 128, "T": 150, "replicas": 2, "master_seed": 7}"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = sdde(&["lyapunov", "--config", cfg.to_str().unwrap(), "--T", "120"], &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = json(&out_dir.join("lyapunov_manifest.json"));
    assert_eq!(manifest["config"]["N"], 128);
    assert_eq!(manifest["config"]["T"], 120);
    assert_eq!(manifest["config"]["master_seed"], 7);
    assert_eq!(manifest["seeds"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["schema_version"], 1);
}

#[test]
fn moments_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = sdde(&["moments", "--paths", "4000", "--N", "16", "--check"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let summary = json(&dir.path().join("moments_summary.json"));
    assert!(summary["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
}

#[test]
fn failed_check_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = sdde(&["moments", "--paths", "4", "--N", "8", "--seed", "1", "--check"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("[FAIL]"));
    assert!(dir.path().join("moments_summary.json").exists());
}

#[test]
fn identical_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["couple", "--eta", "saw", "--T", "150", "--seed", "9", "--format", "json"];
    assert!(sdde(&args, a.path()).status.success());
    assert!(sdde(&args, b.path()).status.success());
    for name in ["couple_trace.json", "couple_summary.json", "couple_manifest.json"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn sweep_writes_one_row_per_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let out = sdde(
        &["sweep", "--eta", "const:1", "--T", "150", "--replicas", "2", "--lambda", "4,16,64,256"],
        dir.path(),
    );
    assert!(out.status.success());
    let mut rows = csv::Reader::from_path(dir.path().join("sweep.csv")).unwrap();
    let lambdas: Vec<f64> = rows.records().map(|r| r.unwrap()[1].parse().unwrap()).collect();
    assert_eq!(lambdas, [4.0, 16.0, 64.0, 256.0]);
    let summary = json(&dir.path().join("sweep_summary.json"));
    assert!(summary["monotone"][0]["slopes_strictly_decreasing"].is_boolean());
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"").unwrap();
    let out = sdde(&["moments", "--paths", "100", "--N", "8"], &blocker.join("sub"));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn env_supplies_default_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_sdde"))
        .args(["moments", "--paths", "100", "--N", "8"])
        .env("SDDE_OUT_DIR", dir.path())
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(dir.path().join("moments_manifest.json").exists());
}
