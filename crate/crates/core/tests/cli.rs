use std::path::Path;
use std::process::{Command, Output};

fn mpsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.json");
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

#[test]
fn run_then_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"duration": 8, "rsus": [{"rsu_id": 1, "intervals": [[0, 8]]}]}"#,
    );
    let out_dir = dir.path().join("out");
    let out = mpsim(&[
        "run",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "4",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in ["metrics.csv", "events.csv", "summary.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let printed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed["handover_count"], 0);

    let sum = mpsim(&["summarize", "--in", out_dir.to_str().unwrap()]);
    assert!(sum.status.success());
    let again: serde_json::Value = serde_json::from_slice(&sum.stdout).unwrap();
    assert_eq!(again["total_bytes"], printed["total_bytes"]);
}

#[test]
fn bad_config_fails_with_key_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"duration": 8, "medium": {"background_occupancy": 2}, "rsus": [{"rsu_id": 1, "intervals": [[0, 8]]}]}"#,
    );
    let out = mpsim(&[
        "run",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("background_occupancy"), "{err}");
}

#[test]
fn unknown_builtin_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = mpsim(&[
        "run",
        "--builtin",
        "nope",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn summarize_missing_dir_fails() {
    let out = mpsim(&["summarize", "--in", "/nonexistent/run"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("metrics.csv"));
}
