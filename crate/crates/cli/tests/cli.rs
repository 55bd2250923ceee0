use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nwbrl(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nwbrl"))
        .args(args)
        .env("NWBRL_OUT_ROOT", out_root)
        .output()
        .expect("binary runs")
}

fn tiny_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml")
}

#[test]
fn train_then_eval_checkpoint() {
    let root = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let out = nwbrl(&["train", "--config", cfg.to_str().unwrap(), "--seed", "4"], root.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("train: test_success="), "{stdout}");

    let dir = root.path().join("train_point_goal_2d_seed4");
    for f in ["manifest.json", "metrics.jsonl", "timing.jsonl", "final.nwbc"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    let ckpt = dir.join("final.nwbc");
    let out = nwbrl(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--tasks", "2"], root.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let result: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let success = result["success_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&success));
}

#[test]
fn bad_config_exits_with_config_code() {
    let root = tempfile::tempdir().unwrap();
    let bad = root.path().join("bad.toml");
    std::fs::write(&bad, "iterations = \"many\"\n").unwrap();
    let out = nwbrl(&["train", "--config", bad.to_str().unwrap()], root.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));

    let zero = root.path().join("zero.toml");
    std::fs::write(&zero, "tasks_per_iter = 0\n").unwrap();
    assert_eq!(nwbrl(&["train", "--config", zero.to_str().unwrap()], root.path()).status.code(), Some(2));
}

#[test]
fn missing_checkpoint_is_an_error() {
    let root = tempfile::tempdir().unwrap();
    let out = nwbrl(&["eval", "--checkpoint", "/nonexistent/ckpt.nwbc"], root.path());
    assert!(!out.status.success());
}

#[test]
fn verify_reports_every_check() {
    let root = tempfile::tempdir().unwrap();
    let out = nwbrl(&["verify", "--seed", "3"], root.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert!(lines.len() >= 8, "{stdout}");
    assert!(lines.iter().all(|l| l.starts_with("PASS ") || l.starts_with("FAIL ")));
    let all_pass = lines.iter().all(|l| l.starts_with("PASS "));
    assert_eq!(out.status.code(), Some(if all_pass { 0 } else { 3 }));
    assert!(all_pass, "{stdout}");
}
