//! End-to-end runs of the `stgraph` binary.

use std::process::{Command, Output};

fn stgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stgraph"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let a = stgraph(&["simulate", "--seed", "3"]);
    let b = stgraph(&["simulate", "--seed", "3"]);
    let c = stgraph(&["simulate", "--seed", "4"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    assert_eq!(stdout(&a).lines().count(), 16);
    for line in stdout(&a).lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
}

#[test]
fn run_reads_scene_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.jsonl");
    let report = dir.path().join("report.json");
    assert!(stgraph(&["simulate", "--seed", "1", "--out", scene.to_str().unwrap()]).status.success());
    let o = stgraph(&["run", "--scene", scene.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(v["per_frame"].as_array().unwrap().len(), 16);
}

#[test]
fn empty_scene_reports_zero_frames() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("empty.jsonl");
    std::fs::write(&scene, "").unwrap();
    let o = stgraph(&["run", "--scene", scene.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["zero_frames"], serde_json::Value::Bool(true));
}

#[test]
fn invalid_input_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"theta": 3.0}"#).unwrap();
    assert_eq!(stgraph(&["simulate", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(stgraph(&["no-such-command"]).status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    assert_eq!(stgraph(&["simulate", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    let scene = dir.path().join("garbled.jsonl");
    std::fs::write(&scene, "not json\n").unwrap();
    assert_eq!(stgraph(&["run", "--scene", scene.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn train_toy_prints_json_lines_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let saved = dir.path().join("params.json");
    let o = stgraph(&["train-toy", "--steps", "3", "--save-params", saved.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    assert!(lines.iter().enumerate().all(|(k, l)| l["step"] == k));
    let run = stgraph(&["run", "--params", saved.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
}

#[test]
fn gradcheck_reports_every_suite() {
    let o = stgraph(&["gradcheck", "--cases", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let suites = v.as_array().unwrap();
    assert!(suites.len() >= 10);
    assert!(suites.iter().all(|s| s["passed"] == serde_json::Value::Bool(true)));
}

#[test]
fn bench_writes_csv() {
    let o = stgraph(&["bench", "suppress", "--sizes", "50,100", "--workers", "2", "--repeats", "1"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().next(), Some("n,workers,ms"));
    assert_eq!(stdout(&o).lines().count(), 5);
    let o = stgraph(&["bench", "stga", "--mode", "dense", "--sizes", "16,32", "--repeats", "1"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 3);
}
