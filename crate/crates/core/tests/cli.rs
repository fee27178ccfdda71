mod common;

use std::path::Path;

use clap::Parser;
use common::*;
use wormsim::cli::{execute, load_run, metrics_for, report, Cli, DETECTION_FILE, METRICS_FILE, TRACE_FILE};
use wormsim::metrics::RunMetrics;

fn run_cli(args: &[&str]) -> (i32, String) {
    let cli = Cli::try_parse_from(std::iter::once("wormsim").chain(args.iter().copied())).expect("arguments parse");
    let mut out = Vec::new();
    let code = execute(cli, &mut out).expect("command succeeds");
    (code, String::from_utf8(out).expect("utf8"))
}

fn scenario_path(name: &str) -> String {
    manifest_dir().join("scenarios").join(format!("{name}.json")).display().to_string()
}

fn run_into(name: &str, dir: &Path) {
    let (code, _) = run_cli(&["run", &scenario_path(name), "--out", &dir.display().to_string()]);
    assert_eq!(code, 0);
}

#[test]
fn validate_accepts_every_shipped_scenario() {
    for (name, path) in shipped_scenarios() {
        let (code, out) = run_cli(&["validate", &path.display().to_string()]);
        assert_eq!((code, out.trim()), (0, "ok"), "{name}");
    }
}

#[test]
fn validate_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let mut v = base("bad", serde_json::json!({"fixture": "fig2"}), serde_json::json!({"aodv": {}}), -1.0);
    v["attacks"] = serde_json::json!([{"modes": ["encapsulation", "high_power"], "endpoints": ["X", "Q"]}]);
    std::fs::write(&path, v.to_string()).unwrap();
    let (code, out) = run_cli(&["validate", &path.display().to_string()]);
    assert_eq!(code, 1);
    assert!(out.contains("DURATION"), "{out}");
    assert!(out.contains("MEANINGLESS_COMBO"), "{out}");
    assert!(out.contains("UNKNOWN_NODE"), "{out}");
}

#[test]
fn run_writes_artifacts_that_reload_identically() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("fig2");
    run_into("fig2", &run);
    for f in [TRACE_FILE, METRICS_FILE, DETECTION_FILE] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let (scenario, trace) = load_run(&run).unwrap();
    let stored: RunMetrics = serde_json::from_str(&std::fs::read_to_string(run.join(METRICS_FILE)).unwrap()).unwrap();
    assert_eq!(metrics_for(&scenario, &trace), stored);
    assert_eq!(stored.demands[0].hop_distortion, Some(4));
}

#[test]
fn seed_override_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("seeded");
    let (code, _) = run_cli(&["run", &scenario_path("fig3"), "--seed", "77", "--out", &run.display().to_string()]);
    assert_eq!(code, 0);
    assert_eq!(load_run(&run).unwrap().0.seed, 77);
}

#[test]
fn detect_strict_signals_alarms() {
    let dir = tempfile::tempdir().unwrap();
    let attacked = dir.path().join("fig3");
    run_into("fig3", &attacked);
    let (code, out) = run_cli(&["detect", "--strict", &attacked.display().to_string()]);
    assert_eq!(code, 2);
    assert!(out.contains("temporal_leash"), "{out}");
    let (code, _) = run_cli(&["detect", &attacked.display().to_string()]);
    assert_eq!(code, 0);
    let honest = dir.path().join("forced");
    run_into("table3_forced", &honest);
    let (code, out) = run_cli(&["detect", "--strict", &honest.display().to_string()]);
    assert_eq!((code, out.trim()), (0, "no alarms"));
}

#[test]
fn report_compares_runs_and_lists_unreadable_ones() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("open");
    let b = dir.path().join("closed");
    run_into("fig2", &a);
    run_into("fig2_closed", &b);
    let missing = dir.path().join("missing");
    let table = report(&[a, b, missing]);
    assert!(table.contains("A->B 3/7"), "{table}");
    assert!(table.contains("A->B 1/7"), "{table}");
    assert!(table.contains("unreadable:"), "{table}");
}
