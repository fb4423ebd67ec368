//! End-to-end tests of the command-line interface.

use std::path::Path;
use std::process::{Command, Output};

use hcope::mdp::load_dataset;

fn hcope(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hcope"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

#[test]
fn generate_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = hcope(
        &[
            "generate",
            "--env",
            "micro-loop3",
            "--policy",
            "pi_b",
            "-n",
            "25",
            "--seed",
            "7",
            "--out",
            "ds.json",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ds = load_dataset(&dir.path().join("ds.json")).unwrap();
    assert_eq!(ds.len(), 25);
    assert_eq!(ds.behavior_policy_id, "pi_b");

    let eval = |extra: &[&str]| {
        let mut args = vec![
            "evaluate",
            "--dataset",
            "ds.json",
            "--pi-e",
            "pi_e",
            "--estimator",
            "pdwis",
            "--bootstrap-b",
            "200",
        ];
        args.extend_from_slice(extra);
        hcope(&args, dir.path())
    };
    let first = eval(&[]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let report: serde_json::Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(report["estimator"], "pdwis");
    assert_eq!(report["b"], 200);
    assert!(report["lower_bound"].as_f64().unwrap() <= report["point_estimate"].as_f64().unwrap());

    // Same invocation twice, and with an explicit worker count: identical.
    let again = eval(&[]);
    assert_eq!(first.stdout, again.stdout);
    let single_worker = eval(&["--workers", "1"]);
    assert_eq!(first.stdout, single_worker.stdout);
}

#[test]
fn sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("sweep.cfg"),
        "env = micro-loop3\npi_e = pi_e\npi_b = pi_b\nestimators = is\n\
         n_values = 2, 5\ntrials = 2\nbootstrap_b = 40\nground_truth_rollouts = 50000\n",
    )
    .unwrap();
    let out = hcope(
        &["sweep", "--config", "sweep.cfg", "--out", "sweep.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.trim_end().lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("estimator,n,valid"));
}

#[test]
fn ground_truth_prints_value_and_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = hcope(
        &[
            "ground-truth",
            "--env",
            "micro-chain2",
            "--policy",
            "pi_e",
            "--rollouts",
            "2000",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("+/-"), "{text}");
}

#[test]
fn bias_bound_subcommand_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    assert!(hcope(
        &[
            "generate", "--env", "micro-loop3", "--policy", "pi_b", "-n", "40", "--seed", "3",
            "--out", "ds.json",
        ],
        dir.path(),
    )
    .status
    .success());
    let out = hcope(
        &[
            "bias-bound",
            "--dataset",
            "ds.json",
            "--pi-e",
            "pi_e",
            "--model",
            "tabular",
            "--variant",
            "corollary2",
            "--alpha",
            "0.9",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["variant"], "corollary2-finite-sample");
    assert!(report["bound"].as_f64().unwrap() >= 0.0);
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad_env = hcope(
        &[
            "generate", "--env", "no-such-env", "--policy", "p", "-n", "1", "--out", "x.json",
        ],
        dir.path(),
    );
    assert_eq!(bad_env.status.code(), Some(2));

    std::fs::write(dir.path().join("bad.cfg"), "unknown_key = 1\n").unwrap();
    let bad_cfg = hcope(
        &["sweep", "--config", "bad.cfg", "--out", "out.csv"],
        dir.path(),
    );
    assert_eq!(bad_cfg.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_cfg.stderr).contains("line 1"));
}
