use std::process::{Command, Output};

use serde_json::Value;

fn acct(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amplify-acct"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn epsilon_of_gaussian_json() {
    let o = acct(&["epsilon", "--mech", "gaussian", "--sigma", "1", "--max-order", "10", "--format", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["tool"], "amplify-acct");
    assert_eq!(v["config"]["sigma"], 1.0);
    let alpha = v["result"]["alpha"].as_f64().unwrap();
    let eps = v["result"]["epsilon"].as_f64().unwrap();
    let expected = alpha / 2.0 + (1e5f64).ln() / (alpha - 1.0);
    assert!((eps - expected).abs() < 1e-12);
    assert_eq!(v["result"]["provenance"], "exact");
}

#[test]
fn subsampled_split_is_refused() {
    for mech in [["--mech", "model-split", "--d", "2"], ["--mech", "bis", "--T", "10"]] {
        let mut args = vec!["epsilon", "--sigma", "1", "--poisson", "0.1", "--k", "2"];
        if mech[1] == "model-split" {
            args.retain(|a| *a != "--k" && *a != "2");
        }
        args.extend_from_slice(&mech);
        let o = acct(&args);
        assert_eq!(o.status.code(), Some(2));
        assert!(stderr(&o).contains("Unsupported combinations"), "{}", stderr(&o));
    }
}

#[test]
fn irrelevant_parameter_is_rejected() {
    let o = acct(&["epsilon", "--mech", "gaussian", "--sigma", "1", "--k", "3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn curve_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.csv");
    let o = acct(&[
        "curve",
        "--gaussian",
        "count=2",
        "--bis",
        "T=10,k=4",
        "--sigma",
        "2",
        "--max-order",
        "5",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# amplify-acct "));
    assert!(lines[1].starts_with("# config: {"));
    assert_eq!(lines[2], "alpha,epsilon,mechanism,mode,provenance");
    assert_eq!(lines.len(), 3 + 2 * 4);
    assert_eq!(lines[3], "2,0.5,gaussianx2,tight,exact");
    assert!(lines[7].starts_with("2,") && lines[7].contains("bis(T=10;k=4)"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"epsilon": {"mech": "gaussian", "sigma": 4.0, "max_order": 8}}"#).unwrap();
    let base = acct(&["--config", cfg.to_str().unwrap(), "epsilon", "--format", "json"]);
    assert!(base.status.success(), "{}", stderr(&base));
    let v: Value = serde_json::from_str(&stdout(&base)).unwrap();
    assert_eq!(v["config"]["sigma"], 4.0);
    let over = acct(&["--config", cfg.to_str().unwrap(), "epsilon", "--sigma", "8", "--format", "json"]);
    let w: Value = serde_json::from_str(&stdout(&over)).unwrap();
    assert_eq!(w["config"]["sigma"], 8.0);
    assert!(w["result"]["epsilon"].as_f64() < v["result"]["epsilon"].as_f64());

    std::fs::write(&cfg, r#"{"epsilon": {"mech": "gaussian", "sigma": 4.0, "bogus": 1}}"#).unwrap();
    let bad = acct(&["--config", cfg.to_str().unwrap(), "epsilon"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn calibrate_meets_target() {
    let o = acct(&["calibrate", "--mech", "gaussian", "--epsilon", "1", "--max-order", "40"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("sigma = "));
    let record: Value = serde_json::from_str(out.lines().nth(1).unwrap()).unwrap();
    let achieved = record["achieved_epsilon"].as_f64().unwrap();
    assert!(achieved <= 1.0 && achieved > 0.999);
    assert!(record["iterations"].as_u64().unwrap() <= 200);
}

#[test]
fn verify_reports_failures_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("verify.jsonl");
    let o = acct(&[
        "verify",
        "--family",
        "d=2,k=1,c=1",
        "--alpha",
        "2",
        "--output",
        path.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&path).unwrap();
    let records: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records[0]["tool"], "amplify-acct");
    let summary = &records.last().unwrap()["summary"];
    let failed = summary["failed"].as_u64().unwrap();
    let checks: Vec<&str> = records[1..records.len() - 1]
        .iter()
        .map(|r| r["check"].as_str().unwrap())
        .collect();
    assert_eq!(checks, ["sandwich", "alpha2_tightness", "offset_identity"]);
    // The reverse-direction bound is exceeded by the quadrature value here.
    assert_eq!(failed, 1);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("FAILED"));
}

#[test]
fn verify_passes_where_bounds_hold() {
    let o = acct(&["verify", "--family", "d=2,k=2,c=1", "--alpha", "2"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
}

#[test]
fn simulate_bis_writes_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sim.jsonl");
    let o = acct(&[
        "simulate",
        "--schedule",
        "bis",
        "--k",
        "3",
        "--T",
        "12",
        "--sigma",
        "2",
        "--n",
        "24",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("every sample in exactly 3 iterations: true"));
    let lines: Vec<Value> = std::fs::read_to_string(&path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 1 + 12 + 1);
    let summary = &lines.last().unwrap()["summary"];
    assert!(summary["privacy"]["epsilon"].as_f64().unwrap() > 0.0);
}

#[test]
fn simulate_refuses_unsupported_setups() {
    let o = acct(&["simulate", "--mode", "dropout", "--rate", "0.3"]);
    assert_eq!(o.status.code(), Some(2));
    let o = acct(&["simulate", "--mode", "model-split", "--d", "2", "--schedule", "poisson", "--gamma", "0.1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Unsupported combinations"));
}

#[test]
fn thread_count_must_be_positive() {
    let o = Command::new(env!("CARGO_BIN_EXE_amplify-acct"))
        .args(["epsilon", "--mech", "gaussian", "--sigma", "1"])
        .env("AMPLIFY_ACCT_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
