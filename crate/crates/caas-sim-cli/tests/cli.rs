//! End-to-end checks of the command-line interface.

use std::path::Path;
use std::process::{Command, Output};

fn caas_sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_caas-sim"))
        .args(args)
        .output()
        .expect("spawn caas-sim")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn gen_scenario_validate_run_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    let out_dir = dir.path().join("out");

    let gen = caas_sim(&[
        "gen-scenario",
        "--seed",
        "3",
        "--ttc",
        "7620",
        "--monitor-interval",
        "60",
        "--out",
        scenario.to_str().unwrap(),
    ]);
    assert!(gen.status.success());

    let validated = stdout(&caas_sim(&["validate", scenario.to_str().unwrap()]));
    assert!(validated.contains("30 workloads"), "{validated}");

    let report = stdout(&caas_sim(&[
        "run",
        "--scenario",
        scenario.to_str().unwrap(),
        "--seed",
        "3",
        "--workers",
        "2",
        "--controllers",
        "aimd,reactive",
        "--estimators",
        "kalman",
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    let json: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert!(
        json["controllers"]["aimd"]["final_cost_mean"]
            .as_f64()
            .unwrap()
            > 0.0
    );
    assert!(json["controllers"]["reactive"].is_object());
    assert!(json["controllers"].get("mwa").is_none());

    assert!(out_dir.join("report.json").exists());
    assert!(out_dir.join("cost_aimd_kalman_3.csv").exists());
    assert!(out_dir.join("runs").join("aimd_kalman_3.json").exists());
}

#[test]
fn run_uses_builtin_schedule_when_no_scenario_given() {
    let report = stdout(&caas_sim(&[
        "run",
        "--seed",
        "5",
        "--controllers",
        "aimd",
        "--monitor-interval",
        "300",
    ]));
    let json: serde_json::Value = serde_json::from_str(&report).unwrap();
    let aimd = &json["controllers"]["aimd"];
    assert_eq!(aimd["ttc_total"].as_u64().unwrap(), 30);
}

#[test]
fn validate_rejects_malformed_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"schema\": \"nonsense\"}").unwrap();
    let out = caas_sim(&["validate", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn rejects_unknown_controller_name() {
    let out = caas_sim(&["run", "--controllers", "psychic"]);
    assert!(!out.status.success());
}

#[test]
fn gen_scenario_is_deterministic_per_seed() {
    let a = stdout(&caas_sim(&["gen-scenario", "--seed", "9"]));
    let b = stdout(&caas_sim(&["gen-scenario", "--seed", "9"]));
    let c = stdout(&caas_sim(&["gen-scenario", "--seed", "10"]));
    assert_eq!(a, b);
    assert_ne!(a, c);
    let _: serde_json::Value = serde_json::from_str(&a).unwrap();
}

#[test]
fn scenario_path_is_reported_in_errors() {
    let out = caas_sim(&[
        "validate",
        Path::new("/nonexistent/scenario.json").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}
