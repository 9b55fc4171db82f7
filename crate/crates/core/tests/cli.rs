//! CLI contract tests: exit codes, strict config parsing, file round-trips,
//! and in-process/subprocess agreement.

use std::path::Path;
use std::process::{Command, Output};

use nettomo::config::SimulationArtifact;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_nettomo")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

#[test]
fn simulate_output_parses_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["simulate", "--seed", "5", "--out", "sim.json"]);
    assert!(out.status.success());

    let text = std::fs::read_to_string(dir.path().join("sim.json")).unwrap();
    let artifact: SimulationArtifact = serde_json::from_str(&text).unwrap();
    let reserialized = serde_json::to_string_pretty(&artifact).unwrap() + "\n";
    assert_eq!(text, reserialized);
}

#[test]
fn unknown_config_key_exits_2_with_key_name() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"sim": {"n_exterior": 4, "p_edgee": 0.5}}"#).unwrap();
    let out = run_in(
        dir.path(),
        &["simulate", "--config", config.to_str().unwrap(), "--out", "x.json"],
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("p_edgee"), "stderr: {stderr}");
}

#[test]
fn oracle_on_observables_only_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["simulate", "--seed", "5", "--observables-only", "--out", "sim.json"],
    );
    assert!(out.status.success());
    let out = run_in(
        dir.path(),
        &["estimate", "--input", "sim.json", "--estimator", "oracle", "--out", "est.json"],
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("traffic"), "stderr: {stderr}");
}

#[test]
fn missing_input_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["estimate", "--input", "nope.json", "--estimator", "mre", "--out", "est.json"],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_estimator_and_study_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    run_in(dir.path(), &["simulate", "--seed", "5", "--out", "sim.json"]);
    let out = run_in(
        dir.path(),
        &["estimate", "--input", "sim.json", "--estimator", "zzz", "--out", "e.json"],
    );
    assert_eq!(out.status.code(), Some(2));
    let out = run_in(dir.path(), &["study", "--study", "zzz", "--out", "s"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn inconsistent_observations_exit_3() {
    // Hand-crafted two-node artifact whose egress and ingress totals cannot
    // come from any traffic matrix: egress says 5 messages left node 0,
    // ingress says 7 arrived at node 1.
    let dir = tempfile::tempdir().unwrap();
    let artifact = serde_json::json!({
        "config": {"n_exterior": 2, "ticks": 1, "seed": 0},
        "trial": 0,
        "topology": {
            "n_exterior": 2,
            "n_interior": 0,
            "pairs": [[0, 1]],
            "routes": [[]]
        },
        "baseline": [1.0],
        "scheme": {
            "monitor_egress": [true, true],
            "monitor_ingress": [true, true],
            "monitor_flows": [],
            "observed_pairs": []
        },
        "observations": {
            "rows": [
                {"kind": "egress", "node": 0},
                {"kind": "egress", "node": 1},
                {"kind": "ingress", "node": 0},
                {"kind": "ingress", "node": 1}
            ],
            "y": [[5, 0, 0, 7]]
        }
    });
    std::fs::write(
        dir.path().join("sim.json"),
        serde_json::to_string_pretty(&artifact).unwrap(),
    )
    .unwrap();
    let out = run_in(
        dir.path(),
        &["estimate", "--input", "sim.json", "--estimator", "mre", "--out", "e.json"],
    );
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn cli_estimate_matches_in_process_run() {
    let dir = tempfile::tempdir().unwrap();
    run_in(dir.path(), &["simulate", "--seed", "21", "--out", "sim.json"]);
    let out = run_in(
        dir.path(),
        &[
            "estimate", "--input", "sim.json", "--estimator", "mre_hipois", "--seed", "21",
            "--out", "est.json",
        ],
    );
    assert!(out.status.success());

    let artifact = SimulationArtifact::load(&dir.path().join("sim.json")).unwrap();
    let op = nettomo::net::build_operator(&artifact.topology, &artifact.scheme).unwrap();
    let mut settings = nettomo::config::RunConfig::default().settings_for(
        nettomo::estimators::EstimatorTag::MreHipois,
    );
    // Same derivation the CLI uses.
    settings.seed = nettomo::rng::derive_seed(21, &[artifact.trial]);
    let report = nettomo::estimators::mre_hipois(
        &artifact.observations,
        &op,
        &artifact.baseline,
        &settings,
    )
    .unwrap();

    let written: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("est.json")).unwrap())
            .unwrap();
    let in_process = serde_json::to_value(&report).unwrap();
    assert_eq!(written["report"], in_process);
}

#[test]
fn study_csv_headers_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.json");
    std::fs::write(
        &config,
        r#"{
            "sim": {"n_exterior": 4, "ticks": 20},
            "study": {
                "kind": "mse_vs_edges",
                "fractions": [0.0, 1.0],
                "ticks_sweep": [20],
                "estimators": ["oracle", "mre"],
                "trials": 4
            }
        }"#,
    )
    .unwrap();
    let out = run_in(
        dir.path(),
        &["study", "--config", config.to_str().unwrap(), "--out", "out"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mse_vs_edges"), "stdout: {stdout}");

    let csv = std::fs::read_to_string(dir.path().join("out/mse_vs_edges.csv")).unwrap();
    assert!(csv.starts_with("fraction,estimator,mean_mse,std_err,trials,failures\n"));
    let json: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/mse_vs_edges.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(json["provenance"]["trials"], 4);
    assert!(json["provenance"]["settings_hash"].is_string());
}

#[test]
fn detect_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.json");
    // Few null draws keep the calibration quick; quality is tested elsewhere.
    std::fs::write(
        &config,
        r#"{
            "sim": {"n_exterior": 4, "ticks": 40},
            "detect": {"null_draws": 24}
        }"#,
    )
    .unwrap();
    let cfg = config.to_str().unwrap();
    run_in(dir.path(), &["simulate", "--config", cfg, "--seed", "3", "--out", "sim.json"]);
    run_in(
        dir.path(),
        &[
            "estimate", "--config", cfg, "--input", "sim.json", "--estimator", "mre_hipois",
            "--seed", "3", "--out", "est.json",
        ],
    );
    let out = run_in(
        dir.path(),
        &[
            "detect", "--config", cfg, "--input", "sim.json", "--estimate", "est.json",
            "--seed", "3", "--out", "det.json",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let det: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("det.json")).unwrap())
            .unwrap();
    assert!(det["result"]["statistic"].is_number());
    assert!(det["result"]["threshold"].is_number());
    assert!(det["result"]["decision"].is_boolean());
    assert_eq!(
        det["result"]["per_edge"].as_array().unwrap().len(),
        12 // 4 * 3 ordered pairs
    );
}
