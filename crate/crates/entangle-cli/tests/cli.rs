//! End-to-end contract tests for the `entangle` binary: exit codes, artifact
//! layout, environment handling, and the decompose verb.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use entangle::scenario::{build_leaf_update_control, bundle_by_id, ExpectedEffect};
use entangle::graph::NodeId;

fn entangle(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_entangle"));
    cmd.args(args);
    cmd
}

fn run(args: &[&str]) -> Output {
    entangle(args).output().expect("binary launches")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("read {path:?}: {e}"));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("parse {path:?}: {e}"))
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let version = run(&["--version"]);
    assert_eq!(version.status.code(), Some(0));
    assert!(stdout(&version).contains("entangle"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(run(&["run", "S1-approximation", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
}

#[test]
fn unknown_scenario_is_a_usage_error() {
    let output = run(&["run", "no-such-scenario"]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("entangle list"));
}

#[test]
fn missing_config_file_is_a_usage_error() {
    let output = run(&["run", "/definitely/not/here.json"]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn invalid_json_config_is_a_usage_error() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("broken.json");
    fs::write(&path, "not json at all").expect("write");
    let output = run(&["run", path.to_str().expect("utf-8 path")]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("invalid config"));
}

#[test]
fn list_shows_all_shipped_scenarios() {
    let output = run(&["list"]);
    assert_eq!(output.status.code(), Some(0));
    let text = stdout(&output);
    for id in [
        "S1-approximation",
        "S2-estimation",
        "S3-anticorrelated",
        "S4-correlated",
        "S5-loss-mismatch",
    ] {
        assert!(text.contains(id), "listing is missing {id}:\n{text}");
    }
}

#[test]
fn list_json_is_machine_readable() {
    let output = run(&["list", "--json"]);
    assert_eq!(output.status.code(), Some(0));
    let rows: Vec<Value> = serde_json::from_str(&stdout(&output)).expect("valid JSON");
    assert_eq!(rows.len(), 5);
    for row in &rows {
        assert!(row["id"].is_string());
        assert!(row["description"].is_string());
        assert!(row["update_target"].is_string());
    }
}

#[test]
fn run_writes_all_artifacts() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path().join("artifacts");
    let output = run(&[
        "run",
        "S3-anticorrelated",
        "--trials",
        "20",
        "--out",
        out.to_str().expect("utf-8 path"),
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));

    let report = read_json(&out.join("report.json"));
    assert_eq!(report["scenario"], "S3-anticorrelated");
    assert_eq!(report["self_defeating"], true);
    assert_eq!(report["all_effects_hold"], true);

    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["scenario"], "S3-anticorrelated");
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["trials"], 20);
    assert_eq!(manifest["strict_improvement"], false);
    assert!(manifest["run_id"].as_str().expect("run id").len() == 16);

    let config = read_json(&out.join("config.json"));
    assert_eq!(config["id"], "S3-anticorrelated");

    let csv = fs::read_to_string(out.join("points.csv")).expect("points.csv");
    let mut lines = csv.lines();
    let header = lines.next().expect("header row");
    assert!(header.starts_with("index,mass,x0"));
    assert!(header.contains("before_w_0") && header.contains("after_w_0"));
    assert_eq!(lines.count(), 4, "one row per support point");

    // The summary narrates the verdict.
    assert!(stdout(&output).contains("self-defeating: yes"));
}

#[test]
fn violated_expected_effect_exits_2_and_still_writes_artifacts() {
    let mut bundle = bundle_by_id("S3-anticorrelated", false).expect("shipped bundle");
    bundle.expected_effects.push(ExpectedEffect::NodeLoss {
        node: NodeId::new("w"),
        before: None,
        after: Some(0.999),
    });
    let dir = tempfile::tempdir().expect("tempdir");
    let config_path = dir.path().join("falsified.json");
    fs::write(&config_path, bundle.to_config().to_json()).expect("write config");
    let out = dir.path().join("artifacts");

    let output = run(&[
        "run",
        config_path.to_str().expect("utf-8 path"),
        "--trials",
        "20",
        "--out",
        out.to_str().expect("utf-8 path"),
    ]);
    assert_eq!(output.status.code(), Some(2), "stderr: {}", stderr(&output));
    assert!(stderr(&output).contains("expected effect violated"));

    let report = read_json(&out.join("report.json"));
    assert_eq!(report["all_effects_hold"], false);
    assert_eq!(report["self_defeating"], true, "engine results are still recorded");
}

#[test]
fn strict_improvement_flag_rejects_tie_updates() {
    let bundle = build_leaf_update_control();
    let dir = tempfile::tempdir().expect("tempdir");
    let config_path = dir.path().join("control.json");
    fs::write(&config_path, bundle.to_config().to_json()).expect("write config");
    let config = config_path.to_str().expect("utf-8 path");

    let lenient_out = dir.path().join("lenient");
    let output = run(&["run", config, "--out", lenient_out.to_str().expect("path")]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    let report = read_json(&lenient_out.join("report.json"));
    assert_eq!(report["strict_improvement"], false);
    assert_eq!(report["outcome"]["improvement_held"], true);

    let strict_out = dir.path().join("strict");
    let output = run(&[
        "run",
        config,
        "--strict-improvement",
        "--out",
        strict_out.to_str().expect("path"),
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    let report = read_json(&strict_out.join("report.json"));
    assert_eq!(report["strict_improvement"], true);
    assert_eq!(report["outcome"]["improvement_held"], false, "a tie is not a strict improvement");
    assert_eq!(report["self_defeating"], false);
}

#[test]
fn entangle_out_env_var_sets_the_output_root() {
    let dir = tempfile::tempdir().expect("tempdir");
    for _ in 0..2 {
        let output = entangle(&["run", "S1-approximation"])
            .env("ENTANGLE_OUT", dir.path())
            .output()
            .expect("binary launches");
        assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    }
    // Equal parameters hash to the same run id, so both runs share one folder.
    let entries: Vec<_> = fs::read_dir(dir.path())
        .expect("read output root")
        .map(|e| e.expect("entry").path())
        .collect();
    assert_eq!(entries.len(), 1, "equal-seed runs share a run-id directory");
    assert!(entries[0].join("report.json").is_file());
    assert!(entries[0].join("manifest.json").is_file());
}

#[test]
fn filter_train_range_outside_s5_is_a_usage_error() {
    let output = run(&["run", "S1-approximation", "--filter-train-range"]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("S5-loss-mismatch"));
}

#[test]
fn filter_train_range_mitigates_the_s5_degradation() {
    let dir = tempfile::tempdir().expect("tempdir");
    let plain_out = dir.path().join("plain");
    let output = run(&["run", "S5-loss-mismatch", "--out", plain_out.to_str().expect("path")]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    assert_eq!(read_json(&plain_out.join("report.json"))["self_defeating"], true);

    let filtered_out = dir.path().join("filtered");
    let output = run(&[
        "run",
        "S5-loss-mismatch",
        "--filter-train-range",
        "--out",
        filtered_out.to_str().expect("path"),
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    assert_eq!(read_json(&filtered_out.join("report.json"))["self_defeating"], false);
}

#[test]
fn decompose_prints_the_term_tables() {
    let output = run(&["decompose", "S1-approximation"]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    let text = stdout(&output);
    for label in ["bayes risk", "approximation error", "estimation error", "total excess"] {
        assert!(text.contains(label), "two-model table is missing '{label}':\n{text}");
    }

    let output = run(&["decompose", "S3-anticorrelated", "--pair", "two-upstream"]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    let text = stdout(&output);
    for label in ["compatibility error", "excess upstream error", "companion params"] {
        assert!(text.contains(label), "two-upstream table is missing '{label}':\n{text}");
    }
}

#[test]
fn decompose_without_an_upstream_pair_is_a_usage_error() {
    let output = run(&["decompose", "S1-approximation", "--pair", "two-upstream"]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("two-model"));
}

#[test]
fn decompose_out_writes_a_json_artifact() {
    let dir = tempfile::tempdir().expect("tempdir");
    let output = run(&[
        "decompose",
        "S3-anticorrelated",
        "--pair",
        "two-upstream",
        "--out",
        dir.path().to_str().expect("utf-8 path"),
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    let artifact = read_json(&dir.path().join("decompose.json"));
    assert_eq!(artifact["scenario"], "S3-anticorrelated");
    assert_eq!(artifact["pair"], "two-upstream");
    assert_eq!(artifact["before"]["compatibility_error"], 0.0);
    assert_eq!(artifact["after"]["compatibility_error"], 0.125);
}
