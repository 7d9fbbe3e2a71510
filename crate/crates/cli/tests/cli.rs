//! Black-box tests of the installed binary: exit codes, artifact shapes,
//! and subcommand flows over the bundled fixtures.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_conflictkit")
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn run(args: &[&str]) -> Output {
    Command::new(binary())
        .args(args)
        .output()
        .expect("binary should run")
}

fn mini_config() -> String {
    data_dir().join("mini/config.toml").display().to_string()
}

fn mini_dataset() -> String {
    data_dir().join("mini/dataset.jsonl").display().to_string()
}

#[test]
fn unknown_subcommand_exits_2_with_usage() {
    let output = run(&["frobnicate"]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.to_lowercase().contains("usage"), "stderr: {stderr}");
}

#[test]
fn missing_config_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let output = run(&[
        "detect",
        "--dataset",
        &mini_dataset(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn nonexistent_dataset_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let output = run(&[
        "--config",
        &mini_config(),
        "detect",
        "--dataset",
        "/nonexistent/items.jsonl",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn replay_miss_is_a_pipeline_error() {
    // The mini recording has no next-token entries, so elicit must fail with
    // a pipeline error (exit 1), not a config error.
    let output = run(&[
        "--config",
        &mini_config(),
        "elicit",
        "--dataset",
        &mini_dataset(),
        "--item-id",
        "mini-000",
        "--max-tokens",
        "4",
    ]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn detect_writes_artifact_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let output = run(&[
        "--config",
        &mini_config(),
        "detect",
        "--dataset",
        &mini_dataset(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("== conflict detection =="));

    let artifact: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(artifact["report"]["n_total"], 50);
    assert_eq!(artifact["report"]["n_recognized"], 45);
    assert_eq!(artifact["meta"]["seed"], 42);
    assert!(artifact["meta"]["config_sha256"].is_string());
    assert!(artifact["meta"]["dataset_sha256"].is_string());
    // The CR identity holds in the written artifact.
    let fr = artifact["report"]["flip_rate"].as_f64().unwrap();
    let delta = artifact["report"]["delta_acc"].as_f64().unwrap();
    let cr = artifact["report"]["conflict_rate_lb"].as_f64().unwrap();
    assert_eq!(cr, fr - delta);

    let csv = std::fs::read_to_string(out.with_extension("csv")).unwrap();
    assert!(csv.starts_with("item_id,gold,recognized"));
    assert_eq!(csv.lines().count(), 51);
}

#[test]
fn full_flow_dcd_mitigate_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let dcd = dir.path().join("dcd.json");
    let mitigated = dir.path().join("mitigated.json");
    let summary = dir.path().join("summary.csv");

    assert!(run(&[
        "--config",
        &mini_config(),
        "detect",
        "--dataset",
        &mini_dataset(),
        "--out",
        report.to_str().unwrap(),
    ])
    .status
    .success());

    let output = run(&[
        "dcd",
        "--report",
        report.to_str().unwrap(),
        "--out",
        dcd.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stdout).contains("DCD Acc / R.Acc"));

    let output = run(&[
        "--config",
        &mini_config(),
        "mitigate",
        "--report",
        report.to_str().unwrap(),
        "--dataset",
        &mini_dataset(),
        "--strategy",
        "reminder",
        "--out",
        mitigated.to_str().unwrap(),
    ]);
    assert!(output.status.success());

    let output = run(&[
        "report",
        "--report",
        report.to_str().unwrap(),
        "--dcd",
        dcd.to_str().unwrap(),
        "--mitigate",
        mitigated.to_str().unwrap(),
        "--out-csv",
        summary.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("== conflict detection =="));
    assert!(text.contains("== dynamic contrastive decoding =="));
    assert!(text.contains("== mitigation: reminder =="));

    let csv = std::fs::read_to_string(&summary).unwrap();
    assert!(csv.starts_with("method,acc,racc,fr,cr"));
    assert!(csv.contains("\ndcd,"));
    assert!(csv.contains("\nreminder,"));
}

#[test]
fn analyze_confidence_over_replay() {
    let dir = tempfile::tempdir().unwrap();
    for strategy in ["max", "shift"] {
        let out = dir.path().join(format!("conf_{strategy}.json"));
        let output = run(&[
            "--config",
            &mini_config(),
            "analyze-confidence",
            "--dataset",
            &mini_dataset(),
            "--strategy",
            strategy,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(output.status.code(), Some(0), "strategy {strategy}");
        let artifact: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(artifact["report"]["n_total"], 50);
        assert!(artifact["report"]["acc"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn contrast_writes_scores_and_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    let hist = dir.path().join("hist.csv");
    let output = run(&[
        "--config",
        &mini_config(),
        "contrast",
        "--dataset",
        &mini_dataset(),
        "--out",
        scores.to_str().unwrap(),
        "--hist",
        hist.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("median contrast"));

    let scores_csv = std::fs::read_to_string(&scores).unwrap();
    assert!(scores_csv.starts_with("item_id,flipped,eval_token,metric"));
    assert_eq!(scores_csv.lines().count(), 51);

    let hist_csv = std::fs::read_to_string(&hist).unwrap();
    assert!(hist_csv.starts_with("bin_lower,count"));
    let total: usize = hist_csv
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 50);
}

#[test]
fn build_dataset_from_synthetic_generator() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("built.jsonl");
    let config = data_dir().join("synthetic/config.toml");
    let input = data_dir().join("synthetic/raw_qa.jsonl");
    let output = run(&[
        "--config",
        config.to_str().unwrap(),
        "build-dataset",
        "--input",
        input.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
        "--n",
        "3",
    ]);
    assert_eq!(output.status.code(), Some(0));
    let built = std::fs::read_to_string(&out).unwrap();
    assert_eq!(built.lines().count(), 3);
}

#[test]
fn elicit_prints_scripted_memory() {
    let config = data_dir().join("synthetic/config.toml");
    let dataset = data_dir().join("synthetic/elicit_dataset.jsonl");
    let output = run(&[
        "--config",
        config.to_str().unwrap(),
        "elicit",
        "--dataset",
        dataset.to_str().unwrap(),
        "--item-id",
        "syn-elicit-01",
        "--max-tokens",
        "8",
        "--stop-token",
        ".",
    ]);
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert_eq!(stdout.trim(), "Brontis harbor district.");
}

#[test]
fn backend_override_replaces_config_backend() {
    // Point the override at a nonexistent recording: the config is otherwise
    // valid, so the failure must be the override's missing file (exit 2).
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let output = run(&[
        "--config",
        &mini_config(),
        "--backend",
        "replay:/nonexistent/recording.jsonl",
        "detect",
        "--dataset",
        &mini_dataset(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
}
