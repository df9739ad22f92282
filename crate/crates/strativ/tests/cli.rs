//! End-to-end CLI contract tests driven through the built binary.

use std::path::Path;
use std::process::Command;

use rand::SeedableRng;

fn strativ() -> Command {
    Command::new(env!("CARGO_BIN_EXE_strativ"))
}

fn write_demo_data(path: &Path, n: usize, seed: u64) {
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let spec = strativ::sim::ScenarioSpec::part3(2).unwrap();
    let data = spec.generate(n, &mut rng);
    data.save(path).unwrap();
}

#[test]
fn missing_input_file_exits_2_with_error_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = strativ()
        .args([
            "--output-dir",
            dir.path().to_str().unwrap(),
            "summaries",
            "--data",
            "/nonexistent/input.csv",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let parsed: serde_json::Value = serde_json::from_str(&stderr).expect("error must be JSON");
    assert_eq!(parsed["error"], "io");
    assert!(
        parsed["message"]
            .as_str()
            .unwrap()
            .contains("/nonexistent/input.csv"),
        "error message must name the path: {stderr}"
    );
}

#[test]
fn refuses_to_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_demo_data(&data, 400, 1);
    let args = |d: &Path| {
        vec![
            "--output-dir".to_string(),
            d.to_str().unwrap().to_string(),
            "stratify".to_string(),
            "--data".to_string(),
            data.to_str().unwrap().to_string(),
            "--set".to_string(),
            "k=4".to_string(),
        ]
    };
    assert!(strativ().args(args(dir.path())).status().unwrap().success());
    let second = strativ().args(args(dir.path())).output().unwrap();
    assert_eq!(second.status.code(), Some(2));
    // --force allows the rerun
    let mut forced = args(dir.path());
    forced.insert(0, "--force".to_string());
    assert!(strativ().args(forced).status().unwrap().success());
}

#[test]
fn stratify_emits_labels_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_demo_data(&data, 503, 2);
    assert!(strativ()
        .args([
            "--output-dir",
            dir.path().to_str().unwrap(),
            "stratify",
            "--data",
            data.to_str().unwrap(),
            "--set",
            "k=5",
        ])
        .status()
        .unwrap()
        .success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("stratify.json")).unwrap())
            .unwrap();
    assert_eq!(report["strata_count"], 5);
    assert_eq!(report["excluded_count"], 3);
    let labels = std::fs::read_to_string(dir.path().join("strata.csv")).unwrap();
    assert_eq!(labels.matches("excluded").count(), 3);
    // one label line per row plus comment and header
    assert_eq!(labels.lines().count(), 503 + 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["subcommand"], "stratify");
    assert_eq!(report["run_id"], manifest["run_id"]);
}

#[test]
fn sss_predict_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_demo_data(&data, 2_000, 3);
    assert!(strativ()
        .args([
            "--output-dir",
            dir.path().to_str().unwrap(),
            "sss",
            "--data",
            data.to_str().unwrap(),
            "--set",
            "k=8",
            "--set",
            "p=30",
            "--samples",
            "1500",
            "--test-linearity",
        ])
        .status()
        .unwrap()
        .success());
    let sss: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sss.json")).unwrap())
            .unwrap();
    assert!(sss["linearity"]["p_value"].is_number());
    assert_eq!(sss["summaries"].as_array().unwrap().len(), 8);

    let fit_path = dir.path().join("susie_fit.json");
    let out2 = dir.path().join("pred");
    assert!(strativ()
        .args([
            "--output-dir",
            out2.to_str().unwrap(),
            "predict",
            "--data",
            data.to_str().unwrap(),
            "--fit",
            fit_path.to_str().unwrap(),
            "--x-star",
            "0.0",
        ])
        .status()
        .unwrap()
        .success());
    let pred: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out2.join("predict.json")).unwrap()).unwrap();
    assert_eq!(pred["n"], 2000);
    assert!(pred["mean"].is_number());
    let lines = std::fs::read_to_string(out2.join("predictions.csv")).unwrap();
    assert_eq!(lines.lines().count(), 2000 + 2);
}

#[test]
fn fit_auto_lambda_reports_gcv_trace() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_demo_data(&data, 3_000, 4);
    assert!(strativ()
        .args([
            "--output-dir",
            dir.path().to_str().unwrap(),
            "fit",
            "--data",
            data.to_str().unwrap(),
            "--set",
            "k=12",
            "--mode",
            "sos",
            "--basis",
            "poly:2",
            "--lambda",
            "auto",
        ])
        .status()
        .unwrap()
        .success());
    let fit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("fit.json")).unwrap())
            .unwrap();
    assert!(!fit["fit"]["gcv_trace"].as_array().unwrap().is_empty());
    assert_eq!(fit["fit"]["b_hat"].as_array().unwrap().len(), 3);
    let curve = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert!(curve
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("x,h,h_lo,h_hi,h_prime"));
}

#[test]
fn test_linearity_detects_jump_and_accepts_line() {
    let dir = tempfile::tempdir().unwrap();
    let spec = strativ::sim::ScenarioSpec::part3(2).unwrap();
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);

    let jump = spec.generate(30_000, &mut rng);
    let jump_path = dir.path().join("jump.csv");
    jump.save(&jump_path).unwrap();
    let linear = spec
        .with_case(strativ::sim::EffectCase::Linear)
        .generate(30_000, &mut rng);
    let line_path = dir.path().join("line.csv");
    linear.save(&line_path).unwrap();

    let run = |name: &str, path: &Path| -> serde_json::Value {
        let out = dir.path().join(name);
        assert!(strativ()
            .args([
                "--output-dir",
                out.to_str().unwrap(),
                "test-linearity",
                "--data",
                path.to_str().unwrap(),
                "--set",
                "stratifier=residual",
            ])
            .status()
            .unwrap()
            .success());
        serde_json::from_str(&std::fs::read_to_string(out.join("linearity.json")).unwrap()).unwrap()
    };
    let jump_p = run("jump", &jump_path)["result"]["p_value"]
        .as_f64()
        .unwrap();
    let line_p = run("line", &line_path)["result"]["p_value"]
        .as_f64()
        .unwrap();
    assert!(jump_p < 0.01, "jump p-value {jump_p}");
    assert!(line_p > 0.01, "linear p-value {line_p}");
}

#[test]
fn simulate_writes_study_and_mse_table() {
    let dir = tempfile::tempdir().unwrap();
    assert!(strativ()
        .args([
            "--output-dir",
            dir.path().to_str().unwrap(),
            "simulate",
            "--scenario",
            "part1-s1",
            "--case",
            "linear",
            "--method",
            "m2",
            "--n",
            "2000",
            "--reps",
            "5",
            "--seed",
            "9",
        ])
        .status()
        .unwrap()
        .success());
    let study: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("study.json")).unwrap())
            .unwrap();
    assert_eq!(study["study"]["replications"], 5);
    assert_eq!(study["study"]["mse"].as_array().unwrap().len(), 5);
    let mse = std::fs::read_to_string(dir.path().join("mse.csv")).unwrap();
    assert_eq!(mse.lines().count(), 5 + 2);
}

#[test]
fn sss_reports_one_changepoint_on_planted_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("cp.csv");
    // one change-point at 0: the typical seeded run detects exactly one
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
    strativ::sim::ScenarioSpec::part3(2)
        .unwrap()
        .generate(30_000, &mut rng)
        .save(&data_path)
        .unwrap();
    assert!(strativ()
        .args([
            "--output-dir",
            dir.path().join("out").to_str().unwrap(),
            "sss",
            "--data",
            data_path.to_str().unwrap(),
            "--set",
            "k=50",
            "--samples",
            "1500",
        ])
        .status()
        .unwrap()
        .success());
    let sss: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out").join("sss.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(sss["fit"]["l_star"], 1);
    let effects = sss["effects"].as_array().unwrap();
    assert_eq!(effects.len(), 1);
    let mode = effects[0]["location_mode"].as_f64().unwrap();
    assert!(mode.abs() < 0.5, "detected change-point mode {mode}");
}

#[test]
fn tutorial_dataset_recovers_its_planted_threshold() {
    let tutorial = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/tutorial.csv");
    let dir = tempfile::tempdir().unwrap();
    assert!(strativ()
        .args([
            "--output-dir",
            dir.path().to_str().unwrap(),
            "sss",
            "--data",
            tutorial.to_str().unwrap(),
            "--set",
            "k=50",
            "--set",
            "knot_lo=0.0",
            "--samples",
            "2000",
        ])
        .status()
        .unwrap()
        .success());
    let sss: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sss.json")).unwrap())
            .unwrap();
    let effects = sss["effects"].as_array().unwrap();
    assert_eq!(effects.len(), 1, "expected a single detected change-point");
    let mode = effects[0]["location_mode"].as_f64().unwrap();
    assert!(
        (mode - 2.5).abs() < 1.0,
        "tutorial threshold planted at 2.5, detected {mode}"
    );
}

#[test]
fn tsv_and_custom_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.tsv");
    std::fs::write(
        &path,
        "id\tinstr\tdose\toutcome\n1\t0\t1.0\t2.0\n2\t1\t2.0\t3.0\n3\t0\t0.5\t1.0\n4\t1\t1.5\t2.5\n",
    )
    .unwrap();
    assert!(strativ()
        .args([
            "--output-dir",
            dir.path().to_str().unwrap(),
            "stratify",
            "--data",
            path.to_str().unwrap(),
            "--z-col",
            "instr",
            "--x-col",
            "dose",
            "--y-col",
            "outcome",
            "--set",
            "k=2",
        ])
        .status()
        .unwrap()
        .success());
}
