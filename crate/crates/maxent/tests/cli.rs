//! End-to-end checks of the `maxent` binary: subcommand behavior, JSON
//! schemas, exit codes, and byte determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_maxent"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_json(args: &[&str]) -> serde_json::Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "exit {:?}, stderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("valid JSON on stdout")
}

fn binary_json() -> String {
    data("binary.json").display().to_string()
}

#[test]
fn normalize_reports_problem_and_transform() {
    let doc = run_json(&["normalize", &binary_json()]);
    assert_eq!(doc["problem"]["r"][0][0].as_f64().unwrap(), 1.0);
    assert_eq!(doc["transform"]["a"][0][0].as_f64().unwrap(), 1.0);
    assert_eq!(doc["transform"]["b"][0].as_f64().unwrap(), 0.0);
}

#[test]
fn expand_emits_table_schema() {
    let doc = run_json(&[
        "expand",
        "--order",
        "6",
        "--basis",
        "cumulant",
        &binary_json(),
    ]);
    assert_eq!(doc["basis"], "cumulant");
    assert_eq!(doc["order"], 6);
    let outputs = doc["outputs"].as_array().unwrap();
    // λ'_0, λ_1, σ
    assert_eq!(outputs.len(), 3);
    let lambda1 = outputs
        .iter()
        .find(|o| o["index"] == 1)
        .expect("output 1 present");
    let first = &lambda1["series"][0];
    assert_eq!(first["index"][0], 1);
    assert!((first["value"].as_f64().unwrap() + 1.0).abs() < 1e-12);
}

#[test]
fn eval_raw_routes_through_transform() {
    let dir = std::env::temp_dir().join("maxent-cli-eval");
    std::fs::create_dir_all(&dir).unwrap();
    let problem_path = dir.join("scaled.json");
    std::fs::write(
        &problem_path,
        r#"{"alphabet":["a","b"],"q":[0.5,0.5],"r":[[3,1]]}"#,
    )
    .unwrap();
    let problem = problem_path.display().to_string();
    let table_path = dir.join("table.json");
    let table = run(&["expand", "--order", "4", &problem]);
    assert!(table.status.success());
    std::fs::write(&table_path, &table.stdout).unwrap();
    let table = table_path.display().to_string();

    // raw ρ = 2.5 maps to normalized 0.5 under r'' = (r − 2)
    let doc = run_json(&["eval", "--table", &table, "--rho", "2.5", "--raw", &problem]);
    assert!((doc["normalized_rho"][0].as_f64().unwrap() - 0.5).abs() < 1e-12);
    let plain = run_json(&["eval", "--table", &table, "--rho", "0.5", &problem]);
    assert_eq!(doc["outputs"], plain["outputs"]);
}

#[test]
fn solve_matches_closed_form() {
    let doc = run_json(&["solve", "--rho", "0.2", &binary_json()]);
    let lambda = doc["lambda"][0].as_f64().unwrap();
    assert!((lambda + 0.2f64.atanh()).abs() < 1e-9);
    assert!((doc["sigma"].as_f64().unwrap() - 0.6).abs() < 1e-9);
    assert!((doc["p"][0].as_f64().unwrap() - 0.6).abs() < 1e-9);
}

#[test]
fn trees_breakdown_sums_to_coefficient() {
    let doc = run_json(&[
        "trees",
        "--output",
        "1",
        "--index",
        "3",
        "--basis",
        "moment",
        &binary_json(),
    ]);
    let trees = doc["trees"].as_array().unwrap();
    assert_eq!(trees.len(), 3);
    let total = doc["total"].as_f64().unwrap();
    assert!((total + 1.0 / 3.0).abs() < 1e-12);
    let sum: f64 = trees
        .iter()
        .map(|t| t["contribution"].as_f64().unwrap())
        .sum();
    assert_eq!(sum, total);
}

#[test]
fn verify_reports_slope() {
    let doc = run_json(&[
        "verify",
        "--order",
        "5",
        "--radii",
        "0.05,0.1,0.2",
        "--samples",
        "10",
        "--seed",
        "7",
        &binary_json(),
    ]);
    assert!(doc["global_slope"].as_f64().unwrap() >= 5.5);
    assert_eq!(doc["failures"].as_array().unwrap().len(), 0);
    assert!(doc.get("wall_time_ms").is_none());
}

#[test]
fn byte_determinism() {
    let args = [
        "verify",
        "--order",
        "4",
        "--radii",
        "0.05,0.1",
        "--samples",
        "8",
        "--seed",
        "11",
        &binary_json(),
    ];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);

    let skewed = data("skewed.json").display().to_string();
    let args = ["expand", "--order", "5", "--basis", "moment", &skewed];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn csv_ingestion() {
    let csv = data("samples.csv").display().to_string();
    let doc = run_json(&["normalize", "--csv", "--with-target", &csv]);
    assert_eq!(doc["problem"]["q"][0].as_f64().unwrap(), 0.5);
    assert_eq!(doc["problem"]["s"][0].as_f64().unwrap(), 3.0);
    let doc = run_json(&["expand", "--order", "3", "--csv", "--with-target", &csv]);
    assert_eq!(doc["outputs"].as_array().unwrap().len(), 3);
}

/// Full pipeline on a three-symbol problem: expand a table, evaluate it at
/// raw coordinates, and confirm the solver at the mapped normalized point
/// agrees to within the truncation error.
#[test]
fn pipeline_raw_eval_matches_solver() {
    let skewed = data("skewed.json").display().to_string();
    let dir = std::env::temp_dir().join("maxent-cli-pipeline");
    std::fs::create_dir_all(&dir).unwrap();

    let normalized = run_json(&["normalize", &skewed]);
    let b: Vec<f64> = normalized["transform"]["b"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();

    let table_path = dir.join("table.json");
    let table = run(&["expand", "--order", "6", &skewed]);
    assert!(table.status.success());
    std::fs::write(&table_path, &table.stdout).unwrap();

    // a raw point near the reference expectations
    let raw: Vec<f64> = vec![b[0] + 0.05, b[1] - 0.04];
    let raw_arg = format!("{},{}", raw[0], raw[1]);
    let eval = run_json(&[
        "eval",
        "--table",
        &table_path.display().to_string(),
        "--rho",
        &raw_arg,
        "--raw",
        &skewed,
    ]);
    let normalized_rho: Vec<f64> = eval["normalized_rho"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let rho_arg = format!("{},{}", normalized_rho[0], normalized_rho[1]);
    let solved = run_json(&["solve", "--rho", &rho_arg, &skewed]);

    for out in eval["outputs"].as_array().unwrap() {
        let j = out["index"].as_u64().unwrap() as usize;
        let predicted = out["value"].as_f64().unwrap();
        let truth = match j {
            0 => solved["lambda0_prime"].as_f64().unwrap(),
            1 | 2 => solved["lambda"][j - 1].as_f64().unwrap(),
            _ => solved["sigma"].as_f64().unwrap(),
        };
        assert!(
            (predicted - truth).abs() < 1e-6,
            "output {j}: series {predicted} vs solver {truth}"
        );
    }
}

#[test]
fn exit_codes() {
    // usage: unknown subcommand / bad flags
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        run(&["expand", "--order", "0", &binary_json()])
            .status
            .code(),
        Some(1)
    );
    // data: missing file, malformed problem
    assert_eq!(
        run(&["expand", "--order", "3", "/nonexistent.json"])
            .status
            .code(),
        Some(2)
    );
    let dir = std::env::temp_dir().join("maxent-cli-exit");
    std::fs::create_dir_all(&dir).unwrap();
    let bad = dir.join("bad.json");
    std::fs::write(&bad, r#"{"alphabet":["a","b"],"q":[0.5,0.6],"r":[[1,-1]]}"#).unwrap();
    assert_eq!(
        run(&["expand", "--order", "3", &bad.display().to_string()])
            .status
            .code(),
        Some(2)
    );
    // numerical: infeasible constraint value
    assert_eq!(
        run(&["solve", "--rho", "1.5", &binary_json()])
            .status
            .code(),
        Some(3)
    );
    // usage: wrong --rho arity
    assert_eq!(
        run(&["solve", "--rho", "0.1,0.2", &binary_json()])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn diagnostics_flag_adds_tree_counts() {
    let plain = run_json(&["expand", "--order", "3", &binary_json()]);
    let with = run_json(&["expand", "--order", "3", "--diagnostics", &binary_json()]);
    let entry = &plain["outputs"][1]["series"][0];
    assert!(entry.get("trees").is_none());
    let entry = &with["outputs"][1]["series"][0];
    assert_eq!(entry["trees"], 1); // the order-one carrier is a single tree
}

#[test]
fn thread_cap_does_not_change_output() {
    let args = [
        "verify",
        "--order",
        "4",
        "--radii",
        "0.05,0.1",
        "--samples",
        "8",
        "--seed",
        "11",
    ];
    let binary = binary_json();
    let one = bin()
        .args(args)
        .arg(&binary)
        .env("MAXENT_THREADS", "1")
        .output()
        .unwrap();
    let four = bin()
        .args(args)
        .arg(&binary)
        .env("MAXENT_THREADS", "4")
        .output()
        .unwrap();
    assert!(one.status.success());
    assert_eq!(one.stdout, four.stdout);
}

#[test]
fn drop_dependent_flag() {
    let dir = std::env::temp_dir().join("maxent-cli-drop");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("dependent.json");
    std::fs::write(
        &path,
        r#"{"alphabet":["a","b"],"q":[0.5,0.5],"r":[[1,-1],[2,-2]]}"#,
    )
    .unwrap();
    let p = path.display().to_string();
    assert_eq!(run(&["normalize", &p]).status.code(), Some(2));
    let doc = run_json(&["normalize", "--drop-dependent", &p]);
    assert_eq!(doc["problem"]["r"].as_array().unwrap().len(), 1);
}
