use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_metasdt"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("METASDT_OUT_DIR").output().unwrap()
}

fn run_with_stdin(args: &[&str], stdin: &[u8]) -> Output {
    let mut child = bin()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    // the child may exit before reading its input
    let _ = child.stdin.take().unwrap().write_all(stdin);
    child.wait_with_output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}); stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn error_kind(out: &Output) -> String {
    let v: Value = serde_json::from_slice(out.stderr.trim_ascii()).expect("stderr is one JSON object");
    v["error"]["kind"].as_str().unwrap().to_string()
}

/// Two models at two temperatures, enough trials for every cell.
fn write_small_grid(dir: &Path) -> String {
    let grid = dir.join("grid.toml");
    let mut text = String::new();
    for (i, (model, d, sm)) in [("a", 1.4, 0.0), ("b", 1.2, 0.6)].iter().enumerate() {
        for (j, t) in [0.5, 1.0].iter().enumerate() {
            text.push_str(&format!(
                "[[cohort]]\nmodel_id = \"{model}\"\ndataset_id = \"ds\"\ntemperature = {t}\nquestion_prefix = \"t{t}-q\"\nd_gen = {d}\nsigma_meta = {sm}\nn = 800\nseed = {}\n\n",
                10 + 2 * i + j
            ));
        }
    }
    fs::write(&grid, text).unwrap();
    let trials = dir.join("trials.jsonl");
    let out = run(&["simulate", "--grid", grid.to_str().unwrap(), "--out", trials.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    trials.to_str().unwrap().to_string()
}

#[test]
fn help_and_version_exit_zero() {
    assert!(run(&["--help"]).status.success());
    assert!(run(&["--version"]).status.success());
    assert!(run(&["evaluate", "--help"]).status.success());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["fit", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "usage");
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "k = 4\nnot_a_setting = 1\n").unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "fit", "--trials", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "usage");

    fs::write(&cfg, "tost_delta = -1.0\n").unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "fit", "--trials", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let out = run(&["fit", "--trials", "/definitely/not/here.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "runtime");
}

#[test]
fn k_bound_on_fit() {
    let sim = run(&["simulate", "--d-gen", "1.0", "--n", "2000", "--seed", "3"]);
    assert!(sim.status.success());
    let low = run_with_stdin(&["fit", "--k", "1"], &sim.stdout);
    assert_eq!(low.status.code(), Some(2));
    let two = run_with_stdin(&["fit", "--k", "2"], &sim.stdout);
    assert!(two.status.success(), "{}", String::from_utf8_lossy(&two.stderr));
    assert_eq!(stdout_json(&two)["scheme"]["k"], 2);
}

#[test]
fn simulate_piped_to_fit_recovers_ideal_observer() {
    let sim = run(&["simulate", "--d-gen", "1.5", "--sigma-meta", "0", "--n", "100000", "--seed", "7"]);
    assert!(sim.status.success());
    let fit = run_with_stdin(&["fit"], &sim.stdout);
    assert!(fit.status.success(), "{}", String::from_utf8_lossy(&fit.stderr));
    let m = stdout_json(&fit)["fit"]["m_ratio"].as_f64().unwrap();
    assert!((0.95..=1.05).contains(&m), "M = {m}");
}

#[test]
fn fit_with_bootstrap_reports_intervals() {
    let sim = run(&["simulate", "--d-gen", "1.2", "--n", "1500", "--seed", "5"]);
    let fit = run_with_stdin(&["fit", "--bootstrap", "--n-resamples", "100"], &sim.stdout);
    assert!(fit.status.success(), "{}", String::from_utf8_lossy(&fit.stderr));
    let v = stdout_json(&fit);
    let b = &v["bootstrap"]["m_ratio"];
    assert!(b["ci_low"].as_f64().unwrap() <= b["ci_high"].as_f64().unwrap());
    assert_eq!(b["n_resamples"], 100);
}

#[test]
fn evaluate_writes_three_artifact_families_and_report_reemits() {
    let dir = tempfile::tempdir().unwrap();
    let trials = write_small_grid(dir.path());
    let out_dir = dir.path().join("report");
    let out = run(&[
        "evaluate",
        "--trials",
        &trials,
        "--out",
        out_dir.to_str().unwrap(),
        "--n-resamples",
        "100",
        "--temperatures-h3",
        "0.5,1.0",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    assert_eq!(summary["failures"], 0);
    assert!(out_dir.join("report.json").is_file());
    assert!(out_dir.join("tables/aggregate.csv").is_file());
    assert!(out_dir.join("plots/scatter.csv").is_file());

    let again = dir.path().join("again");
    let re = run(&[
        "report",
        "--input",
        out_dir.join("report.json").to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(re.status.success(), "{}", String::from_utf8_lossy(&re.stderr));
    assert_eq!(
        fs::read(out_dir.join("report.json")).unwrap(),
        fs::read(again.join("report.json")).unwrap()
    );
    assert_eq!(
        fs::read(out_dir.join("tables/aggregate.csv")).unwrap(),
        fs::read(again.join("tables/aggregate.csv")).unwrap()
    );
}

#[test]
fn out_dir_comes_from_environment_when_flag_is_absent() {
    let dir = tempfile::tempdir().unwrap();
    let trials = write_small_grid(dir.path());
    let env_dir = dir.path().join("from_env");
    let out = bin()
        .args(["evaluate", "--trials", &trials, "--n-resamples", "50", "--no-robustness"])
        .env("METASDT_OUT_DIR", &env_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(env_dir.join("report.json").is_file());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "k = 3\n").unwrap();
    let sim = run(&["simulate", "--d-gen", "1.0", "--n", "2000", "--seed", "9"]);
    let from_file = run_with_stdin(&["--config", cfg.to_str().unwrap(), "fit"], &sim.stdout);
    assert_eq!(stdout_json(&from_file)["scheme"]["k"], 3);
    let flagged = run_with_stdin(&["--config", cfg.to_str().unwrap(), "fit", "--k", "5"], &sim.stdout);
    assert_eq!(stdout_json(&flagged)["scheme"]["k"], 5);
}

#[test]
fn robustness_runs_requested_checks() {
    let dir = tempfile::tempdir().unwrap();
    let trials = write_small_grid(dir.path());
    let out = run(&["robustness", "--trials", &trials, "--check", "r1,r6"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    let ids: Vec<&str> = v.as_array().unwrap().iter().map(|r| r["check_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["R1", "R6"]);

    let bad = run(&["robustness", "--trials", &trials, "--k-values", "2"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn ingest_grades_against_answer_key() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    fs::write(
        &raw,
        "model,dataset_id,temperature,question_id,nlp,answer_text\n\
         m,d,1.0,q1,-0.2,The Eiffel Tower\n\
         m,d,1.0,q2,-1.1,Big Ben\n\
         m,d,1.0,q3,oops,x\n",
    )
    .unwrap();
    let keys = dir.path().join("keys.json");
    fs::write(&keys, r#"{"q1": ["Eiffel Tower"], "q2": ["Tower Bridge"]}"#).unwrap();
    let canonical = dir.path().join("clean.jsonl");
    let out = run(&[
        "ingest",
        "--trials",
        raw.to_str().unwrap(),
        "--map",
        "model_id=model",
        "--answer-key",
        keys.to_str().unwrap(),
        "--out",
        canonical.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    assert_eq!(summary["n_valid"], 2);
    assert_eq!(summary["n_skipped"], 1);
    assert_eq!(summary["skipped"][0]["line"], 4);
    let lines: Vec<Value> = fs::read_to_string(&canonical)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines[0]["correct"], true);
    assert_eq!(lines[1]["correct"], false);
}

#[test]
fn simulate_requires_an_observer() {
    let out = run(&["simulate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["simulate", "--d-gen", "1.0", "--base-rate", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn recovery_reports_one_row_per_grid_point() {
    let out = run(&[
        "recovery",
        "--d-gen",
        "1.0",
        "--n",
        "1000",
        "--replicates",
        "3",
        "--n-resamples",
        "50",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = stdout_json(&out);
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["target_m_ratio"], 1.0);
    assert_eq!(rows[0]["n_replicates"], 3);
}

#[test]
fn closed_stdout_is_not_an_error() {
    use std::io::Read;
    let mut child = bin()
        .args(["simulate", "--d-gen", "1.0", "--n", "200000"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut head = [0u8; 16];
    child.stdout.take().unwrap().read_exact(&mut head).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    assert!(out.stderr.is_empty(), "{}", String::from_utf8_lossy(&out.stderr));
}
