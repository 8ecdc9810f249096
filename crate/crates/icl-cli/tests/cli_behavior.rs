//! Black-box behavior tests for the `icl-lab` binary: config-file
//! handling, flag precedence, exit codes, output-directory resolution,
//! and the metadata sidecar.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_icl-lab"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary launches")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process not killed by signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn config_file_supplies_params_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{
            "schema_version": 1,
            "command": "rank-bound",
            "params": { "d": 4, "dh": [4], "batches": 4, "reps": 1, "seed": 6, "out": "from_config.csv" }
        }"#,
    )
    .unwrap();

    let out = run_in(
        dir.path(),
        &["rank-bound", "--config", "cfg.json", "--out", "override.csv"],
    );
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    assert!(dir.path().join("override.csv").exists(), "flag override ignored");
    assert!(
        !dir.path().join("from_config.csv").exists(),
        "config out should have been overridden"
    );

    let csv = std::fs::read_to_string(dir.path().join("override.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "dh,mean_bound");
    assert_eq!(lines.len(), 2, "one grid point from the config file");
    assert!(lines[1].starts_with("4,"), "d_h = 4 came from the config file");

    let sidecar: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("override.csv.meta.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(sidecar["artifact_version"], 1);
    assert_eq!(sidecar["command"], "rank-bound");
    assert_eq!(sidecar["row_count"], 1);
    assert_eq!(sidecar["effective_config"]["d"], 4);
    assert_eq!(sidecar["effective_config"]["out"], "override.csv");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{ "schema_version": 1, "command": "rank-bound", "params": { "d": 4, "bogus": 1 } }"#,
    )
    .unwrap();
    let out = run_in(dir.path(), &["rank-bound", "--config", "cfg.json"]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("bogus"), "stderr: {}", stderr(&out));
}

#[test]
fn unknown_top_level_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{ "schema_version": 1, "command": "rank-bound", "params": {}, "extra": true }"#,
    )
    .unwrap();
    let out = run_in(dir.path(), &["rank-bound", "--config", "cfg.json"]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn wrong_schema_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{ "schema_version": 2, "command": "rank-bound", "params": {} }"#)
        .unwrap();
    let out = run_in(dir.path(), &["rank-bound", "--config", "cfg.json"]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("schema"), "stderr: {}", stderr(&out));
}

#[test]
fn config_for_a_different_command_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{ "schema_version": 1, "command": "approx", "params": {} }"#).unwrap();
    let out = run_in(dir.path(), &["rank-bound", "--config", "cfg.json"]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn missing_config_file_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["rank-bound", "--config", "no_such.json"]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn invalid_parameter_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    // Zero demonstrations: rejected by validation before any numerics run.
    let out = run_in(dir.path(), &["equivalence", "--n", "0", "--dr", "8"]);
    assert_eq!(exit_code(&out), 1, "stderr: {}", stderr(&out));
    // Invalid step count for the inspector.
    let out = run_in(dir.path(), &["dual-inspect", "--n", "6", "--steps", "3"]);
    assert_eq!(exit_code(&out), 1);
    // Zero threads.
    let out = run_in(dir.path(), &["rank-bound", "--threads", "0"]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn numerical_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "train", "--lr", "1e18", "--n-tokens", "6", "--steps-per-epoch", "2", "--epochs",
            "2", "--dr", "8", "--out", "diverged.csv",
        ],
    );
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr(&out));
    assert!(!dir.path().join("diverged.csv").exists(), "no artifact on failure");
}

#[test]
fn unknown_subcommand_and_bad_flag_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["frobnicate"]);
    assert_eq!(exit_code(&out), 1);
    let out = run_in(dir.path(), &["rank-bound", "--no-such-flag"]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn help_and_version_exit_with_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["--help"]);
    assert_eq!(exit_code(&out), 0);
    let out = run_in(dir.path(), &["--version"]);
    assert_eq!(exit_code(&out), 0);
    let out = run_in(dir.path(), &["equivalence", "--help"]);
    assert_eq!(exit_code(&out), 0);
}

#[test]
fn relative_outputs_resolve_under_the_output_dir_env_var() {
    let work = tempfile::tempdir().unwrap();
    let sink = tempfile::tempdir().unwrap();
    let out = bin()
        .current_dir(work.path())
        .env("ICL_LAB_OUT_DIR", sink.path())
        .args(["rank-bound", "--d", "4", "--dh", "4", "--batches", "4", "--reps", "1"])
        .args(["--out", "nested/rb.csv"])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    assert!(sink.path().join("nested/rb.csv").exists());
    assert!(sink.path().join("nested/rb.csv.meta.json").exists());
    assert!(!work.path().join("nested").exists(), "cwd must stay clean");
}

#[test]
fn absolute_out_path_ignores_the_env_var() {
    let work = tempfile::tempdir().unwrap();
    let sink = tempfile::tempdir().unwrap();
    let target = work.path().join("abs.csv");
    let out = bin()
        .env("ICL_LAB_OUT_DIR", sink.path())
        .args(["rank-bound", "--d", "4", "--dh", "4", "--batches", "4", "--reps", "1"])
        .args(["--out", target.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    assert!(target.exists());
}

#[test]
fn sidecar_row_count_matches_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["equivalence", "--dt", "4", "--n", "5", "--dr", "8", "--seeds", "2", "--out", "eq.csv"],
    );
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("eq.csv")).unwrap();
    let data_rows = csv.lines().count() - 1;
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("eq.csv.meta.json")).unwrap())
            .unwrap();
    assert_eq!(sidecar["row_count"], data_rows as u64);
    assert!(csv.ends_with('\n') && !csv.contains('\r'), "LF line endings");
    assert_eq!(sidecar["effective_config"]["seeds"], 2);
}
