use std::fs;
use std::process::Command;

use femeig_cli::{main_with, parse_config, run_config, write_report, EXIT_ERROR, EXIT_FAIL, EXIT_PASS};

const SQUARE_P1: &str = r#"{"domain":"unit_square","problem":"dirichlet","method":"conforming","degree":1,"levels":"2..4","n_eigs":1}"#;

#[test]
fn run_writes_reports_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("square.json");
    fs::write(&config_path, SQUARE_P1).unwrap();
    let out = dir.path().join("out");
    let code = main_with(["femeig", "run", "--config", config_path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_PASS);
    let hash_dir = fs::read_dir(&out).unwrap().next().unwrap().unwrap().path();
    let csv = fs::read_to_string(hash_dir.join("report.csv")).unwrap();
    assert!(csv.starts_with("level,h,eig_index,lambda_h,lambda_ref,eig_error,efun_error,fitted_rate,guaranteed_rate,verdict"));
    assert_eq!(csv.lines().count(), 4);
    assert!(hash_dir.join("report.json").exists());
}

#[test]
fn wrong_guaranteed_rate_gives_failing_exit() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = parse_config(SQUARE_P1).unwrap();
    assert_eq!(run_config(&config, dir.path()).unwrap(), EXIT_PASS);
    config.guaranteed_rate_override = Some(3.0);
    assert_eq!(run_config(&config, dir.path()).unwrap(), EXIT_FAIL);
}

#[test]
fn oversized_levels_are_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("square.json");
    fs::write(&config_path, SQUARE_P1).unwrap();
    let code = main_with(["femeig", "run", "--config", config_path.to_str().unwrap(), "--levels", "9..12"]);
    assert_eq!(code, EXIT_ERROR);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let config = parse_config(SQUARE_P1).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = write_report(&femeig::harness::run_study(&config).unwrap(), a.path()).unwrap();
    let second = write_report(&femeig::harness::run_study(&config).unwrap(), b.path()).unwrap();
    assert_eq!(first.file_name(), second.file_name());
    for file in ["report.csv", "report.json"] {
        assert_eq!(fs::read(first.join(file)).unwrap(), fs::read(second.join(file)).unwrap());
    }
}

#[test]
fn binary_mesh_dump_and_bad_config() {
    let exe = env!("CARGO_BIN_EXE_femeig");
    let out = Command::new(exe).args(["mesh-dump", "--domain", "l_shape", "--level", "1"]).output().unwrap();
    assert!(out.status.success());
    assert!(!out.stdout.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"domain":"unit_square","problem":"dirichlet","method":"morley"}"#).unwrap();
    let out = Command::new(exe).args(["run", "--config", path.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_ERROR));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["status"], "error");
    assert!(err["error"].as_str().unwrap().contains("incompatible"));
}
