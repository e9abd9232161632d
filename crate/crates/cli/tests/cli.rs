use std::fs;
use std::path::Path;
use std::process::Command as Process;

use ercmix::lab::{sample_mixture, ComponentLaw, ShiftedMixtureSpec};
use ercmix_cli::{parse_csv_str, run, CliError, Command, Manifest};
use nalgebra::{DMatrix, DVector};
use serde_json::Value;

fn bin() -> Process {
    Process::new(env!("CARGO_BIN_EXE_ercmix"))
}

fn write_csv(path: &Path, data: &DMatrix<f64>) {
    let mut s = String::from("x,y\n");
    for row in data.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    fs::write(path, s).unwrap();
}

fn two_blobs(n: usize) -> (DMatrix<f64>, Vec<usize>) {
    let law = ComponentLaw::Gaussian {
        mean: DVector::zeros(2),
        cov: DMatrix::identity(2, 2),
    };
    let spec = ShiftedMixtureSpec::with_gaps(
        2,
        vec![law.clone(), law],
        vec![0.5, 0.5],
        &[10.0],
        5.0,
        0.01,
    )
    .unwrap();
    let s = sample_mixture(&spec, 0, n, 7).unwrap();
    (s.data, s.labels)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn labels(v: &Value) -> Vec<usize> {
    v["assignments"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_u64().unwrap() as usize)
        .collect()
}

#[test]
fn csv_plain_rows() {
    let m = parse_csv_str("1.0,2.0\n3.0,4.0").unwrap();
    assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
}

#[test]
fn csv_header_is_skipped() {
    let m = parse_csv_str("a,b\n1,2").unwrap();
    assert_eq!(m, DMatrix::from_row_slice(1, 2, &[1.0, 2.0]));
}

#[test]
fn csv_ragged_row_is_named() {
    let err = parse_csv_str("1,2\n3").unwrap_err();
    assert!(matches!(err, CliError::Parse(_)));
    assert!(err.to_string().contains("row 2"), "{err}");
}

#[test]
fn csv_bad_cell_has_coordinates() {
    let err = parse_csv_str("1,2\n3,x\n").unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("row 2") && msg.contains("column 2"), "{msg}");
    assert!(parse_csv_str("1,nan\n").is_err());
}

#[test]
fn csv_empty_is_an_input_error() {
    assert!(matches!(parse_csv_str(""), Err(CliError::Input(_))));
    assert!(matches!(parse_csv_str("a,b\n"), Err(CliError::Input(_))));
}

#[test]
fn fit_recovers_blobs_and_classify_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (data, truth) = two_blobs(400);
    let csv = dir.path().join("blobs.csv");
    write_csv(&csv, &data);
    let fit_out = dir.path().join("fit.json");

    let status = bin()
        .args(["fit", "--K", "2", "--seed", "7", "--data"])
        .arg(&csv)
        .arg("--out")
        .arg(&fit_out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let report = json(&fit_out);
    for key in [
        "K",
        "gamma",
        "model",
        "loglik",
        "pi",
        "mu",
        "sigma",
        "assignments",
        "n_iter",
        "converged",
        "seed",
    ] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert!(report.get("nu").is_none());
    let fitted = labels(&report);
    let same = fitted
        .iter()
        .zip(&truth)
        .filter(|(f, t)| **f == **t + 1)
        .count();
    assert!(
        same == truth.len() || same == 0,
        "{same} of {} agree",
        truth.len()
    );

    let class_out = dir.path().join("classes.json");
    let status = bin()
        .args(["classify", "--data"])
        .arg(&csv)
        .arg("--theta")
        .arg(&fit_out)
        .arg("--out")
        .arg(&class_out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert_eq!(labels(&json(&class_out)), fitted);
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = two_blobs(300);
    let csv = dir.path().join("d.csv");
    write_csv(&csv, &data);
    let run_once = |name: &str| {
        let out = dir.path().join(name);
        let status = bin()
            .args([
                "fit", "--K", "2", "--model", "t", "--nu", "4", "--seed", "3", "--data",
            ])
            .arg(&csv)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        fs::read(out).unwrap()
    };
    assert_eq!(run_once("a.json"), run_once("b.json"));
}

#[test]
fn floats_use_seventeen_significant_digits() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = two_blobs(100);
    let csv = dir.path().join("d.csv");
    write_csv(&csv, &data);
    let out = bin()
        .args(["fit", "--K", "2", "--data"])
        .arg(&csv)
        .output()
        .unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    let gamma = text
        .split("\"gamma\":")
        .nth(1)
        .unwrap()
        .split(',')
        .next()
        .unwrap();
    assert_eq!(gamma, "1.0000000000000000e2");
}

#[test]
fn existence_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("tiny.csv");
    fs::write(&csv, "1,2\n3,4\n5,7\n").unwrap();
    let out = dir.path().join("check.json");
    let status = bin()
        .args(["check-existence", "--K", "3", "--data"])
        .arg(&csv)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let report = json(&out);
    assert_eq!(report["ok"], Value::Bool(false));
    let reasons = report["reasons"].as_array().unwrap();
    assert!(reasons
        .iter()
        .any(|r| r.as_str().unwrap().contains("n>K violated")));

    let status = bin()
        .args(["fit", "--K", "3", "--data"])
        .arg(&csv)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
}

#[test]
fn io_and_parse_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = bin()
        .args(["fit", "--K", "2", "--data"])
        .arg(&missing)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());

    let ragged = dir.path().join("ragged.csv");
    fs::write(&ragged, "1,2\n3\n").unwrap();
    let out = bin()
        .args(["fit", "--K", "2", "--data"])
        .arg(&ragged)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));
}

#[test]
fn manifest_keys_mirror_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.json");
    fs::write(
        &manifest,
        r#"{"command": "fit", "K": 3, "gamma": 10, "max-iter": 50, "seed": 4}"#,
    )
    .unwrap();
    let args = ercmix_cli::Args {
        k: Some(2),
        manifest: Some(manifest.clone()),
        ..clap::Parser::parse_from(["ercmix"])
    };
    let m = args.into_manifest().unwrap();
    assert_eq!(m.command, Some(Command::Fit));
    assert_eq!(m.k, Some(2));
    assert_eq!(m.gamma, Some(10.0));
    assert_eq!(m.max_iter, Some(50));

    fs::write(&manifest, r#"{"command": "fit", "clusters": 3}"#).unwrap();
    assert!(Manifest::from_file(&manifest).is_err());
}

#[test]
fn experiments_produce_tables() {
    let m = Manifest {
        command: Some(Command::ConsistencyExp),
        sizes: Some(vec![100, 400]),
        reference_size: Some(4000),
        starts: Some(2),
        seed: Some(1),
        ..Manifest::default()
    };
    let out = run(&m).unwrap();
    assert_eq!(out.code, 0);
    let v: Value = serde_json::from_str(&out.report).unwrap();
    assert_eq!(v["valid"], Value::Bool(true));
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    assert!(v["rows"][1]["distance"].is_number());

    let m = Manifest {
        command: Some(Command::SeparationExp),
        levels: Some(vec![6.0, 24.0]),
        n: Some(500),
        starts: Some(2),
        ..Manifest::default()
    };
    let out = run(&m).unwrap();
    let v: Value = serde_json::from_str(&out.report).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1]["fractions"].as_array().unwrap().len(), 2);
    assert!(rows[1]["cov_errors"].is_array());
}
