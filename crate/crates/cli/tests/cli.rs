// Copyright (c) The dagbft Authors
// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dagbft(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dagbft"))
        .args(args)
        .env("DAGBFT_OUT_DIR", out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn happy_path_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o =
        dagbft(&["run", "--protocol", "shoalpp", "--n", "4", "--seed", "7", "--rounds", "20"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("latency.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("run_id,protocol,seed,txn_id,dag_id,submit_t"));
    assert!(lines.next().unwrap().starts_with("c0-s7,shoalpp,7,"));
    assert!(dir.path().join("summary.csv").exists());
    assert!(dir.path().join("scenario-c0.toml").exists());
    let table = stdout(&o);
    for col in ["queuing", "anchoring", "anchor_commit", "total", "pass"] {
        assert!(table.contains(col), "{col} missing from\n{table}");
    }
}

#[test]
fn too_many_crashes_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dagbft(&["run", "--crash", "2", "--crash", "3"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("exceed f"));
    let o = dagbft(&["run", "--sweep", "bogus=1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn scenario_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.toml");
    fs::write(&file, "protocol = \"shoal\"\nrounds = 15\ncrashes = [{ replica = 3, at = 0.0 }]\n").unwrap();
    let o = dagbft(&["run", "--scenario", file.to_str().unwrap(), "--protocol", "bullshark"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let echo = fs::read_to_string(dir.path().join("scenario-c0.toml")).unwrap();
    assert!(echo.contains("protocol = \"bullshark\""));
    assert!(echo.contains("rounds = 15"));
}

#[test]
fn identical_invocations_give_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args =
        ["run", "--protocol", "shoal", "--seeds", "1..3", "--rounds", "15", "--delay", "uniform:0.5:2"];
    assert_eq!(dagbft(&args, a.path()).status.code(), Some(0));
    assert_eq!(dagbft(&args, b.path()).status.code(), Some(0));
    for f in ["latency.csv", "summary.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn protocol_sweep_orders_totals() {
    let dir = tempfile::tempdir().unwrap();
    let o = dagbft(&["run", "--sweep", "protocol=bullshark,shoal,shoalpp", "--seeds", "0..4"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let mut reader = csv::Reader::from_reader(summary.as_bytes());
    let totals: Vec<f64> = reader.records().map(|r| r.unwrap()[8].parse().unwrap()).collect();
    assert_eq!(totals.len(), 3);
    assert!((totals[0] - 12.0).abs() <= 1.0, "{totals:?}");
    assert!((totals[1] - 10.5).abs() <= 1.0, "{totals:?}");
    assert!((totals[2] - 4.5).abs() <= 0.5, "{totals:?}");
}

#[test]
fn lowered_fast_threshold_is_caught() {
    let dir = tempfile::tempdir().unwrap();
    let sound = dagbft(&["fast-skip"], dir.path());
    assert_eq!(sound.status.code(), Some(0));
    assert!(stdout(&sound).contains("violations 0"));
    let mutated = dagbft(&["fast-skip", "--threshold", "2"], dir.path());
    assert_eq!(mutated.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&mutated.stderr).contains("counterexample"));
}

#[test]
fn small_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = dagbft(&["suite", "--runs", "20"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("0 with oracle violations"));
}
