use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hydrozone::synthetic::{row_building, Constructions};
use hydrozone::topology::export_table;
use hydrozone::weather::WeatherSeries;

fn hydrozone(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hydrozone")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_inputs(dir: &Path) {
    fs::write(dir.join("t.csv"), export_table(&row_building(2, &Constructions::default())).unwrap()).unwrap();
    let w = WeatherSeries::constant(0.0, 3.0 * 86_400.0, 2.0, 3.0);
    w.write(fs::File::create(dir.join("w.csv")).unwrap()).unwrap();
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    let ok = hydrozone(&["validate", "--table", s(&dir.path().join("t.csv"))]);
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&ok.stdout).trim(), "OK 0 violations");

    let text = fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let (head, last) = text.trim_end().rsplit_once('\n').unwrap();
    let last = last.replacen("102,", "777,", 1);
    fs::write(dir.path().join("bad.csv"), format!("{head}\n{last}\n")).unwrap();
    let bad = hydrozone(&["validate", "--table", s(&dir.path().join("bad.csv"))]);
    assert_eq!(bad.status.code(), Some(1));
    let err = String::from_utf8_lossy(&bad.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "));

    assert_eq!(hydrozone(&["validate"]).status.code(), Some(2));
    assert_eq!(hydrozone(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn simulate_writes_series_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    let out = dir.path().join("out");
    let run = hydrozone(&[
        "simulate",
        "--table",
        s(&dir.path().join("t.csv")),
        "--weather",
        s(&dir.path().join("w.csv")),
        "--fidelity",
        "lofi",
        "--from",
        "2021-01-01T00:00:00",
        "--to",
        "2021-01-02T00:00:00",
        "--out",
        s(&out),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let csv = fs::read_to_string(out.join("result.csv")).unwrap();
    assert!(csv.lines().count() > 24);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["energy_relative_residual"].as_f64().unwrap().abs() < 5e-3);
}

#[test]
fn generate_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let run = hydrozone(&["generate", "--synthetic", "random", "--seed", "7", "--out", s(out)]);
        assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    }
    assert_eq!(fs::read(a.join("table.csv")).unwrap(), fs::read(b.join("table.csv")).unwrap());
    assert!(a.join("model.json").exists());
}

#[test]
fn calibrate_writes_history_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let gen = hydrozone(&["generate", "--synthetic", "calibration:1", "--out", s(&data)]);
    assert_eq!(gen.status.code(), Some(0), "{}", String::from_utf8_lossy(&gen.stderr));
    let mut cfg = fs::read_to_string(data.join("calibration.toml")).unwrap();
    cfg += "max_iters = 2\n";
    fs::write(data.join("short.toml"), cfg).unwrap();
    let out = dir.path().join("out");
    let run = hydrozone(&[
        "calibrate",
        "--table",
        s(&data.join("table.csv")),
        "--meas",
        s(&data.join("meas.csv")),
        "--config",
        s(&data.join("short.toml")),
        "--out",
        s(&out),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let history = fs::read_to_string(out.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 3);
    for f in ["checkpoint.json", "report.json", "before.csv", "after.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report = hydrozone(&["report", "--out", s(&out)]);
    assert_eq!(report.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&report.stdout).contains("J_final"));
}

#[test]
fn bench_scenario_report() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    fs::write(
        dir.path().join("s.toml"),
        "weather = \"w.csv\"\nend = 172800\nseason = \"always\"\n[[building]]\nlabel = \"row\"\ntable = \"t.csv\"\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let run = hydrozone(&["bench", "--config", s(&dir.path().join("s.toml")), "--out", s(&out)]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let md = fs::read_to_string(out.join("report.md")).unwrap();
    assert!(md.contains("row"));
    let rerender = hydrozone(&["report", "--out", s(&out)]);
    assert_eq!(String::from_utf8_lossy(&rerender.stdout), md);
}
