use hydrozone::benchmark::{
    compare_reference, load_scenario, run_benchmark, runtime_scaling, BenchmarkScenario, Metric, ReferenceEnvelope,
};
use hydrozone::engine::{EngineConfig, HeatingPeriod};
use hydrozone::synthetic::analytic_box;
use hydrozone::thermal::PhysicsConfig;
use hydrozone::topology::export_table;
use hydrozone::weather::WeatherSeries;

const YEAR: f64 = 365.0 * 86_400.0;

fn still_air() -> PhysicsConfig {
    PhysicsConfig {
        ach: 0.0,
        ..PhysicsConfig::default()
    }
}

fn box_scenario(n: usize, season: HeatingPeriod) -> BenchmarkScenario {
    let physics = still_air();
    let buildings = (0..n).map(|i| (format!("B{i}"), analytic_box(100.0, 21.0, &physics))).collect();
    let mut s = BenchmarkScenario::new(buildings, WeatherSeries::constant(0.0, YEAR, 1.0, 0.0));
    s.physics = physics;
    s.season = season;
    s
}

#[test]
fn constant_load_integrates_over_season() {
    let r = run_benchmark(&box_scenario(1, HeatingPeriod::default()), &EngineConfig::lofi());
    assert!(r.complete);
    // Jan 1 to May 19 and Oct 10 to Dec 31.
    let days = (31 + 28 + 31 + 30 + 19) + (22 + 30 + 31);
    let expect = 2.0 * 24.0 * days as f64;
    let got = r.buildings[0].metrics.unwrap().annual_demand_kwh;
    assert!((got / expect - 1.0).abs() < 1e-3, "{got} vs {expect}");
}

#[test]
fn empty_season_and_additivity() {
    let r = run_benchmark(&box_scenario(1, HeatingPeriod::Never), &EngineConfig::lofi());
    let m = r.buildings[0].metrics.unwrap();
    assert_eq!((m.annual_demand_kwh, m.peak_load_kw), (0.0, 0.0));

    let mut one = box_scenario(1, HeatingPeriod::default());
    one.end = 30.0 * 86_400.0;
    let mut two = box_scenario(2, HeatingPeriod::default());
    two.end = one.end;
    let a = run_benchmark(&one, &EngineConfig::lofi());
    let b = run_benchmark(&two, &EngineConfig::lofi());
    assert_eq!(b.total.annual_demand_kwh, 2.0 * a.total.annual_demand_kwh);
    assert_eq!(b.buildings[0].metrics.unwrap().annual_demand_kwh, b.buildings[1].metrics.unwrap().annual_demand_kwh);
}

#[test]
fn failures_are_isolated() {
    let mut s = box_scenario(2, HeatingPeriod::Always);
    s.end = 2.0 * 86_400.0;
    s.buildings[1].1.faces.clear();
    let r = run_benchmark(&s, &EngineConfig::lofi());
    assert!(!r.complete);
    assert!(r.buildings[1].error.is_some());
    assert_eq!(r.total.annual_demand_kwh, r.buildings[0].metrics.unwrap().annual_demand_kwh);
}

#[test]
fn comparison_counts_and_missing() {
    let mut s = box_scenario(2, HeatingPeriod::Always);
    s.end = 2.0 * 86_400.0;
    let r = run_benchmark(&s, &EngineConfig::lofi());
    let v = r.buildings[0].metrics.unwrap().annual_demand_kwh;
    let text = format!("label,metric,p1,p2,p3\nB0,annual_demand_kWh,{},{},{}\nB0,peak_load_kW,10,11,12\n", v * 1.1, v * 1.3, v * 1.5);
    let reference = ReferenceEnvelope::read(text.as_bytes(), 0.2).unwrap();
    let c = compare_reference(&r, &reference);
    let d = &c.summary[&Metric::AnnualDemand];
    assert_eq!((d.total, d.inside_range, d.below_range), (1, 0, 1));
    assert_eq!(c.summary[&Metric::PeakLoad].below_range, 1);
    assert_eq!(c.missing.len(), 2);
    assert!(c.missing.iter().all(|m| m.label == "B1"));
}

#[test]
fn scenario_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let physics = still_air();
    std::fs::write(dir.path().join("box.csv"), export_table(&analytic_box(100.0, 21.0, &physics)).unwrap()).unwrap();
    let w = WeatherSeries::constant(0.0, 3.0 * 86_400.0, 1.0, 0.0);
    w.write(std::fs::File::create(dir.path().join("w.csv")).unwrap()).unwrap();
    std::fs::write(dir.path().join("ref.csv"), "label,metric,p1,p2\nbox,annual_demand_kWh,90,100\nbox,peak_load_kW,1.9,2.1\nterrace,annual_demand_kWh,1,2\nterrace,peak_load_kW,1,2\n").unwrap();
    std::fs::write(
        dir.path().join("s.toml"),
        "weather = \"w.csv\"\nreference = \"ref.csv\"\nend = 172800\nseason = \"always\"\n[physics]\nach = 0.0\n[[building]]\nlabel = \"box\"\ntable = \"box.csv\"\n[[building]]\nlabel = \"terrace\"\ntypology = \"T\"\nazi_s = 90\n",
    )
    .unwrap();
    let (s, reference) = load_scenario(&dir.path().join("s.toml")).unwrap();
    assert_eq!(s.buildings.len(), 2);
    assert_eq!(s.buildings[1].1.azi_s, 90.0);
    let r = run_benchmark(&s, &EngineConfig::lofi());
    assert!(r.complete, "{r:?}");
    let c = compare_reference(&r, &reference.unwrap());
    assert!(c.missing.is_empty());
    let peak = c.verdicts.iter().find(|v| v.label == "box" && v.metric == Metric::PeakLoad).unwrap();
    assert!(peak.inside_range, "{peak:?}");
    let json = serde_json::to_value(&r).unwrap();
    assert!(json["buildings"][0]["annual_demand_kWh"].is_number());
}

#[test]
fn runtime_table_has_both_fidelities() {
    let w = WeatherSeries::constant(0.0, 86_400.0, 0.0, 2.0);
    let rows = runtime_scaling(&[1, 2], &w, 1.0, 0.05).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0].ratio, 1.0);
}
