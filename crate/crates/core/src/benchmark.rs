//! Neighbourhood heating-season protocol: fixed setpoint, fixed internal
//! gains, a heating season, and annual demand and peak load per building
//! checked against participant ranges.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    runtime_report, simulate, EngineConfig, HeatingPeriod, RuntimeRow, RuntimeSample, SimInputs, ZoneGains,
};
use crate::hydronic::{compile_hifi, HydronicDefaults, HydronicParams};
use crate::series::UniformGrid;
use crate::synthetic::{add_floor_loops, row_building, typology, Constructions, Typology};
use crate::thermal::{compile_lofi, DiscretizationPolicy, PhysicsConfig};
use crate::topology::{import_table, BuildingTopology};
use crate::weather::{Site, WeatherSeries};

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("reading {path}: {msg}")]
    Input { path: PathBuf, msg: String },
    #[error("reference file: {0}")]
    Reference(String),
}

/// No reference values for a simulated building and metric.
#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("no reference values for {label} ({metric})")]
pub struct MissingReferenceError {
    pub label: String,
    pub metric: Metric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "annual_demand_kWh")]
    AnnualDemand,
    #[serde(rename = "peak_load_kW")]
    PeakLoad,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::AnnualDemand, Metric::PeakLoad];

    pub fn name(self) -> &'static str {
        match self {
            Metric::AnnualDemand => "annual_demand_kWh",
            Metric::PeakLoad => "peak_load_kW",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s.trim())
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Buildings under one set of boundary conditions.
#[derive(Clone, Debug)]
pub struct BenchmarkScenario {
    pub buildings: Vec<(String, BuildingTopology)>,
    pub weather: WeatherSeries,
    /// Overrides every zone setpoint, °C.
    pub setpoint: f64,
    pub season: HeatingPeriod,
    /// Constant gain per building, W, split over zones by floor area.
    pub internal_gains: f64,
    pub physics: PhysicsConfig,
    pub start: f64,
    pub end: f64,
}

impl BenchmarkScenario {
    /// Scenario over the whole weather record with 21 °C, no gains and the
    /// default season.
    pub fn new(buildings: Vec<(String, BuildingTopology)>, weather: WeatherSeries) -> Self {
        let (start, end) = (weather.grid.start, weather.grid.end());
        Self {
            buildings,
            weather,
            setpoint: 21.0,
            season: HeatingPeriod::default(),
            internal_gains: 0.0,
            physics: PhysicsConfig::default(),
            start,
            end,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "annual_demand_kWh")]
    pub annual_demand_kwh: f64,
    #[serde(rename = "peak_load_kW")]
    pub peak_load_kw: f64,
    pub wall_clock_s: f64,
}

impl Metrics {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::AnnualDemand => self.annual_demand_kwh,
            Metric::PeakLoad => self.peak_load_kw,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildingOutcome {
    pub label: String,
    pub zones: usize,
    #[serde(flatten)]
    pub metrics: Option<Metrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub buildings: Vec<BuildingOutcome>,
    /// Sums over successful buildings.
    pub total: Metrics,
    /// False when any building failed.
    pub complete: bool,
}

fn gains_for(topo: &BuildingTopology, total: f64, start: f64, end: f64) -> ZoneGains {
    if total == 0.0 {
        return ZoneGains::default();
    }
    let area: f64 = topo.zones.iter().map(|z| z.floor_area()).sum();
    ZoneGains {
        grid: Some(UniformGrid {
            start,
            step: (end - start).max(1.0),
            len: 2,
        }),
        series: topo
            .zones
            .iter()
            .map(|z| (z.id, vec![total * z.floor_area() / area; 2]))
            .collect(),
    }
}

fn run_one(
    topo: &BuildingTopology,
    scenario: &BenchmarkScenario,
    cfg: &EngineConfig,
) -> Result<Metrics, String> {
    let mut topo = topo.clone();
    for z in &mut topo.zones {
        z.setpoint = scenario.setpoint;
    }
    let model = compile_lofi(&topo, &DiscretizationPolicy::default(), &scenario.physics).map_err(|e| e.to_string())?;
    let inputs = SimInputs {
        gains: gains_for(&topo, scenario.internal_gains, scenario.start, scenario.end),
        loops: Default::default(),
    };
    let cfg = EngineConfig {
        heating: scenario.season,
        ..cfg.clone()
    };
    let r = simulate(&model, &scenario.weather, &inputs, scenario.start, scenario.end, &cfg).map_err(|e| e.to_string())?;
    Ok(Metrics {
        annual_demand_kwh: r.annual_demand_kwh,
        peak_load_kw: r.peak_load_w / 1000.0,
        wall_clock_s: r.wall_clock_s,
    })
}

/// Runs every building with the ideal-load model, in parallel. Results are
/// ordered by label.
pub fn run_benchmark(scenario: &BenchmarkScenario, cfg: &EngineConfig) -> BenchmarkReport {
    let mut buildings: Vec<BuildingOutcome> = scenario
        .buildings
        .par_iter()
        .map(|(label, topo)| {
            let res = run_one(topo, scenario, cfg);
            BuildingOutcome {
                label: label.clone(),
                zones: topo.zones.len(),
                metrics: res.as_ref().ok().copied(),
                error: res.err(),
            }
        })
        .collect();
    buildings.sort_by(|a, b| a.label.cmp(&b.label));
    let mut total = Metrics::default();
    for m in buildings.iter().filter_map(|b| b.metrics) {
        total.annual_demand_kwh += m.annual_demand_kwh;
        total.peak_load_kw += m.peak_load_kw;
        total.wall_clock_s += m.wall_clock_s;
    }
    let complete = buildings.iter().all(|b| b.error.is_none());
    BenchmarkReport {
        buildings,
        total,
        complete,
    }
}

/// Participant values for one building and metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub values: Vec<f64>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl Envelope {
    pub fn from_values(values: Vec<f64>) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        Some(Self { values, min, max, mean })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceEnvelope {
    pub entries: BTreeMap<(String, Metric), Envelope>,
    /// Relative half-width of the band around the mean.
    pub band: f64,
}

impl ReferenceEnvelope {
    /// Reads `label,metric,p1,...` rows. Empty participant cells are
    /// skipped.
    pub fn read<R: std::io::Read>(reader: R, band: f64) -> Result<Self, BenchmarkError> {
        let err = |e: &dyn std::fmt::Display| BenchmarkError::Reference(e.to_string());
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rd.headers().map_err(|e| err(&e))?.clone();
        if headers.get(0) != Some("label") || headers.get(1) != Some("metric") {
            return Err(BenchmarkError::Reference("header must start with label,metric".into()));
        }
        let mut entries = BTreeMap::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| err(&e))?;
            let row = i + 2;
            let label = rec.get(0).unwrap_or_default().to_string();
            let metric = Metric::parse(rec.get(1).unwrap_or_default())
                .ok_or_else(|| BenchmarkError::Reference(format!("row {row}: unknown metric {:?}", rec.get(1))))?;
            let values = rec
                .iter()
                .skip(2)
                .filter(|c| !c.is_empty())
                .map(|c| c.parse::<f64>().map_err(|e| BenchmarkError::Reference(format!("row {row}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let env = Envelope::from_values(values)
                .ok_or_else(|| BenchmarkError::Reference(format!("row {row}: no participant values")))?;
            entries.insert((label, metric), env);
        }
        Ok(Self { entries, band })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: String,
    pub metric: Metric,
    pub value: f64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub inside_range: bool,
    pub inside_band: bool,
    /// `100·(value − mean)/mean`.
    pub deviation_pct: f64,
}

pub fn verdict(label: &str, metric: Metric, value: f64, env: &Envelope, band: f64) -> Verdict {
    let rel = (value - env.mean) / env.mean;
    Verdict {
        label: label.to_string(),
        metric,
        value,
        min: env.min,
        max: env.max,
        mean: env.mean,
        inside_range: value >= env.min && value <= env.max,
        inside_band: rel.abs() <= band,
        deviation_pct: 100.0 * rel,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictCounts {
    pub total: usize,
    pub inside_range: usize,
    pub inside_band: usize,
    pub below_range: usize,
    pub above_range: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub verdicts: Vec<Verdict>,
    pub summary: BTreeMap<Metric, VerdictCounts>,
    pub missing: Vec<MissingReferenceError>,
}

pub fn compare_reference(report: &BenchmarkReport, reference: &ReferenceEnvelope) -> Comparison {
    let mut verdicts = Vec::new();
    let mut missing = Vec::new();
    let mut summary: BTreeMap<Metric, VerdictCounts> = Metric::ALL.iter().map(|&m| (m, Default::default())).collect();
    for b in &report.buildings {
        let Some(m) = b.metrics else { continue };
        for metric in Metric::ALL {
            let Some(env) = reference.entries.get(&(b.label.clone(), metric)) else {
                missing.push(MissingReferenceError {
                    label: b.label.clone(),
                    metric,
                });
                continue;
            };
            let v = verdict(&b.label, metric, m.get(metric), env, reference.band);
            let c = summary.get_mut(&metric).expect("all metrics present");
            c.total += 1;
            c.inside_range += usize::from(v.inside_range);
            c.inside_band += usize::from(v.inside_band);
            c.below_range += usize::from(v.value < v.min);
            c.above_range += usize::from(v.value > v.max);
            verdicts.push(v);
        }
    }
    Comparison {
        verdicts,
        summary,
        missing,
    }
}

pub fn report_markdown(report: &BenchmarkReport, comparison: Option<&Comparison>) -> String {
    let mut s = String::from("| building | zones | annual demand [kWh] | peak load [kW] | wall clock [s] |\n|---|---|---|---|---|\n");
    for b in &report.buildings {
        match (&b.metrics, &b.error) {
            (Some(m), _) => {
                let _ = writeln!(
                    s,
                    "| {} | {} | {:.1} | {:.2} | {:.3} |",
                    b.label, b.zones, m.annual_demand_kwh, m.peak_load_kw, m.wall_clock_s
                );
            }
            (None, e) => {
                let _ = writeln!(s, "| {} | {} | failed: {} | | |", b.label, b.zones, e.as_deref().unwrap_or("?"));
            }
        }
    }
    let t = &report.total;
    let _ = writeln!(
        s,
        "| **total**{} | | {:.1} | {:.2} | {:.3} |",
        if report.complete { "" } else { " (partial)" },
        t.annual_demand_kwh,
        t.peak_load_kw,
        t.wall_clock_s
    );
    if let Some(c) = comparison {
        s.push_str("\n| building | metric | value | min | max | mean | in range | in band | deviation |\n|---|---|---|---|---|---|---|---|---|\n");
        for v in &c.verdicts {
            let _ = writeln!(
                s,
                "| {} | {} | {:.2} | {:.2} | {:.2} | {:.2} | {} | {} | {:+.1}% |",
                v.label,
                v.metric,
                v.value,
                v.min,
                v.max,
                v.mean,
                if v.inside_range { "yes" } else { "no" },
                if v.inside_band { "yes" } else { "no" },
                v.deviation_pct
            );
        }
        s.push_str("\n| metric | total | in range | in band | below range | above range |\n|---|---|---|---|---|---|\n");
        for (m, n) in &c.summary {
            let _ = writeln!(
                s,
                "| {m} | {} | {} | {} | {} | {} |",
                n.total, n.inside_range, n.inside_band, n.below_range, n.above_range
            );
        }
        for e in &c.missing {
            let _ = writeln!(s, "\nmissing: {e}");
        }
    }
    s
}

/// One building entry of a scenario file: a parameter table or a
/// synthetic typology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildingEntry {
    pub label: String,
    pub table: Option<PathBuf>,
    pub typology: Option<Typology>,
    /// Rotation override, degrees.
    pub azi_s: Option<f64>,
}

/// On-disk scenario description; paths are relative to the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub weather: PathBuf,
    #[serde(default = "default_setpoint")]
    pub setpoint: f64,
    #[serde(default)]
    pub internal_gains: f64,
    #[serde(default)]
    pub season: HeatingPeriod,
    pub start: Option<f64>,
    pub end: Option<f64>,
    pub reference: Option<PathBuf>,
    #[serde(default = "default_band")]
    pub band: f64,
    #[serde(default)]
    pub physics: PhysicsConfig,
    #[serde(default)]
    pub site: Option<Site>,
    #[serde(rename = "building")]
    pub buildings: Vec<BuildingEntry>,
}

fn default_setpoint() -> f64 {
    21.0
}

fn default_band() -> f64 {
    0.2
}

/// Loads a scenario file and, if it names one, its reference file.
pub fn load_scenario(path: &Path) -> Result<(BenchmarkScenario, Option<ReferenceEnvelope>), BenchmarkError> {
    let input = |p: &Path, msg: &dyn std::fmt::Display| BenchmarkError::Input {
        path: p.to_path_buf(),
        msg: msg.to_string(),
    };
    let text = std::fs::read_to_string(path).map_err(|e| input(path, &e))?;
    let file: ScenarioFile = toml::from_str(&text).map_err(|e| input(path, &e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let site = file.site.unwrap_or_default();
    let wpath = base.join(&file.weather);
    let weather = WeatherSeries::read(std::fs::File::open(&wpath).map_err(|e| input(&wpath, &e))?, &site)
        .map_err(|e| input(&wpath, &e))?;
    let mut buildings = Vec::new();
    for b in &file.buildings {
        let mut topo = match (&b.table, b.typology) {
            (Some(t), None) => {
                let p = base.join(t);
                let text = std::fs::read_to_string(&p).map_err(|e| input(&p, &e))?;
                import_table(&text).map_err(|e| input(&p, &e))?
            }
            (None, Some(k)) => typology(k, &Constructions::default()),
            _ => {
                return Err(BenchmarkError::Scenario(format!(
                    "building {} needs exactly one of table or typology",
                    b.label
                )))
            }
        };
        if let Some(a) = b.azi_s {
            topo.azi_s = a;
        }
        buildings.push((b.label.clone(), topo));
    }
    let mut scenario = BenchmarkScenario::new(buildings, weather);
    scenario.setpoint = file.setpoint;
    scenario.internal_gains = file.internal_gains;
    scenario.season = file.season;
    scenario.physics = file.physics;
    scenario.start = file.start.unwrap_or(scenario.start);
    scenario.end = file.end.unwrap_or(scenario.end);
    if scenario.end <= scenario.start {
        return Err(BenchmarkError::Scenario("end must be after start".into()));
    }
    let reference = match &file.reference {
        Some(r) => {
            let p = base.join(r);
            Some(ReferenceEnvelope::read(std::fs::File::open(&p).map_err(|e| input(&p, &e))?, file.band)?)
        }
        None => None,
    };
    Ok((scenario, reference))
}

/// Times the ideal-load and hydronic models of one envelope zoned into
/// each of `zone_counts` rooms. Hydronic runs use thermostat-controlled
/// floor loops. Rows are relative to the first ideal-load run.
pub fn runtime_scaling(
    zone_counts: &[usize],
    weather: &WeatherSeries,
    lofi_days: f64,
    hifi_days: f64,
) -> Result<Vec<RuntimeRow>, String> {
    let physics = PhysicsConfig::default();
    let disc = DiscretizationPolicy::default();
    let cons = Constructions::default();
    let t0 = weather.grid.start;
    let mut samples = Vec::new();
    for &n in zone_counts {
        let topo = row_building(n, &cons);
        let model = compile_lofi(&topo, &disc, &physics).map_err(|e| e.to_string())?;
        let cfg = EngineConfig {
            heating: HeatingPeriod::Always,
            ..EngineConfig::lofi()
        };
        let r = simulate(&model, weather, &SimInputs::default(), t0, t0 + lofi_days * 86_400.0, &cfg)
            .map_err(|e| e.to_string())?;
        samples.push(RuntimeSample::from_result(format!("{n} zones"), &r));
    }
    for &n in zone_counts {
        let mut topo = row_building(n, &cons);
        add_floor_loops(&mut topo, 1);
        let params = HydronicParams::uniform(0.15, 8.0, &topo.loop_ids());
        let model = compile_hifi(&topo, &disc, &physics, &HydronicDefaults::default(), &params).map_err(|e| e.to_string())?;
        let cfg = EngineConfig {
            heating: HeatingPeriod::Always,
            ..EngineConfig::hifi()
        };
        let r = simulate(&model, weather, &SimInputs::default(), t0, t0 + hifi_days * 86_400.0, &cfg)
            .map_err(|e| e.to_string())?;
        samples.push(RuntimeSample::from_result(format!("{n} zones"), &r));
    }
    Ok(runtime_report(&samples))
}
