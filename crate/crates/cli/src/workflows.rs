//! Runs shared by the command line and the HTTP service. Both call these
//! functions, so identical inputs give identical artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{Datelike, NaiveDate, NaiveDateTime};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use hydrozone::benchmark::{compare_reference, load_scenario, report_markdown, run_benchmark, runtime_scaling};
use hydrozone::calibration::{calibrate, CalibrateOptions, CalibrationConfig, MeasurementSet};
use hydrozone::engine::{runtime_markdown, simulate, EngineConfig, Fidelity, SimInputs};
use hydrozone::hydronic::{compile_hifi, HydronicDefaults, HydronicParams};
use hydrozone::series::Table;
use hydrozone::synthetic::{calibration_scenario, random_complete_topology, row_building, typology, Constructions, Typology};
use hydrozone::thermal::{compile_lofi, DiscretizationPolicy, PhysicsConfig};
use hydrozone::topology::{export_table, parse_table, validate_topology, BuildingTopology, ValidationReport};
use hydrozone::weather::{Site, WeatherSeries};

/// Model settings shared by simulation and calibration runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Replaces the per-fidelity engine defaults.
    pub engine: Option<EngineConfig>,
    pub physics: PhysicsConfig,
    pub discretization: DiscretizationPolicy,
    pub hydronic: HydronicDefaults,
    pub site: Site,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("run config")
    }

    pub fn engine_for(&self, fidelity: Fidelity) -> EngineConfig {
        self.engine.clone().unwrap_or_else(|| EngineConfig::for_fidelity(fidelity))
    }
}

/// Parses an ISO-8601 date or date-time. Returns its year and the seconds
/// since January 1 00:00 of `base_year`, or of its own year when no base is
/// given.
pub fn parse_instant(s: &str, base_year: Option<i32>) -> Result<(i32, f64)> {
    let s = s.trim();
    let dt = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M"))
        .or_else(|_| NaiveDate::parse_from_str(s, "%Y-%m-%d").map(|d| d.and_hms_opt(0, 0, 0).expect("midnight")))
        .or_else(|_| chrono::DateTime::parse_from_rfc3339(s).map(|d| d.naive_local()))
        .with_context(|| format!("not an ISO-8601 date or date-time: {s:?}"))?;
    let year = base_year.unwrap_or(dt.year());
    let jan1 = NaiveDate::from_ymd_opt(year, 1, 1)
        .context("year out of range")?
        .and_hms_opt(0, 0, 0)
        .expect("midnight");
    Ok((dt.year(), (dt - jan1).num_seconds() as f64))
}

pub fn read_topology(path: &Path) -> Result<BuildingTopology> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_table(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn ensure_valid(topo: &BuildingTopology) -> Result<()> {
    let report = validate_topology(topo);
    if !report.is_valid() {
        bail!("topology has {} violations: {}", report.violations.len(), one_line(&report));
    }
    Ok(())
}

pub fn one_line(report: &ValidationReport) -> String {
    report.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub struct SimulateJob {
    pub topology: BuildingTopology,
    pub weather: WeatherSeries,
    /// Gains, supply temperatures and flows.
    pub inputs: Option<Table>,
    pub fidelity: Fidelity,
    pub from: f64,
    pub to: f64,
    pub year: i32,
    pub config: RunConfig,
}

pub const RESULT_CSV: &str = "result.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";
pub const BEFORE_CSV: &str = "before.csv";
pub const AFTER_CSV: &str = "after.csv";

/// Writes `result.csv` and `summary.json` to `out`.
pub fn simulate_to_dir(job: &SimulateJob, out: &Path) -> Result<serde_json::Value> {
    ensure_valid(&job.topology)?;
    fs::create_dir_all(out)?;
    let cfg = EngineConfig {
        year: job.year,
        ..job.config.engine_for(job.fidelity)
    };
    let loops = job.topology.loop_ids();
    let inputs = match &job.inputs {
        Some(t) => SimInputs::from_table(t, &loops)?,
        None => SimInputs::default(),
    };
    let disc = &job.config.discretization;
    let physics = &job.config.physics;
    let result = match job.fidelity {
        Fidelity::LoFi => {
            let model = compile_lofi(&job.topology, disc, physics)?;
            simulate(&model, &job.weather, &inputs, job.from, job.to, &cfg)?
        }
        Fidelity::HiFi => {
            let h = &job.config.hydronic;
            let params = HydronicParams::uniform(h.dis_pip, h.h_int, &loops);
            let model = compile_hifi(&job.topology, disc, physics, h, &params)?;
            simulate(&model, &job.weather, &inputs, job.from, job.to, &cfg)?
        }
    };
    result.write_csv(fs::File::create(out.join(RESULT_CSV))?)?;
    let summary = json!({
        "fidelity": result.fidelity,
        "from_s": job.from,
        "to_s": job.to,
        "year": job.year,
        "zones": result.zones,
        "loops": result.loops,
        "summary": result.summary(),
        "energy_relative_residual": result.ledger.relative_residual(),
    });
    write_json(&out.join(SUMMARY_JSON), &summary)?;
    Ok(summary)
}

pub struct CalibrateJob {
    pub topology: BuildingTopology,
    pub meas: MeasurementSet,
    pub config: CalibrationConfig,
    pub run: RunConfig,
    pub resume: bool,
}

/// Writes `history.jsonl`, `checkpoint.json`, `report.json`, `before.csv`
/// and `after.csv` to `out`.
pub fn calibrate_to_dir(job: &CalibrateJob, out: &Path) -> Result<serde_json::Value> {
    ensure_valid(&job.topology)?;
    fs::create_dir_all(out)?;
    let run = &job.run;
    let build = |p: &HydronicParams| compile_hifi(&job.topology, &run.discretization, &run.physics, &run.hydronic, p);
    let probe = build(&HydronicParams::uniform(job.config.initial_dis_pip, job.config.initial_h_int, &job.topology.loop_ids()))?;
    let loops: Vec<_> = probe.loops.iter().map(|l| (l.id, l.zone)).collect();
    let opts = CalibrateOptions {
        out_dir: Some(out.to_path_buf()),
        resume: job.resume,
        initial: None,
    };
    let outcome = calibrate(&build, &loops, &job.meas, &job.config, &opts)?;
    outcome.before.write_csv(fs::File::create(out.join(BEFORE_CSV))?)?;
    outcome.after.write_csv(fs::File::create(out.join(AFTER_CSV))?)?;
    let report = outcome.report();
    write_json(&out.join(REPORT_JSON), &report)?;
    Ok(report)
}

/// Runs a scenario file; writes `report.json` and `report.md`.
pub fn bench_to_dir(scenario: &Path, fidelity_cfg: Option<EngineConfig>, out: &Path) -> Result<serde_json::Value> {
    let (scenario, reference) = load_scenario(scenario)?;
    fs::create_dir_all(out)?;
    let report = run_benchmark(&scenario, &fidelity_cfg.unwrap_or_else(EngineConfig::lofi));
    let comparison = reference.as_ref().map(|r| compare_reference(&report, r));
    let value = json!({ "kind": "benchmark", "report": report, "comparison": comparison });
    write_json(&out.join(REPORT_JSON), &value)?;
    fs::write(out.join(REPORT_MD), report_markdown(&report, comparison.as_ref()))?;
    Ok(value)
}

/// Times one envelope at several zonings; writes `runtime.json` and
/// `runtime.md`.
pub fn scaling_to_dir(zones: &[usize], days: f64, hifi_days: f64, out: &Path) -> Result<String> {
    fs::create_dir_all(out)?;
    let weather = WeatherSeries::constant(0.0, days.max(hifi_days) * 86_400.0 + 3600.0, 0.0, 3.0);
    let rows = runtime_scaling(zones, &weather, days, hifi_days).map_err(anyhow::Error::msg)?;
    write_json(&out.join("runtime.json"), &rows)?;
    let md = runtime_markdown(&rows);
    fs::write(out.join("runtime.md"), &md)?;
    Ok(md)
}

/// Compiled-model figures for a topology.
pub fn model_summary(topo: &BuildingTopology, run: &RunConfig) -> Result<serde_json::Value> {
    ensure_valid(topo)?;
    let lofi = compile_lofi(topo, &run.discretization, &run.physics)?;
    let capacity: f64 = lofi.nodes.iter().map(|n| n.capacity).sum();
    let mut v = json!({
        "zones": topo.zones.len(),
        "faces": topo.faces.len(),
        "loops": topo.loop_ids(),
        "lofi": {
            "nodes": lofi.n_nodes(),
            "branches": lofi.branches.len(),
            "capacity_J_per_K": capacity,
            "ua_W_per_K": lofi.total_ua(0.0),
        },
    });
    if !topo.loop_ids().is_empty() {
        let h = &run.hydronic;
        let hifi = compile_hifi(topo, &run.discretization, &run.physics, h, &HydronicParams::uniform(h.dis_pip, h.h_int, &topo.loop_ids()))?;
        v["hifi"] = json!({
            "nodes": hifi.base.n_nodes(),
            "branches": hifi.base.branches.len(),
            "emitters": hifi.loops.iter().map(|l| l.emitters.len()).sum::<usize>(),
        });
    }
    Ok(v)
}

/// Synthetic inputs for `generate --synthetic`.
#[derive(Clone, Debug, PartialEq)]
pub enum Synthetic {
    Random,
    Row(usize),
    Typology(Typology),
    /// A 3-zone hydronic case with `table.csv`, `meas.csv`, `weather.csv`
    /// and `calibration.toml`, simulated from `truth.json`.
    Calibration { days: usize },
}

impl std::str::FromStr for Synthetic {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "random" => Ok(Synthetic::Random),
            "row" => arg.parse().map(Synthetic::Row).map_err(|_| format!("row needs a zone count, got {arg:?}")),
            "typology" => Typology::from_letter(arg)
                .map(Synthetic::Typology)
                .ok_or_else(|| format!("unknown typology {arg:?}; use D, S, T, A or O")),
            "calibration" => Ok(Synthetic::Calibration {
                days: if arg.is_empty() { 3 } else { arg.parse().map_err(|_| format!("bad day count {arg:?}"))? },
            }),
            _ => Err(format!("unknown synthetic kind {kind:?}; use random, row:N, typology:X or calibration[:days]")),
        }
    }
}

/// Writes the synthetic files to `out` and returns the table path.
pub fn write_synthetic(kind: &Synthetic, seed: u64, out: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out)?;
    let cons = Constructions::default();
    let topo = match kind {
        Synthetic::Random => random_complete_topology(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed)),
        Synthetic::Row(n) => row_building(*n, &cons),
        Synthetic::Typology(t) => typology(*t, &cons),
        Synthetic::Calibration { days } => {
            let sc = calibration_scenario(3, *days);
            let truth = HydronicParams {
                dis_pip: sc.truth.dis_pip,
                h_int: sc.truth.h_int.clone(),
            };
            let meas = sc.measurements(&truth)?;
            meas.write_csv(fs::File::create(out.join("meas.csv"))?)?;
            sc.weather.write(fs::File::create(out.join("weather.csv"))?)?;
            write_json(&out.join("truth.json"), &truth)?;
            let start_h = truth.h_int.values().sum::<f64>() / truth.h_int.len() as f64 * 2.0;
            fs::write(
                out.join("calibration.toml"),
                format!(
                    "gamma_zone = 2.5\ngamma_ret = 0.25\ninitial_dis_pip = {}\ninitial_h_int = {start_h}\n",
                    1.5 * truth.dis_pip
                ),
            )?;
            sc.topology
        }
    };
    let path = out.join("table.csv");
    fs::write(&path, export_table(&topo)?)?;
    Ok(path)
}
