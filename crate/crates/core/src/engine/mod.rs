//! Time integration against weather and loop inputs, result series and
//! runtime reporting.

mod simulator;

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hydronic::{HiFiModel, LoopInputs};
use crate::series::{interp, SeriesError, Table, UniformGrid};
use crate::sparse::SymbolicLu;
use crate::thermal::{Terminal, ThermalModel};
use crate::topology::{LoopId, ZoneId};
use crate::weather::WeatherSeries;

pub use simulator::Simulator;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{what} does not cover t = {t} s")]
    InputGap { what: String, t: f64 },
    #[error("diverged at t = {t} s: node {node} reached {value} °C")]
    Divergence { t: f64, node: usize, value: f64 },
    #[error("singular system at node {index} (pivot {value})")]
    Singular { index: usize, value: f64 },
    #[error("loop {0} has no flow or supply input")]
    MissingInput(LoopId),
    #[error("invalid horizon: {0}")]
    Horizon(String),
}

/// Either fidelity, borrowed.
#[derive(Clone, Copy, Debug)]
pub enum ModelRef<'a> {
    LoFi(&'a ThermalModel),
    HiFi(&'a HiFiModel),
}

impl<'a> ModelRef<'a> {
    pub fn base(&self) -> &'a ThermalModel {
        match *self {
            ModelRef::LoFi(m) => m,
            ModelRef::HiFi(h) => &h.base,
        }
    }

    pub fn fidelity(&self) -> Fidelity {
        match self {
            ModelRef::LoFi(_) => Fidelity::LoFi,
            ModelRef::HiFi(_) => Fidelity::HiFi,
        }
    }
}

impl<'a> From<&'a ThermalModel> for ModelRef<'a> {
    fn from(m: &'a ThermalModel) -> Self {
        ModelRef::LoFi(m)
    }
}

impl<'a> From<&'a HiFiModel> for ModelRef<'a> {
    fn from(m: &'a HiFiModel) -> Self {
        ModelRef::HiFi(m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    LoFi,
    HiFi,
}

/// When the heater may run. Dates are `[month, day]`, both inclusive, and
/// may wrap over New Year.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatingPeriod {
    Always,
    Never,
    Season { start: [u32; 2], end: [u32; 2] },
}

impl Default for HeatingPeriod {
    fn default() -> Self {
        HeatingPeriod::Season {
            start: [10, 10],
            end: [5, 19],
        }
    }
}

impl HeatingPeriod {
    /// Whether `t` seconds after January 1 00:00 of `year` falls in the
    /// period.
    pub fn contains(&self, t: f64, year: i32) -> bool {
        match *self {
            HeatingPeriod::Always => true,
            HeatingPeriod::Never => false,
            HeatingPeriod::Season { start, end } => {
                let d = date_at(t, year);
                let md = (d.month(), d.day());
                let s = (start[0], start[1]);
                let e = (end[0], end[1]);
                if s <= e {
                    md >= s && md <= e
                } else {
                    md >= s || md <= e
                }
            }
        }
    }
}

/// Calendar date `t` seconds after January 1 of `year`.
pub fn date_at(t: f64, year: i32) -> NaiveDate {
    let jan1 = NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year");
    jan1 + Duration::days((t / 86_400.0).floor() as i64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Output grid step, s.
    pub out_step: f64,
    /// Integration step, s.
    pub inner_step: f64,
    /// Calendar year of `time_s = 0`.
    pub year: i32,
    pub heating: HeatingPeriod,
    pub divergence_limit: f64,
    /// Uniform initial temperature; defaults to the mean setpoint.
    pub initial_temperature: Option<f64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self::lofi()
    }
}

impl EngineConfig {
    pub fn lofi() -> Self {
        Self {
            out_step: 3600.0,
            inner_step: 300.0,
            year: 2021,
            heating: HeatingPeriod::default(),
            divergence_limit: 200.0,
            initial_temperature: None,
        }
    }

    pub fn hifi() -> Self {
        Self {
            out_step: 30.0,
            inner_step: 5.0,
            ..Self::lofi()
        }
    }

    pub fn for_fidelity(f: Fidelity) -> Self {
        match f {
            Fidelity::LoFi => Self::lofi(),
            Fidelity::HiFi => Self::hifi(),
        }
    }
}

/// Internal gains per zone, W, on their own grid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ZoneGains {
    pub grid: Option<UniformGrid>,
    pub series: BTreeMap<ZoneId, Vec<f64>>,
}

impl ZoneGains {
    /// Reads `Qint_<zone>_W` columns.
    pub fn from_table(table: &Table) -> Self {
        let mut series = BTreeMap::new();
        for (name, col) in &table.columns {
            if let Some(id) = name.strip_prefix("Qint_").and_then(|s| s.strip_suffix("_W")) {
                if let Ok(id) = id.parse() {
                    series.insert(id, col.clone());
                }
            }
        }
        Self {
            grid: Some(table.grid),
            series,
        }
    }
}

/// Non-weather inputs of a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimInputs {
    pub gains: ZoneGains,
    pub loops: LoopInputs,
}

impl SimInputs {
    pub fn from_table(table: &Table, loops: &[LoopId]) -> Result<Self, SeriesError> {
        Ok(Self {
            gains: ZoneGains::from_table(table),
            loops: LoopInputs::from_table(table, loops)?,
        })
    }

    pub fn internal_gain(&self, zone: ZoneId, t: f64) -> f64 {
        match (&self.gains.grid, self.gains.series.get(&zone)) {
            (Some(g), Some(s)) => interp(g, s, t),
            _ => 0.0,
        }
    }
}

/// Accumulated energy terms, J. Inflows are positive.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    /// Through ambient and ground branches.
    pub boundary: f64,
    /// Solar and internal gains.
    pub gains: f64,
    /// Ideal heater.
    pub heater: f64,
    /// Supply minus return advection.
    pub hydronic: f64,
    /// Change of Σ C·T.
    pub stored: f64,
    /// Σ of absolute exchanged energy.
    pub gross: f64,
}

impl EnergyLedger {
    pub fn residual(&self) -> f64 {
        self.stored - (self.boundary + self.gains + self.heater + self.hydronic)
    }

    pub fn relative_residual(&self) -> f64 {
        if self.gross == 0.0 {
            0.0
        } else {
            self.residual().abs() / self.gross
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub fidelity: Fidelity,
    pub times: Vec<f64>,
    pub zones: Vec<ZoneId>,
    /// Per zone, °C.
    pub t_zone: Vec<Vec<f64>>,
    /// Per zone, interval-average heat over the step ending at each sample, W.
    pub q_heat: Vec<Vec<f64>>,
    pub loops: Vec<LoopId>,
    pub t_ret: Vec<Vec<f64>>,
    pub mdot: Vec<Vec<f64>>,
    pub annual_demand_kwh: f64,
    pub peak_load_w: f64,
    pub wall_clock_s: f64,
    pub ledger: EnergyLedger,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(rename = "annual_demand_kWh")]
    pub annual_demand_kwh: f64,
    #[serde(rename = "peak_load_W")]
    pub peak_load_w: f64,
    pub wall_clock_s: f64,
}

impl SimulationResult {
    pub fn summary(&self) -> Summary {
        Summary {
            annual_demand_kwh: self.annual_demand_kwh,
            peak_load_w: self.peak_load_w,
            wall_clock_s: self.wall_clock_s,
        }
    }

    pub fn zone_temperature(&self, zone: ZoneId) -> Option<&[f64]> {
        let i = self.zones.iter().position(|&z| z == zone)?;
        Some(&self.t_zone[i])
    }

    pub fn zone_heat(&self, zone: ZoneId) -> Option<&[f64]> {
        let i = self.zones.iter().position(|&z| z == zone)?;
        Some(&self.q_heat[i])
    }

    pub fn return_temperature(&self, id: LoopId) -> Option<&[f64]> {
        let i = self.loops.iter().position(|&l| l == id)?;
        Some(&self.t_ret[i])
    }

    /// Total building heat per sample, W.
    pub fn total_heat(&self) -> Vec<f64> {
        (0..self.times.len())
            .map(|k| self.q_heat.iter().map(|q| q[k]).sum())
            .collect()
    }

    pub fn simulated_days(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => (b - a) / 86_400.0,
            _ => 0.0,
        }
    }

    pub fn columns(&self) -> Vec<(String, &[f64])> {
        let mut cols: Vec<(String, &[f64])> = Vec::new();
        for (i, z) in self.zones.iter().enumerate() {
            cols.push((format!("Tzone_{z}_C"), &self.t_zone[i]));
        }
        for (i, z) in self.zones.iter().enumerate() {
            cols.push((format!("Qheat_{z}_W"), &self.q_heat[i]));
        }
        for (i, l) in self.loops.iter().enumerate() {
            cols.push((format!("Tret_{l}_C"), &self.t_ret[i]));
            cols.push((format!("mdot_{l}_kgs"), &self.mdot[i]));
        }
        cols
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        crate::series::write_csv(w, &self.times, &self.columns())
    }
}

/// Runs `model` from `t0` to `t1` (seconds after January 1 00:00).
pub fn simulate<'a>(
    model: impl Into<ModelRef<'a>>,
    weather: &'a WeatherSeries,
    inputs: &'a SimInputs,
    t0: f64,
    t1: f64,
    cfg: &EngineConfig,
) -> Result<SimulationResult, SimError> {
    let started = Instant::now();
    let model = model.into();
    if !(t1 > t0) {
        return Err(SimError::Horizon(format!("end {t1} s is not after start {t0} s")));
    }
    if !(cfg.out_step > 0.0) {
        return Err(SimError::Horizon("output step must be positive".into()));
    }
    let intervals = ((t1 - t0) / cfg.out_step).round();
    if ((t1 - t0) - intervals * cfg.out_step).abs() > 1e-6 * cfg.out_step {
        return Err(SimError::Horizon(format!(
            "horizon {} s is not a multiple of the output step {} s",
            t1 - t0,
            cfg.out_step
        )));
    }
    if !weather.covers(t0, t1) {
        return Err(SimError::InputGap {
            what: "weather".into(),
            t: if weather.grid.start > t0 { t0 } else { t1 },
        });
    }
    let intervals = intervals as usize;
    let sub = (cfg.out_step / cfg.inner_step).ceil().max(1.0) as usize;
    let mut step_cfg = cfg.clone();
    step_cfg.inner_step = cfg.out_step / sub as f64;
    let mut sim = Simulator::new(model, weather, inputs, &step_cfg, t0)?;

    let base = model.base();
    let zones: Vec<ZoneId> = base.zones.iter().map(|z| z.id).collect();
    let loops: Vec<LoopId> = match model {
        ModelRef::HiFi(h) => h.loop_ids(),
        ModelRef::LoFi(_) => Vec::new(),
    };
    let n = intervals + 1;
    let mut times = Vec::with_capacity(n);
    let mut t_zone = vec![Vec::with_capacity(n); zones.len()];
    let mut q_heat = vec![Vec::with_capacity(n); zones.len()];
    let mut t_ret = vec![Vec::with_capacity(n); loops.len()];
    let mut mdot = vec![Vec::with_capacity(n); loops.len()];

    let mut record = |sim: &Simulator, t: f64, q_avg: &[f64]| {
        times.push(t);
        for (i, z) in base.zones.iter().enumerate() {
            t_zone[i].push(sim.state()[z.node]);
            q_heat[i].push(q_avg[i]);
        }
        let rets = sim.return_temperatures();
        for i in 0..loops.len() {
            t_ret[i].push(rets[i]);
            mdot[i].push(sim.loop_flows()[i]);
        }
    };
    record(&sim, t0, &vec![0.0; zones.len()]);

    let mut demand_j = 0.0;
    let dt = sim.dt();
    let mut acc = vec![0.0; zones.len()];
    for k in 1..=intervals {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for _ in 0..sub {
            let t_mid = sim.time() + 0.5 * dt;
            sim.step()?;
            let in_season = cfg.heating.contains(t_mid, cfg.year);
            for (a, &q) in acc.iter_mut().zip(sim.zone_heat()) {
                *a += q * dt;
                if in_season {
                    demand_j += q * dt;
                }
            }
        }
        let avg: Vec<f64> = acc.iter().map(|a| a / cfg.out_step).collect();
        record(&sim, t0 + k as f64 * cfg.out_step, &avg);
    }

    let peak = (0..times.len())
        .map(|k| q_heat.iter().map(|q| q[k]).sum::<f64>())
        .fold(0.0, f64::max);
    let ledger = *sim.ledger();
    Ok(SimulationResult {
        fidelity: model.fidelity(),
        times,
        zones,
        t_zone,
        q_heat,
        loops,
        t_ret,
        mdot,
        annual_demand_kwh: demand_j / 3.6e6,
        peak_load_w: peak,
        wall_clock_s: started.elapsed().as_secs_f64(),
        ledger,
    })
}

/// Boundary conditions for a single free-floating step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepBoundary {
    pub t_amb: f64,
    pub wind: f64,
    /// `(node, W)` sources.
    pub sources: Vec<(usize, f64)>,
}

/// One implicit-Euler step of the network without heater or advection.
pub fn integrate_step(model: &ThermalModel, state: &[f64], bc: &StepBoundary, dt: f64) -> Result<Vec<f64>, SimError> {
    let n = model.n_nodes();
    let mut edges = Vec::new();
    for br in &model.branches {
        if let Terminal::Node(j) = br.b {
            edges.push((br.a, j));
        }
    }
    let lu = SymbolicLu::new(n, edges);
    let mut vals = vec![0.0; lu.n_slots()];
    let mut rhs = vec![0.0; n];
    for (i, node) in model.nodes.iter().enumerate() {
        vals[lu.diag_slot(i)] += node.capacity / dt;
        rhs[i] = node.capacity / dt * state[i];
    }
    for br in &model.branches {
        let g = br.g.value(&model.physics, bc.wind);
        vals[lu.diag_slot(br.a)] += g;
        match br.b {
            Terminal::Node(j) => {
                vals[lu.diag_slot(j)] += g;
                vals[lu.slot(br.a, j).expect("pattern")] -= g;
                vals[lu.slot(j, br.a).expect("pattern")] -= g;
            }
            Terminal::Ambient => rhs[br.a] += g * bc.t_amb,
            Terminal::Ground => rhs[br.a] += g * model.physics.ground_temperature,
        }
    }
    for &(i, q) in &bc.sources {
        rhs[i] += q;
    }
    lu.factor(&mut vals)
        .map_err(|p| SimError::Singular { index: p.index, value: p.value })?;
    lu.solve(&vals, &mut rhs);
    Ok(rhs)
}

/// Heater power per zone that holds each setpoint over the step from `t`
/// to `t + dt`, starting from `state`.
pub fn ideal_load(
    model: &ThermalModel,
    weather: &WeatherSeries,
    state: &[f64],
    t: f64,
    dt: f64,
) -> Result<Vec<f64>, SimError> {
    let inputs = SimInputs::default();
    let cfg = EngineConfig {
        inner_step: dt,
        heating: HeatingPeriod::Always,
        ..EngineConfig::lofi()
    };
    let mut sim = Simulator::new(model, weather, &inputs, &cfg, t)?;
    sim.set_state(state);
    sim.step()?;
    Ok(sim.zone_heat().to_vec())
}

/// One timed run for the runtime table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeSample {
    pub label: String,
    pub zones: usize,
    pub fidelity: Fidelity,
    pub wall_clock_s: f64,
    pub simulated_days: f64,
}

impl RuntimeSample {
    pub fn from_result(label: impl Into<String>, r: &SimulationResult) -> Self {
        Self {
            label: label.into(),
            zones: r.zones.len(),
            fidelity: r.fidelity,
            wall_clock_s: r.wall_clock_s,
            simulated_days: r.simulated_days(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRow {
    pub label: String,
    pub zones: usize,
    pub fidelity: Fidelity,
    pub cost_per_day_s: f64,
    /// Cost per day relative to the first row.
    pub ratio: f64,
}

pub fn runtime_report(samples: &[RuntimeSample]) -> Vec<RuntimeRow> {
    let cost = |s: &RuntimeSample| {
        if s.simulated_days > 0.0 {
            s.wall_clock_s / s.simulated_days
        } else {
            s.wall_clock_s
        }
    };
    let first = samples.first().map(cost).unwrap_or(1.0);
    samples
        .iter()
        .map(|s| RuntimeRow {
            label: s.label.clone(),
            zones: s.zones,
            fidelity: s.fidelity,
            cost_per_day_s: cost(s),
            ratio: if first > 0.0 { cost(s) / first } else { f64::NAN },
        })
        .collect()
}

pub fn runtime_markdown(rows: &[RuntimeRow]) -> String {
    let mut s = String::from("| label | zones | fidelity | s per simulated day | ratio |\n|---|---|---|---|---|\n");
    for r in rows {
        let fid = match r.fidelity {
            Fidelity::LoFi => "LoFi",
            Fidelity::HiFi => "HiFi",
        };
        s.push_str(&format!(
            "| {} | {} | {} | {:.4} | ×{:.2} |\n",
            r.label, r.zones, fid, r.cost_per_day_s, r.ratio
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn season_wraps_new_year() {
        let p = HeatingPeriod::default();
        let day = |d: f64| d * 86_400.0 + 3600.0;
        assert!(p.contains(day(0.0), 2021));
        // May 19 is day index 138 in a common year, May 20 is 139.
        assert!(p.contains(day(138.0), 2021));
        assert!(!p.contains(day(139.0), 2021));
        // October 9 and 10.
        assert!(!p.contains(day(281.0), 2021));
        assert!(p.contains(day(282.0), 2021));
        assert!(!HeatingPeriod::Never.contains(0.0, 2021));
    }

    #[test]
    fn runtime_ratios() {
        let mk = |label: &str, wall| RuntimeSample {
            label: label.into(),
            zones: 4,
            fidelity: Fidelity::LoFi,
            wall_clock_s: wall,
            simulated_days: 365.0,
        };
        let rows = runtime_report(&[mk("a", 10.0), mk("b", 47.3)]);
        assert_eq!(rows[0].ratio, 1.0);
        assert!((rows[1].ratio - 4.73).abs() < 1e-12);
        assert_eq!(runtime_report(&[mk("a", 3.0)])[0].ratio, 1.0);
        assert!(runtime_markdown(&rows).contains("×4.73"));
    }
}
