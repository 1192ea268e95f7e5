//! Closed-loop calibration of pipe spacing and slab-to-air coefficients
//! against measured zone and return temperatures.
//!
//! Each iteration simulates the hydronic model with measured supply
//! temperatures and flows, scores it with a flow-gated Huber objective,
//! turns signed biases into log-space parameter steps and damps the result.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{simulate, EngineConfig, HeatingPeriod, SimError, SimInputs, SimulationResult};
use crate::hydronic::{HiFiModel, HydronicParams, LoopInputs};
use crate::series::{interp, SeriesError, Table, UniformGrid};
use crate::thermal::CompileError;
use crate::topology::{LoopId, ZoneId};
use crate::weather::{Site, WeatherSeries};

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("invalid calibration config: {0}")]
    Config(String),
    #[error("measurements: {0}")]
    Series(#[from] SeriesError),
    #[error("cannot align simulation with measurements: {0}")]
    Alignment(String),
    #[error("every channel is gated out; the objective is empty")]
    EmptyObjective,
    #[error("iteration {k}: {source}")]
    Simulation { k: usize, source: SimError },
    #[error("iteration {k}: {source}")]
    Compile { k: usize, source: CompileError },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub w_zone: f64,
    pub w_ret: f64,
    /// Residual scales, K.
    pub s_zone: f64,
    pub s_ret: f64,
    /// Huber threshold on scaled residuals.
    pub delta: f64,
    /// Return samples count only at or above this measured flow, kg/s.
    pub mdot_min: f64,
    pub alpha_h: f64,
    pub alpha_d: f64,
    /// Largest log-step per iteration.
    pub max_step_h: f64,
    pub max_step_d: f64,
    pub lambda: f64,
    pub dis_min: f64,
    pub dis_max: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// Bias scalings, 1/K.
    pub gamma_zone: f64,
    pub gamma_ret: f64,
    pub max_iters: usize,
    /// Relative change of J (to J⁰) treated as a plateau.
    pub plateau: f64,
    /// Re-weight step sizes by the dominant error class.
    pub adaptive: bool,
    pub initial_dis_pip: f64,
    pub initial_h_int: f64,
    /// Simulation output step, s.
    pub out_step: f64,
    /// Integration step, s.
    pub inner_step: f64,
    /// Initial uniform temperature; defaults to the mean first zone
    /// measurement.
    pub initial_temperature: Option<f64>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            w_zone: 1.0,
            w_ret: 1.0,
            s_zone: 1.0,
            s_ret: 2.0,
            delta: 1.0,
            mdot_min: 0.003,
            alpha_h: 0.15,
            alpha_d: 0.15,
            max_step_h: 0.3,
            max_step_d: 0.3,
            lambda: 0.7,
            dis_min: 0.05,
            dis_max: 0.4,
            h_min: 1.0,
            h_max: 30.0,
            gamma_zone: 0.5,
            gamma_ret: 0.5,
            max_iters: 25,
            plateau: 1e-3,
            adaptive: true,
            initial_dis_pip: 0.15,
            initial_h_int: 8.0,
            out_step: 30.0,
            inner_step: 5.0,
            initial_temperature: None,
        }
    }
}

impl CalibrationConfig {
    pub fn from_toml(text: &str) -> Result<Self, CalibrationError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CalibrationError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        let positive = [
            ("w_zone", self.w_zone),
            ("w_ret", self.w_ret),
            ("s_zone", self.s_zone),
            ("s_ret", self.s_ret),
            ("delta", self.delta),
            ("mdot_min", self.mdot_min),
            ("alpha_h", self.alpha_h),
            ("alpha_d", self.alpha_d),
            ("max_step_h", self.max_step_h),
            ("max_step_d", self.max_step_d),
            ("lambda", self.lambda),
            ("dis_min", self.dis_min),
            ("h_min", self.h_min),
            ("gamma_zone", self.gamma_zone),
            ("gamma_ret", self.gamma_ret),
            ("plateau", self.plateau),
            ("out_step", self.out_step),
            ("inner_step", self.inner_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CalibrationError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.lambda > 1.0 {
            return Err(CalibrationError::Config("lambda must be in (0, 1]".into()));
        }
        if self.dis_min >= self.dis_max || self.h_min >= self.h_max {
            return Err(CalibrationError::Config("lower bounds must be below upper bounds".into()));
        }
        if !(self.dis_min..=self.dis_max).contains(&self.initial_dis_pip)
            || !(self.h_min..=self.h_max).contains(&self.initial_h_int)
        {
            return Err(CalibrationError::Config("initial parameters lie outside the bounds".into()));
        }
        Ok(())
    }
}

/// Measured series on one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSet {
    pub grid: UniformGrid,
    pub t_zone: BTreeMap<ZoneId, Vec<f64>>,
    pub t_ret: BTreeMap<LoopId, Vec<f64>>,
    pub mdot: BTreeMap<LoopId, Vec<f64>>,
    pub t_sup: BTreeMap<LoopId, Vec<f64>>,
    pub weather: WeatherSeries,
}

fn id_columns<T: std::str::FromStr + Ord>(table: &Table, prefix: &str, suffix: &str) -> BTreeMap<T, Vec<f64>> {
    table
        .columns
        .iter()
        .filter_map(|(name, col)| {
            let id = name.strip_prefix(prefix)?.strip_suffix(suffix)?.parse().ok()?;
            Some((id, col.clone()))
        })
        .collect()
}

impl MeasurementSet {
    pub fn from_table(table: &Table, site: &Site) -> Result<Self, CalibrationError> {
        let weather = WeatherSeries::from_table(table, site)?;
        let m = Self {
            grid: table.grid,
            t_zone: id_columns(table, "Tzone_", "_C"),
            t_ret: id_columns(table, "Tret_", "_C"),
            mdot: id_columns(table, "mdot_", "_kgs"),
            t_sup: id_columns(table, "Tsup_", "_C"),
            weather,
        };
        for (id, f) in &m.mdot {
            if f.iter().any(|&v| v < 0.0) {
                return Err(CalibrationError::Alignment(format!("negative flow in mdot_{id}_kgs")));
            }
        }
        if m.grid.end() <= m.grid.start {
            return Err(CalibrationError::Alignment("window start must precede its end".into()));
        }
        Ok(m)
    }

    pub fn read<R: std::io::Read>(reader: R, site: &Site) -> Result<Self, CalibrationError> {
        Self::from_table(&Table::read(reader)?, site)
    }

    /// Samples a simulation on `grid` as if it were measured, taking supply
    /// and flow from the inputs that drove it.
    pub fn from_simulation(
        sim: &SimulationResult,
        loops: &LoopInputs,
        weather: &WeatherSeries,
        grid: UniformGrid,
    ) -> Result<Self, CalibrationError> {
        let at: Vec<f64> = (0..grid.len).map(|i| grid.time(i)).collect();
        let mut m = Self {
            grid,
            t_zone: BTreeMap::new(),
            t_ret: BTreeMap::new(),
            mdot: BTreeMap::new(),
            t_sup: BTreeMap::new(),
            weather: weather.clone(),
        };
        for (i, &z) in sim.zones.iter().enumerate() {
            m.t_zone.insert(z, resample(&sim.times, &sim.t_zone[i], &at)?);
        }
        for (i, &l) in sim.loops.iter().enumerate() {
            m.t_ret.insert(l, resample(&sim.times, &sim.t_ret[i], &at)?);
            let missing = || CalibrationError::Alignment(format!("no inputs for loop {l}"));
            let flow = at.iter().map(|&t| loops.flow_at(l, t).ok_or_else(missing)).collect::<Result<_, _>>()?;
            let sup = at.iter().map(|&t| loops.supply_at(l, t).ok_or_else(missing)).collect::<Result<_, _>>()?;
            m.mdot.insert(l, flow);
            m.t_sup.insert(l, sup);
        }
        Ok(m)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.grid.len).map(|i| self.grid.time(i)).collect()
    }

    /// Measured supply and flow as simulation inputs.
    pub fn inputs(&self) -> SimInputs {
        SimInputs {
            gains: Default::default(),
            loops: LoopInputs {
                grid: Some(self.grid),
                supply: self.t_sup.clone(),
                flow: self.mdot.clone(),
            },
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut cols: Vec<(String, &[f64])> = Vec::new();
        for (z, v) in &self.t_zone {
            cols.push((format!("Tzone_{z}_C"), v));
        }
        for (l, v) in &self.t_ret {
            cols.push((format!("Tret_{l}_C"), v));
        }
        for (l, v) in &self.mdot {
            cols.push((format!("mdot_{l}_kgs"), v));
        }
        for (l, v) in &self.t_sup {
            cols.push((format!("Tsup_{l}_C"), v));
        }
        let wx = &self.weather;
        let amb: Vec<f64> = self.times().iter().map(|&t| interp(&wx.grid, &wx.t_amb, t)).collect();
        let wind: Vec<f64> = self.times().iter().map(|&t| interp(&wx.grid, &wx.wind, t)).collect();
        let dir: Vec<f64> = self.times().iter().map(|&t| interp(&wx.grid, &wx.i_dir, t)).collect();
        let diff: Vec<f64> = self.times().iter().map(|&t| interp(&wx.grid, &wx.i_diff, t)).collect();
        let az: Vec<f64> = self.times().iter().map(|&t| interp(&wx.grid, &wx.sun_az, t)).collect();
        let el: Vec<f64> = self.times().iter().map(|&t| interp(&wx.grid, &wx.sun_el, t)).collect();
        cols.push(("T_amb_C".into(), &amb));
        cols.push(("wind_ms".into(), &wind));
        cols.push(("I_dir_Wm2".into(), &dir));
        cols.push(("I_diff_Wm2".into(), &diff));
        cols.push(("sun_az_deg".into(), &az));
        cols.push(("sun_el_deg".into(), &el));
        crate::series::write_csv(w, &self.times(), &cols)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChannelKey {
    Zone(ZoneId),
    Return(LoopId),
}

impl ChannelKey {
    pub fn label(&self) -> String {
        match self {
            ChannelKey::Zone(z) => format!("Tzone_{z}"),
            ChannelKey::Return(l) => format!("Tret_{l}"),
        }
    }

    pub fn is_zone(&self) -> bool {
        matches!(self, ChannelKey::Zone(_))
    }
}

/// Residuals of one channel on its valid sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub key: ChannelKey,
    /// Indices into the measurement grid.
    pub valid: Vec<usize>,
    /// `(y_sim − y_meas)` on the valid set, K.
    pub deviation: Vec<f64>,
    /// Scaled residuals `deviation / s_c`.
    pub residual: Vec<f64>,
}

/// Simulation output resampled onto the measurement grid.
pub fn resample(sim_times: &[f64], values: &[f64], at: &[f64]) -> Result<Vec<f64>, CalibrationError> {
    let grid = crate::series::uniform_grid(sim_times).map_err(|e| CalibrationError::Alignment(e.to_string()))?;
    if let (Some(&a), Some(&b)) = (at.first(), at.last()) {
        if !grid.covers(a, b) {
            return Err(CalibrationError::Alignment(format!(
                "simulation covers [{}, {}] s but measurements span [{a}, {b}] s",
                grid.start,
                grid.end()
            )));
        }
    }
    Ok(at.iter().map(|&t| interp(&grid, values, t)).collect())
}

/// Flow-gated residual channels. Channels with no valid samples are
/// dropped.
pub fn gated_residuals(
    sim: &SimulationResult,
    meas: &MeasurementSet,
    cfg: &CalibrationConfig,
) -> Result<Vec<Channel>, CalibrationError> {
    let at = meas.times();
    let mut out = Vec::new();
    for (&z, y) in &meas.t_zone {
        let Some(s) = sim.zone_temperature(z) else {
            continue;
        };
        let s = resample(&sim.times, s, &at)?;
        out.push(channel(ChannelKey::Zone(z), &s, y, None, cfg.s_zone, cfg.mdot_min));
    }
    for (&l, y) in &meas.t_ret {
        let Some(s) = sim.return_temperature(l) else {
            continue;
        };
        let s = resample(&sim.times, s, &at)?;
        let flow = meas.mdot.get(&l).map(Vec::as_slice);
        let c = channel(ChannelKey::Return(l), &s, y, Some(flow.unwrap_or(&[])), cfg.s_ret, cfg.mdot_min);
        if !c.valid.is_empty() {
            out.push(c);
        }
    }
    out.retain(|c| !c.valid.is_empty());
    Ok(out)
}

/// One channel from aligned simulated and measured series. With `flow`,
/// a sample is valid only where the flow reaches `mdot_min`.
pub fn channel(key: ChannelKey, sim: &[f64], meas: &[f64], flow: Option<&[f64]>, scale: f64, mdot_min: f64) -> Channel {
    let mut c = Channel {
        key,
        valid: Vec::new(),
        deviation: Vec::new(),
        residual: Vec::new(),
    };
    for i in 0..meas.len().min(sim.len()) {
        if let Some(f) = flow {
            if !f.get(i).is_some_and(|&m| m >= mdot_min) {
                continue;
            }
        }
        let d = sim[i] - meas[i];
        c.valid.push(i);
        c.deviation.push(d);
        c.residual.push(d / scale);
    }
    c
}

pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Loss {
    pub j: f64,
    /// `w_c·Σ ρ(r)` per channel.
    pub contrib: BTreeMap<ChannelKey, f64>,
}

impl Loss {
    pub fn zone_total(&self) -> f64 {
        self.contrib.iter().filter(|(k, _)| k.is_zone()).map(|(_, v)| v).sum()
    }

    pub fn return_total(&self) -> f64 {
        self.contrib.iter().filter(|(k, _)| !k.is_zone()).map(|(_, v)| v).sum()
    }
}

/// `J = Σ_c w_c Σ_t ρ(r_c(t)) / Σ_c w_c |T_c|`.
pub fn total_loss(channels: &[Channel], cfg: &CalibrationConfig) -> Result<Loss, CalibrationError> {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut contrib = BTreeMap::new();
    for c in channels {
        if c.valid.is_empty() {
            continue;
        }
        let w = if c.key.is_zone() { cfg.w_zone } else { cfg.w_ret };
        let s: f64 = c.residual.iter().map(|&r| huber(r, cfg.delta)).sum();
        contrib.insert(c.key, w * s);
        num += w * s;
        den += w * c.valid.len() as f64;
    }
    if den == 0.0 {
        return Err(CalibrationError::EmptyObjective);
    }
    Ok(Loss { j: num / den, contrib })
}

/// Mean signed deviations, K.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Biases {
    pub zone: BTreeMap<ZoneId, f64>,
    pub ret: BTreeMap<LoopId, f64>,
}

pub fn bias_stats(channels: &[Channel]) -> Biases {
    let mut b = Biases::default();
    for c in channels {
        if c.deviation.is_empty() {
            continue;
        }
        let mean = c.deviation.iter().sum::<f64>() / c.deviation.len() as f64;
        match c.key {
            ChannelKey::Zone(z) => {
                b.zone.insert(z, mean);
            }
            ChannelKey::Return(l) => {
                b.ret.insert(l, mean);
            }
        }
    }
    b
}

/// Step sizes in effect for one update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub alpha_h: f64,
    pub alpha_d: f64,
    pub lambda: f64,
}

/// Per-loop quantities of one update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateTrace {
    pub d: BTreeMap<LoopId, Option<f64>>,
    pub imp: BTreeMap<LoopId, f64>,
    pub d_g: Option<f64>,
}

/// `d_L`; `None` when neither bias is available.
pub fn loop_direction(b_zone: Option<f64>, b_ret: Option<f64>, cfg: &CalibrationConfig) -> Option<f64> {
    match (b_zone, b_ret) {
        (None, None) => None,
        (z, r) => Some(-(cfg.gamma_zone * z.unwrap_or(0.0) + cfg.gamma_ret * r.unwrap_or(0.0))),
    }
}

/// Proposed parameters from biases and channel contributions. `zone_of`
/// maps each loop to the zone of its first emitter.
pub fn update_parameters(
    phi: &HydronicParams,
    zone_of: &BTreeMap<LoopId, ZoneId>,
    biases: &Biases,
    contrib: &BTreeMap<ChannelKey, f64>,
    steps: &StepSizes,
    cfg: &CalibrationConfig,
) -> (HydronicParams, UpdateTrace) {
    let loops: Vec<LoopId> = zone_of.keys().copied().collect();
    let c_loop: BTreeMap<LoopId, f64> = loops
        .iter()
        .map(|&l| {
            let r = contrib.get(&ChannelKey::Return(l)).copied().unwrap_or(0.0);
            let z = contrib.get(&ChannelKey::Zone(zone_of[&l])).copied().unwrap_or(0.0);
            (l, r + z)
        })
        .collect();
    let mean = if loops.is_empty() {
        0.0
    } else {
        c_loop.values().sum::<f64>() / loops.len() as f64
    };
    let imp: BTreeMap<LoopId, f64> = c_loop
        .iter()
        .map(|(&l, &c)| (l, if mean > 0.0 { (c / mean).clamp(0.5, 2.0) } else { 1.0 }))
        .collect();
    let d: BTreeMap<LoopId, Option<f64>> = loops
        .iter()
        .map(|&l| {
            let bz = biases.zone.get(&zone_of[&l]).copied();
            let br = biases.ret.get(&l).copied();
            (l, loop_direction(bz, br, cfg))
        })
        .collect();

    let mut next = phi.clone();
    for &l in &loops {
        if let Some(dl) = d[&l] {
            let h = phi.h_int[&l];
            let step = (steps.alpha_h * imp[&l] * dl).clamp(-cfg.max_step_h, cfg.max_step_h);
            next.h_int.insert(l, log_step(h, step).clamp(cfg.h_min, cfg.h_max));
        }
    }
    let (num, den) = loops
        .iter()
        .filter_map(|l| d[l].map(|dl| (imp[l] * dl, imp[l])))
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let d_g = (den > 0.0).then(|| num / den);
    if let Some(dg) = d_g {
        let step = (-steps.alpha_d * dg).clamp(-cfg.max_step_d, cfg.max_step_d);
        next.dis_pip = log_step(phi.dis_pip, step).clamp(cfg.dis_min, cfg.dis_max);
    }
    (next, UpdateTrace { d, imp, d_g })
}

fn log_step(x: f64, step: f64) -> f64 {
    if step == 0.0 {
        x
    } else {
        (x.ln() + step).exp()
    }
}

/// Convex combination in log space, re-clamped.
pub fn damp(prev: &HydronicParams, proposed: &HydronicParams, lambda: f64, cfg: &CalibrationConfig) -> HydronicParams {
    let mix = |a: f64, b: f64| if a == b { a } else { ((1.0 - lambda) * a.ln() + lambda * b.ln()).exp() };
    HydronicParams {
        dis_pip: mix(prev.dis_pip, proposed.dis_pip).clamp(cfg.dis_min, cfg.dis_max),
        h_int: proposed
            .h_int
            .iter()
            .map(|(&l, &h)| {
                let p = prev.h_int.get(&l).copied().unwrap_or(h);
                (l, mix(p, h).clamp(cfg.h_min, cfg.h_max))
            })
            .collect(),
    }
}

/// The dominant error class picks full steps for its parameter; the other
/// gets half steps. Damping halves whenever the dominant class flips.
pub fn adapt_steps(loss: &Loss, prev_zone_dominant: Option<bool>, lambda: f64, cfg: &CalibrationConfig) -> (StepSizes, bool) {
    let zone_dominant = loss.zone_total() >= loss.return_total();
    if !cfg.adaptive {
        return (
            StepSizes {
                alpha_h: cfg.alpha_h,
                alpha_d: cfg.alpha_d,
                lambda: cfg.lambda,
            },
            zone_dominant,
        );
    }
    let (alpha_h, alpha_d) = if zone_dominant {
        (cfg.alpha_h, 0.5 * cfg.alpha_d)
    } else {
        (0.5 * cfg.alpha_h, cfg.alpha_d)
    };
    let lambda = match prev_zone_dominant {
        Some(p) if p != zone_dominant => 0.5 * lambda,
        _ => lambda,
    };
    (StepSizes { alpha_h, alpha_d, lambda }, zone_dominant)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub k: usize,
    #[serde(rename = "J")]
    pub j: f64,
    pub contrib: BTreeMap<String, f64>,
    #[serde(rename = "Phi")]
    pub phi: HydronicParams,
    pub steps: StepSizes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationState {
    pub k: usize,
    pub phi: HydronicParams,
    pub history: Vec<HistoryRecord>,
    pub lambda: f64,
    pub zone_dominant: Option<bool>,
    pub plateau_count: usize,
    pub converged: bool,
}

/// Median of per-channel RMSE within each group, K.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupRmse {
    pub zone: Option<f64>,
    pub ret: Option<f64>,
}

pub fn group_rmse(channels: &[Channel]) -> GroupRmse {
    let med = |mut v: Vec<f64>| -> Option<f64> {
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
    };
    let rmse = |c: &Channel| (c.deviation.iter().map(|d| d * d).sum::<f64>() / c.deviation.len() as f64).sqrt();
    GroupRmse {
        zone: med(channels.iter().filter(|c| c.key.is_zone()).map(rmse).collect()),
        ret: med(channels.iter().filter(|c| !c.key.is_zone()).map(rmse).collect()),
    }
}

#[derive(Clone, Debug)]
pub struct CalibrationOutcome {
    pub state: CalibrationState,
    pub before: SimulationResult,
    pub after: SimulationResult,
    pub rmse_before: GroupRmse,
    pub rmse_after: GroupRmse,
    pub warnings: Vec<String>,
}

impl CalibrationOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.state.history.first().map_or(f64::NAN, |h| h.j)
    }

    pub fn final_loss(&self) -> f64 {
        self.state.history.last().map_or(f64::NAN, |h| h.j)
    }

    pub fn report(&self) -> serde_json::Value {
        serde_json::json!({
            "iterations": self.state.k,
            "converged": self.state.converged,
            "J_initial": self.initial_loss(),
            "J_final": self.final_loss(),
            "Phi_final": self.state.phi,
            "median_rmse_before": self.rmse_before,
            "median_rmse_after": self.rmse_after,
            "warnings": self.warnings,
        })
    }
}

/// Where to write history and checkpoints.
#[derive(Clone, Debug, Default)]
pub struct CalibrateOptions {
    pub out_dir: Option<PathBuf>,
    /// Continue from `checkpoint.json` in `out_dir` when present.
    pub resume: bool,
    /// Starting parameters; defaults to the uniform initial values of the
    /// config.
    pub initial: Option<HydronicParams>,
}

pub const HISTORY_FILE: &str = "history.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

struct Evaluation {
    result: SimulationResult,
    channels: Vec<Channel>,
    loss: Loss,
}

fn evaluate(
    build: &dyn Fn(&HydronicParams) -> Result<HiFiModel, CompileError>,
    phi: &HydronicParams,
    meas: &MeasurementSet,
    inputs: &SimInputs,
    engine: &EngineConfig,
    cfg: &CalibrationConfig,
    k: usize,
) -> Result<Evaluation, CalibrationError> {
    let model = build(phi).map_err(|source| CalibrationError::Compile { k, source })?;
    let result = simulate(&model, &meas.weather, inputs, meas.grid.start, meas.grid.end(), engine)
        .map_err(|source| CalibrationError::Simulation { k, source })?;
    let channels = gated_residuals(&result, meas, cfg)?;
    let loss = total_loss(&channels, cfg)?;
    Ok(Evaluation { result, channels, loss })
}

/// Runs the calibration loop. `build` compiles the hydronic model for a
/// parameter set.
pub fn calibrate(
    build: &dyn Fn(&HydronicParams) -> Result<HiFiModel, CompileError>,
    loops: &[(LoopId, ZoneId)],
    meas: &MeasurementSet,
    cfg: &CalibrationConfig,
    opts: &CalibrateOptions,
) -> Result<CalibrationOutcome, CalibrationError> {
    cfg.validate()?;
    if meas.grid.end() - meas.grid.start < 86_400.0 - 1e-6 {
        return Err(CalibrationError::Alignment("calibration window must span at least one day".into()));
    }
    let zone_of: BTreeMap<LoopId, ZoneId> = loops.iter().copied().collect();
    let ids: Vec<LoopId> = zone_of.keys().copied().collect();
    let inputs = meas.inputs();
    let init_t = cfg.initial_temperature.or_else(|| {
        let first: Vec<f64> = meas.t_zone.values().filter_map(|v| v.first().copied()).collect();
        (!first.is_empty()).then(|| first.iter().sum::<f64>() / first.len() as f64)
    });
    let engine = EngineConfig {
        out_step: cfg.out_step,
        inner_step: cfg.inner_step,
        heating: HeatingPeriod::Always,
        initial_temperature: init_t,
        ..EngineConfig::hifi()
    };
    let mut warnings = Vec::new();
    let gated: Vec<LoopId> = ids
        .iter()
        .copied()
        .filter(|l| meas.mdot.get(l).is_none_or(|f| f.iter().all(|&m| m < cfg.mdot_min)))
        .collect();
    if !gated.is_empty() {
        warnings.push(format!(
            "return channels of loops {gated:?} have no samples with flow >= {} kg/s; calibrating on zone temperatures only for them",
            cfg.mdot_min
        ));
    }

    let initial = match &opts.initial {
        Some(p) => {
            let inside = (cfg.dis_min..=cfg.dis_max).contains(&p.dis_pip)
                && ids.iter().all(|l| p.h_int.get(l).is_some_and(|h| (cfg.h_min..=cfg.h_max).contains(h)));
            if !inside {
                return Err(CalibrationError::Config("initial parameters lie outside the bounds".into()));
            }
            p.clone()
        }
        None => HydronicParams::uniform(cfg.initial_dis_pip, cfg.initial_h_int, &ids),
    };
    let mut state = match (&opts.out_dir, opts.resume) {
        (Some(dir), true) if dir.join(CHECKPOINT_FILE).exists() => {
            serde_json::from_str(&fs::read_to_string(dir.join(CHECKPOINT_FILE))?)?
        }
        _ => CalibrationState {
            k: 0,
            phi: initial.clone(),
            history: Vec::new(),
            lambda: cfg.lambda,
            zone_dominant: None,
            plateau_count: 0,
            converged: false,
        },
    };
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir)?;
        if state.history.is_empty() {
            fs::write(dir.join(HISTORY_FILE), "")?;
        }
    }

    let first_phi = state.history.first().map_or_else(|| state.phi.clone(), |h| h.phi.clone());
    let before = evaluate(build, &first_phi, meas, &inputs, &engine, cfg, 0)?;
    let mut current = if state.history.is_empty() {
        let rec = record(0, &before.loss, &state.phi, &initial_steps(cfg, state.lambda));
        append(&opts.out_dir, &mut state, rec)?;
        evaluate_clone(&before)
    } else {
        evaluate(build, &state.phi, meas, &inputs, &engine, cfg, state.k)?
    };
    let j0 = state.history[0].j;

    while !state.converged && state.k < cfg.max_iters {
        if current.loss.j < 1e-12 {
            state.converged = true;
            break;
        }
        let biases = bias_stats(&current.channels);
        let (steps, dom) = adapt_steps(&current.loss, state.zone_dominant, state.lambda, cfg);
        state.zone_dominant = Some(dom);
        state.lambda = steps.lambda;
        let (proposed, _) = update_parameters(&state.phi, &zone_of, &biases, &current.loss.contrib, &steps, cfg);
        let next = damp(&state.phi, &proposed, steps.lambda, cfg);
        let k = state.k + 1;
        current = evaluate(build, &next, meas, &inputs, &engine, cfg, k)?;
        let prev_j = state.history.last().map_or(j0, |h| h.j);
        state.phi = next;
        state.k = k;
        if (current.loss.j - prev_j).abs() < cfg.plateau * j0 {
            state.plateau_count += 1;
        } else {
            state.plateau_count = 0;
        }
        if state.plateau_count >= 3 || current.loss.j < 1e-12 {
            state.converged = true;
        }
        let rec = record(k, &current.loss, &state.phi, &steps);
        append(&opts.out_dir, &mut state, rec)?;
    }

    Ok(CalibrationOutcome {
        rmse_before: group_rmse(&before.channels),
        rmse_after: group_rmse(&current.channels),
        before: before.result,
        after: current.result,
        state,
        warnings,
    })
}

fn evaluate_clone(e: &Evaluation) -> Evaluation {
    Evaluation {
        result: e.result.clone(),
        channels: e.channels.clone(),
        loss: e.loss.clone(),
    }
}

fn initial_steps(cfg: &CalibrationConfig, lambda: f64) -> StepSizes {
    StepSizes {
        alpha_h: cfg.alpha_h,
        alpha_d: cfg.alpha_d,
        lambda,
    }
}

fn record(k: usize, loss: &Loss, phi: &HydronicParams, steps: &StepSizes) -> HistoryRecord {
    HistoryRecord {
        k,
        j: loss.j,
        contrib: loss.contrib.iter().map(|(c, v)| (c.label(), *v)).collect(),
        phi: phi.clone(),
        steps: *steps,
    }
}

fn append(dir: &Option<PathBuf>, state: &mut CalibrationState, rec: HistoryRecord) -> Result<(), CalibrationError> {
    if let Some(dir) = dir {
        let mut f = fs::OpenOptions::new().append(true).create(true).open(dir.join(HISTORY_FILE))?;
        writeln!(f, "{}", serde_json::to_string(&rec)?)?;
    }
    state.history.push(rec);
    if let Some(dir) = dir {
        write_atomic(&dir.join(CHECKPOINT_FILE), &serde_json::to_vec_pretty(state)?)?;
    }
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}
