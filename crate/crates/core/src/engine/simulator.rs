//! One implicit-Euler stepper shared by both fidelities.
//!
//! Each step solves `(C/dt + G) T¹ = C/dt T⁰ + b`. When every zone needs
//! heat, ideal loads come from one solve with the zone rows held at their
//! setpoints, reading each load off its zone-row residual. Otherwise they
//! are found by superposition: the free response plus one response column
//! per heated zone, combined by a small active-set solve with bounds
//! `0 ≤ Q ≤ Q_max`.

use crate::hydronic::{thermostat_flow, HiFiModel, CP_WATER};
use crate::series::interp;
use crate::sparse::SymbolicLu;
use crate::thermal::{solar_gains, dense_solve, Terminal, ThermalModel};
use crate::weather::WeatherSeries;

use super::{EngineConfig, EnergyLedger, ModelRef, SimError, SimInputs};

struct BranchSlots {
    aa: usize,
    /// `(bb, ab, ba)` for node-to-node branches.
    nodes: Option<(usize, usize, usize)>,
}

struct LoopPlan {
    /// `(diag slot, upstream slot)` per volume in flow order; the first
    /// volume has no upstream slot.
    slots: Vec<(usize, Option<usize>)>,
    first: usize,
    ret: usize,
    zone_node: usize,
    setpoint: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Bound {
    Free,
    Zero,
    Capped,
}

/// Pattern slots of one zone-air row.
struct ZoneRow {
    node: usize,
    diag: usize,
    /// `(column, slot)` of the off-diagonal entries.
    off: Vec<(usize, usize)>,
}

pub struct Simulator<'a> {
    model: ModelRef<'a>,
    weather: &'a WeatherSeries,
    inputs: &'a SimInputs,
    cfg: EngineConfig,
    dt: f64,
    lu: SymbolicLu,
    fixed: Vec<f64>,
    values: Vec<f64>,
    branch_slots: Vec<BranchSlots>,
    wind_branches: Vec<usize>,
    loops: Vec<LoopPlan>,
    solar_rows: Vec<Vec<(usize, f64)>>,
    factor_key: Option<(usize, Vec<f64>)>,
    response: Vec<Vec<f64>>,
    zone_rows: Vec<ZoneRow>,
    /// Assembled matrix before factorization (LoFi).
    assembled: Vec<f64>,
    /// Factored matrix with zone rows replaced by identity rows (LoFi).
    clamped: Vec<f64>,
    /// Try the setpoint-held solve first.
    all_heated: bool,
    fast_path: bool,
    g_now: Vec<f64>,
    state: Vec<f64>,
    t: f64,
    thermo_on: Vec<bool>,
    flows: Vec<f64>,
    supplies: Vec<f64>,
    /// Heat delivered to each zone during the last step, W.
    q_zone: Vec<f64>,
    ledger: EnergyLedger,
    rhs: Vec<f64>,
    x0: Vec<f64>,
}

impl<'a> Simulator<'a> {
    pub fn new(
        model: impl Into<ModelRef<'a>>,
        weather: &'a WeatherSeries,
        inputs: &'a SimInputs,
        cfg: &EngineConfig,
        t0: f64,
    ) -> Result<Self, SimError> {
        let model = model.into();
        let base = model.base();
        let n = base.n_nodes();
        if !(cfg.inner_step > 0.0) {
            return Err(SimError::Horizon("inner step must be positive".into()));
        }
        let dt = cfg.inner_step;

        let mut edges = Vec::new();
        for br in &base.branches {
            if let Terminal::Node(j) = br.b {
                edges.push((br.a, j));
            }
        }
        let hifi_loops: &[crate::hydronic::HydronicLoop] = match model {
            ModelRef::HiFi(h) => &h.loops,
            ModelRef::LoFi(_) => &[],
        };
        for l in hifi_loops {
            let vols: Vec<usize> = l.volumes().collect();
            for w in vols.windows(2) {
                edges.push((w[1], w[0]));
            }
        }
        let mut zone_rows: Vec<ZoneRow> = Vec::new();
        if matches!(model, ModelRef::LoFi(_)) {
            for z in &base.zones {
                let mut cols: Vec<usize> = edges
                    .iter()
                    .filter_map(|&(a, b)| (a == z.node).then_some(b).or((b == z.node).then_some(a)))
                    .filter(|&c| c != z.node)
                    .collect();
                cols.sort_unstable();
                cols.dedup();
                zone_rows.push(ZoneRow {
                    node: z.node,
                    diag: 0,
                    off: cols.into_iter().map(|c| (c, 0)).collect(),
                });
            }
        }
        let lu = SymbolicLu::new(n, edges);
        for row in &mut zone_rows {
            row.diag = lu.diag_slot(row.node);
            for (c, slot) in &mut row.off {
                *slot = lu.slot(row.node, *c).expect("pattern");
            }
        }

        let mut fixed = vec![0.0; lu.n_slots()];
        for (i, node) in base.nodes.iter().enumerate() {
            fixed[lu.diag_slot(i)] += node.capacity / dt;
        }
        let mut branch_slots = Vec::with_capacity(base.branches.len());
        let mut wind_branches = Vec::new();
        for (k, br) in base.branches.iter().enumerate() {
            let aa = lu.diag_slot(br.a);
            let nodes = match br.b {
                Terminal::Node(j) => Some((
                    lu.diag_slot(j),
                    lu.slot(br.a, j).expect("pattern"),
                    lu.slot(j, br.a).expect("pattern"),
                )),
                _ => None,
            };
            let s = BranchSlots { aa, nodes };
            if br.g.is_wind_dependent() {
                wind_branches.push(k);
            } else {
                add_branch(&mut fixed, &s, br.g.value(&base.physics, 0.0));
            }
            branch_slots.push(s);
        }

        let mut loops = Vec::new();
        for l in hifi_loops {
            let vols: Vec<usize> = l.volumes().collect();
            let slots = vols
                .iter()
                .enumerate()
                .map(|(i, &v)| (lu.diag_slot(v), (i > 0).then(|| lu.slot(v, vols[i - 1]).expect("pattern"))))
                .collect();
            let zi = base.zone_index[&l.zone];
            loops.push(LoopPlan {
                slots,
                first: vols[0],
                ret: l.return_node(),
                zone_node: base.zones[zi].node,
                setpoint: base.zones[zi].setpoint,
            });
        }

        if !weather.covers(t0, t0) {
            return Err(SimError::InputGap {
                what: "weather".into(),
                t: t0,
            });
        }
        let solar_rows = (0..weather.len())
            .map(|i| {
                let g = solar_gains(base, weather.sun(i), weather.i_dir[i], weather.i_diff[i]);
                g.node_sources(base).into_iter().filter(|&(_, w)| w != 0.0).collect()
            })
            .collect();

        let init = cfg.initial_temperature.unwrap_or_else(|| {
            let sp: f64 = base.zones.iter().map(|z| z.setpoint).sum();
            sp / base.zones.len().max(1) as f64
        });
        let n_loops = loops.len();
        let mut sim = Self {
            model,
            weather,
            inputs,
            cfg: cfg.clone(),
            dt,
            lu,
            values: fixed.clone(),
            fixed,
            branch_slots,
            wind_branches,
            loops,
            solar_rows,
            factor_key: None,
            response: Vec::new(),
            zone_rows,
            assembled: Vec::new(),
            clamped: Vec::new(),
            all_heated: true,
            fast_path: true,
            g_now: base.conductances(0.0),
            state: vec![init; n],
            t: t0,
            thermo_on: vec![false; n_loops],
            flows: vec![0.0; n_loops],
            supplies: vec![0.0; n_loops],
            q_zone: vec![0.0; base.zones.len()],
            ledger: EnergyLedger::default(),
            rhs: vec![0.0; n],
            x0: vec![0.0; n],
        };
        sim.update_loop_inputs(t0, t0)?;
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn set_state(&mut self, state: &[f64]) {
        self.state.copy_from_slice(state);
    }

    pub fn ledger(&self) -> &EnergyLedger {
        &self.ledger
    }

    /// Heat delivered to each zone (model zone order) over the last step, W.
    pub fn zone_heat(&self) -> &[f64] {
        &self.q_zone
    }

    /// Flow of each loop during the last step, kg/s.
    pub fn loop_flows(&self) -> &[f64] {
        &self.flows
    }

    pub fn loop_supplies(&self) -> &[f64] {
        &self.supplies
    }

    pub fn return_temperatures(&self) -> Vec<f64> {
        self.loops.iter().map(|l| self.state[l.ret]).collect()
    }

    /// Conductances in effect during the last step, W/K.
    pub fn conductances(&self) -> &[f64] {
        &self.g_now
    }

    pub fn model(&self) -> &ThermalModel {
        self.model.base()
    }

    fn heating_on(&self, t_mid: f64) -> bool {
        self.cfg.heating.contains(t_mid, self.cfg.year)
    }

    fn update_loop_inputs(&mut self, t_ctrl: f64, t_eval: f64) -> Result<(), SimError> {
        let ModelRef::HiFi(h) = self.model else {
            return Ok(());
        };
        let heating = self.heating_on(t_ctrl);
        let HiFiModel { loops, defaults, .. } = h;
        for (i, l) in loops.iter().enumerate() {
            let plan = &self.loops[i];
            let (flow, supply) = match l.ctrl {
                1 => {
                    let (on, f) = thermostat_flow(
                        defaults.hysteresis,
                        defaults.nominal_flow,
                        self.state[plan.zone_node],
                        plan.setpoint,
                        self.thermo_on[i],
                    );
                    self.thermo_on[i] = on && heating;
                    let sup = self
                        .inputs
                        .loops
                        .supply_at(l.id, t_eval)
                        .unwrap_or(defaults.default_supply);
                    (if heating { f } else { 0.0 }, sup)
                }
                _ => {
                    let flow = self.inputs.loops.flow_at(l.id, t_eval).ok_or(SimError::MissingInput(l.id))?;
                    let sup = self.inputs.loops.supply_at(l.id, t_eval).ok_or(SimError::MissingInput(l.id))?;
                    (flow, sup)
                }
            };
            self.flows[i] = flow;
            self.supplies[i] = supply;
        }
        Ok(())
    }

    fn factorize(&mut self, wind: f64) -> Result<(), SimError> {
        let base = self.model.base();
        self.values.copy_from_slice(&self.fixed);
        for &k in &self.wind_branches {
            let g = base.branches[k].g.value(&base.physics, wind);
            self.g_now[k] = g;
            add_branch(&mut self.values, &self.branch_slots[k], g);
        }
        for (plan, &m) in self.loops.iter().zip(&self.flows) {
            let mc = m * CP_WATER;
            for &(d, up) in &plan.slots {
                self.values[d] += mc;
                if let Some(u) = up {
                    self.values[u] -= mc;
                }
            }
        }
        let singular = |p: crate::sparse::SingularPivot| SimError::Singular { index: p.index, value: p.value };
        if !self.zone_rows.is_empty() {
            self.assembled.clone_from(&self.values);
            self.clamped.clone_from(&self.values);
            for row in &self.zone_rows {
                self.clamped[row.diag] = 1.0;
                for &(_, s) in &row.off {
                    self.clamped[s] = 0.0;
                }
            }
            self.lu.factor(&mut self.clamped).map_err(singular)?;
        }
        self.lu.factor(&mut self.values).map_err(singular)?;
        self.response.clear();
        Ok(())
    }

    fn ensure_responses(&mut self) {
        if !self.response.is_empty() {
            return;
        }
        let n = self.model.base().n_nodes();
        for row in &self.zone_rows {
            let mut e = vec![0.0; n];
            e[row.node] = 1.0;
            self.lu.solve(&self.values, &mut e);
            self.response.push(e);
        }
    }

    /// Solves with every zone held at its setpoint into `x0`. Returns false
    /// when some load falls outside `[0, Q_max]`.
    fn solve_all_heated(&mut self) -> bool {
        let base = self.model.base();
        let q_max = base.physics.q_max.unwrap_or(f64::INFINITY);
        self.x0.copy_from_slice(&self.rhs);
        for (row, z) in self.zone_rows.iter().zip(&base.zones) {
            self.x0[row.node] = z.setpoint;
        }
        self.lu.solve(&self.clamped, &mut self.x0);
        for (i, row) in self.zone_rows.iter().enumerate() {
            let x = &self.x0;
            let mut q = self.assembled[row.diag] * x[row.node] - self.rhs[row.node];
            for &(c, s) in &row.off {
                q += self.assembled[s] * x[c];
            }
            if !(0.0..=q_max).contains(&q) {
                return false;
            }
            self.q_zone[i] = q;
        }
        true
    }

    /// Advances one inner step.
    pub fn step(&mut self) -> Result<(), SimError> {
        let dt = self.dt;
        let t1 = self.t + dt;
        let t_mid = self.t + 0.5 * dt;
        if !self.weather.covers(self.t, t1) {
            return Err(SimError::InputGap {
                what: "weather".into(),
                t: t1,
            });
        }
        if !self.loops.is_empty() && !self.inputs.loops.covers(self.t, t1) && self.needs_loop_series() {
            return Err(SimError::InputGap {
                what: "loop inputs".into(),
                t: t1,
            });
        }
        self.update_loop_inputs(self.t, t1)?;

        let w = self.weather;
        let k = w.grid.interval(t_mid);
        let key = (if self.wind_branches.is_empty() { 0 } else { k }, self.flows.clone());
        if self.factor_key.as_ref() != Some(&key) {
            let wind = w.wind[k];
            self.factorize(wind)?;
            self.factor_key = Some(key);
        }

        let base = self.model.base();
        let physics = &base.physics;
        let t_amb = interp(&w.grid, &w.t_amb, t1);
        let t_ground = physics.ground_temperature;

        // Right-hand side.
        let rhs = &mut self.rhs;
        for (i, node) in base.nodes.iter().enumerate() {
            rhs[i] = node.capacity / dt * self.state[i];
        }
        for (br, &g) in base.branches.iter().zip(&self.g_now) {
            match br.b {
                Terminal::Ambient => rhs[br.a] += g * t_amb,
                Terminal::Ground => rhs[br.a] += g * t_ground,
                Terminal::Node(_) => {}
            }
        }
        let (row, wgt) = w.grid.locate(t1);
        let mut gains_total = 0.0;
        for &(node, q) in &self.solar_rows[row] {
            rhs[node] += (1.0 - wgt) * q;
            gains_total += (1.0 - wgt) * q;
        }
        if wgt > 0.0 {
            for &(node, q) in &self.solar_rows[row + 1] {
                rhs[node] += wgt * q;
                gains_total += wgt * q;
            }
        }
        for z in &base.zones {
            let q = self.inputs.internal_gain(z.id, t1);
            rhs[z.node] += q;
            gains_total += q;
        }
        for (plan, (&m, &ts)) in self.loops.iter().zip(self.flows.iter().zip(&self.supplies)) {
            rhs[plan.first] += m * CP_WATER * ts;
        }

        // Ideal loads.
        let lofi = matches!(self.model, ModelRef::LoFi(_));
        let heating = lofi && self.heating_on(t_mid);
        if lofi {
            self.q_zone.iter_mut().for_each(|q| *q = 0.0);
        }
        let held = heating && self.fast_path && self.all_heated && self.solve_all_heated();
        if !held {
            self.x0.copy_from_slice(&self.rhs);
            self.lu.solve(&self.values, &mut self.x0);
            if heating {
                self.ensure_responses();
                let q = self.ideal_loads();
                for (j, &qj) in q.iter().enumerate() {
                    if qj != 0.0 {
                        for (x, r) in self.x0.iter_mut().zip(&self.response[j]) {
                            *x += qj * r;
                        }
                    }
                }
                self.q_zone.copy_from_slice(&q);
                let q_max = self.model.base().physics.q_max.unwrap_or(f64::INFINITY);
                self.all_heated = q.iter().all(|&v| v > 0.0 && v < q_max);
            }
        }
        let heater_total: f64 = if lofi { self.q_zone.iter().sum() } else { 0.0 };
        let base = self.model.base();
        let x = &self.x0;

        for (i, &v) in x.iter().enumerate() {
            if !v.is_finite() || v.abs() > self.cfg.divergence_limit {
                return Err(SimError::Divergence {
                    t: t1,
                    node: i,
                    value: v,
                });
            }
        }

        // Energy ledger, fluxes evaluated at the new state.
        let mut boundary = 0.0;
        let mut gross = gains_total.abs() + heater_total.abs();
        for (br, &g) in base.branches.iter().zip(&self.g_now) {
            let tb = match br.b {
                Terminal::Ambient => t_amb,
                Terminal::Ground => t_ground,
                Terminal::Node(_) => continue,
            };
            let f = g * (tb - x[br.a]);
            boundary += f;
            gross += f.abs();
        }
        let mut hydronic = 0.0;
        for (plan, (&m, &ts)) in self.loops.iter().zip(self.flows.iter().zip(&self.supplies)) {
            let f = m * CP_WATER * (ts - x[plan.ret]);
            hydronic += f;
            gross += f.abs();
        }
        let stored: f64 = base
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| n.capacity * (x[i] - self.state[i]))
            .sum();
        let l = &mut self.ledger;
        l.boundary += boundary * dt;
        l.gains += gains_total * dt;
        l.heater += heater_total * dt;
        l.hydronic += hydronic * dt;
        l.stored += stored;
        l.gross += gross * dt;

        if let ModelRef::HiFi(h) = self.model {
            self.q_zone.iter_mut().for_each(|q| *q = 0.0);
            for lp in &h.loops {
                for e in &lp.emitters {
                    let zi = base.zone_index[&e.zone];
                    for &bi in &e.output_branches {
                        let br = &base.branches[bi];
                        let Terminal::Node(j) = br.b else { continue };
                        self.q_zone[zi] += self.g_now[bi] * (x[br.a] - x[j]);
                    }
                }
            }
        }

        std::mem::swap(&mut self.state, &mut self.x0);
        self.t = t1;
        Ok(())
    }

    fn needs_loop_series(&self) -> bool {
        match self.model {
            ModelRef::HiFi(h) => h.loops.iter().any(|l| l.ctrl != 1 || self.inputs.loops.supply.contains_key(&l.id)),
            ModelRef::LoFi(_) => false,
        }
    }

    fn ideal_loads(&self) -> Vec<f64> {
        let base = self.model.base();
        let m = base.zones.len();
        let q_max = base.physics.q_max.unwrap_or(f64::INFINITY);
        let x0: Vec<f64> = base.zones.iter().map(|z| self.x0[z.node]).collect();
        let sp: Vec<f64> = base.zones.iter().map(|z| z.setpoint).collect();
        let r = |i: usize, j: usize| self.response[j][base.zones[i].node];

        let mut bound: Vec<Bound> = (0..m)
            .map(|i| if x0[i] < sp[i] { Bound::Free } else { Bound::Zero })
            .collect();
        let mut q = vec![0.0; m];
        for _ in 0..4 * m + 8 {
            let free: Vec<usize> = (0..m).filter(|&i| bound[i] == Bound::Free).collect();
            for i in 0..m {
                q[i] = match bound[i] {
                    Bound::Zero => 0.0,
                    Bound::Capped => q_max,
                    Bound::Free => 0.0,
                };
            }
            if !free.is_empty() {
                let a: Vec<Vec<f64>> = free.iter().map(|&i| free.iter().map(|&j| r(i, j)).collect()).collect();
                let b: Vec<f64> = free
                    .iter()
                    .map(|&i| {
                        let fixed: f64 = (0..m).filter(|&j| bound[j] != Bound::Free).map(|j| r(i, j) * q[j]).sum();
                        sp[i] - x0[i] - fixed
                    })
                    .collect();
                let sol = if free.len() == 1 { vec![b[0] / a[0][0]] } else { dense_solve(a, b) };
                for (&i, &v) in free.iter().zip(&sol) {
                    q[i] = v;
                }
            }
            let mut changed = false;
            for &i in &free {
                if q[i] < 0.0 {
                    bound[i] = Bound::Zero;
                    changed = true;
                } else if q[i] > q_max {
                    bound[i] = Bound::Capped;
                    changed = true;
                }
            }
            if !changed {
                for i in 0..m {
                    let t: f64 = x0[i] + (0..m).map(|j| r(i, j) * q[j]).sum::<f64>();
                    match bound[i] {
                        Bound::Zero if t < sp[i] - 1e-9 => {
                            bound[i] = Bound::Free;
                            changed = true;
                        }
                        Bound::Capped if t > sp[i] + 1e-9 => {
                            bound[i] = Bound::Free;
                            changed = true;
                        }
                        _ => {}
                    }
                }
            }
            if !changed {
                break;
            }
        }
        for v in &mut q {
            *v = v.clamp(0.0, q_max);
        }
        q
    }
}

fn add_branch(values: &mut [f64], s: &BranchSlots, g: f64) {
    values[s.aa] += g;
    if let Some((bb, ab, ba)) = s.nodes {
        values[bb] += g;
        values[ab] -= g;
        values[ba] -= g;
    }
}
