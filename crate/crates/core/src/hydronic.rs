//! Hydronic emitters on top of a compiled network: underfloor pipe
//! volumes embedded in slabs, radiators, loop inputs and thermostats.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::{interp, SeriesError, Table, UniformGrid};
use crate::thermal::{
    compile_lofi, Branch, BranchKind, CompileError, Conductance, DiscretizationPolicy, Node, NodeRole, PhysicsConfig,
    Terminal, ThermalModel,
};
use crate::topology::{BuildingTopology, HeatType, LoopId, Orientation, ZoneId};

/// Water heat capacity, J/(kg·K).
pub const CP_WATER: f64 = 4186.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HydronicDefaults {
    /// Pipe-to-slab conductance per metre of pipe, W/(m·K).
    pub u0: f64,
    /// Water per metre of pipe, kg/m.
    pub water_per_m: f64,
    /// Serial volumes per underfloor emitter.
    pub n_volumes: usize,
    /// Slab node hosting the pipes, counted from the zone side (0 is the
    /// surface node).
    pub embed_node: usize,
    pub dis_pip: f64,
    pub h_int: f64,
    pub radiator_ua: f64,
    pub radiator_water: f64,
    /// Share of radiator output going to zone air; the rest goes to the
    /// surface behind it.
    pub convective_fraction: f64,
    pub nominal_flow: f64,
    /// Supply used by thermostat loops without a supply series, °C.
    pub default_supply: f64,
    /// Full hysteresis band, K.
    pub hysteresis: f64,
}

impl Default for HydronicDefaults {
    fn default() -> Self {
        Self {
            u0: 5.0,
            water_per_m: 0.113,
            n_volumes: 5,
            embed_node: 1,
            dis_pip: 0.15,
            h_int: 8.0,
            radiator_ua: 30.0,
            radiator_water: 10.0,
            convective_fraction: 0.7,
            nominal_flow: 0.05,
            default_supply: 35.0,
            hysteresis: 0.5,
        }
    }
}

/// The calibrated parameters: one global pipe spacing and a slab-to-air
/// coefficient per loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HydronicParams {
    pub dis_pip: f64,
    pub h_int: BTreeMap<LoopId, f64>,
}

impl HydronicParams {
    pub fn uniform(dis_pip: f64, h_int: f64, loops: &[LoopId]) -> Self {
        Self {
            dis_pip,
            h_int: loops.iter().map(|&l| (l, h_int)).collect(),
        }
    }

    pub fn h(&self, id: LoopId, fallback: f64) -> f64 {
        self.h_int.get(&id).copied().unwrap_or(fallback)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Emitter {
    pub zone: ZoneId,
    pub ori: Orientation,
    pub kind: HeatType,
    /// m; zero for radiators.
    pub pipe_length: f64,
    /// Water-to-slab (or water-to-room) conductance, W/K.
    pub ua: f64,
    pub volumes: Vec<usize>,
    pub slab: Option<usize>,
    /// Branches whose flow counts as heat delivered to the zone.
    pub output_branches: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HydronicLoop {
    pub id: LoopId,
    /// Zone of the first emitter.
    pub zone: ZoneId,
    pub ctrl: u32,
    pub dis_pip: f64,
    pub h_int: f64,
    pub emitters: Vec<Emitter>,
}

impl HydronicLoop {
    /// Water volumes in flow order, supply to return.
    pub fn volumes(&self) -> impl Iterator<Item = usize> + '_ {
        self.emitters.iter().flat_map(|e| e.volumes.iter().copied())
    }

    pub fn return_node(&self) -> usize {
        *self
            .emitters
            .last()
            .and_then(|e| e.volumes.last())
            .expect("loop has at least one volume")
    }
}

/// A network with hydronic emitters. `base` already contains the water
/// nodes and their branches; advection is applied by the engine.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HiFiModel {
    pub base: ThermalModel,
    pub loops: Vec<HydronicLoop>,
    pub defaults: HydronicDefaults,
}

impl HiFiModel {
    pub fn loop_ids(&self) -> Vec<LoopId> {
        self.loops.iter().map(|l| l.id).collect()
    }

    pub fn find_loop(&self, id: LoopId) -> Option<&HydronicLoop> {
        self.loops.iter().find(|l| l.id == id)
    }
}

pub fn compile_hifi(
    topo: &BuildingTopology,
    disc: &DiscretizationPolicy,
    physics: &PhysicsConfig,
    defaults: &HydronicDefaults,
    params: &HydronicParams,
) -> Result<HiFiModel, CompileError> {
    let mut base = compile_lofi(topo, disc, physics)?;
    let ids = topo.loop_ids();
    if ids.is_empty() {
        return Err(CompileError::NoLoops);
    }
    if !(params.dis_pip > 0.0 && params.dis_pip.is_finite()) {
        return Err(CompileError::BadParameter(format!("dis_pip = {}", params.dis_pip)));
    }
    if defaults.n_volumes == 0 {
        return Err(CompileError::BadParameter("n_volumes = 0".into()));
    }
    let mut loops = Vec::new();
    for id in ids {
        let mut faces: Vec<_> = topo.faces.iter().filter(|f| f.heat_loop == id).collect();
        faces.sort_by_key(|f| (f.heat_order, f.key()));
        let h_int = params.h(id, defaults.h_int);
        if !(h_int > 0.0 && h_int.is_finite()) {
            return Err(CompileError::BadParameter(format!("h_int[{id}] = {h_int}")));
        }
        let mut emitters = Vec::new();
        for f in &faces {
            let chain = base.chain(f.z_pri, f.ori).cloned();
            let air = base.air_node(f.z_pri).expect("zone compiled");
            match f.heat_type {
                HeatType::Underfloor | HeatType::None => {
                    let chain = chain.ok_or(CompileError::HeatedWithoutArea { zone: f.z_pri, ori: f.ori })?;
                    let area = chain.area;
                    base.branches[chain.inner_film].g =
                        Conductance::Fixed(1.0 / ((chain.inner_half_resistance + 1.0 / h_int) / area));
                    let k = chain.nodes.len();
                    let slab = chain.nodes[k - 1 - defaults.embed_node.min(k - 1)];
                    base.nodes[slab].role = NodeRole::Slab { zone: f.z_pri, ori: f.ori };
                    let length = area / params.dis_pip;
                    let ua = defaults.u0 * length;
                    let n = defaults.n_volumes;
                    let cap = defaults.water_per_m * length / n as f64 * CP_WATER;
                    let mut volumes = Vec::with_capacity(n);
                    for index in 0..n {
                        let v = push_node(
                            &mut base,
                            NodeRole::PipeVolume {
                                zone: f.z_pri,
                                ori: f.ori,
                                heat_loop: id,
                                index,
                            },
                            cap,
                        );
                        push_branch(&mut base, v, Terminal::Node(slab), ua / n as f64, BranchKind::PipeWall);
                        volumes.push(v);
                    }
                    emitters.push(Emitter {
                        zone: f.z_pri,
                        ori: f.ori,
                        kind: HeatType::Underfloor,
                        pipe_length: length,
                        ua,
                        volumes,
                        slab: Some(slab),
                        output_branches: vec![chain.inner_film],
                    });
                }
                HeatType::Radiator => {
                    let v = push_node(
                        &mut base,
                        NodeRole::Emitter {
                            zone: f.z_pri,
                            ori: f.ori,
                            heat_loop: id,
                        },
                        defaults.radiator_water * CP_WATER,
                    );
                    let ua = defaults.radiator_ua;
                    let surface = chain.filter(|c| c.zone == f.z_pri).and_then(|c| c.nodes.last().copied());
                    let mut out = Vec::new();
                    match surface {
                        Some(s) => {
                            let conv = defaults.convective_fraction;
                            out.push(push_branch(&mut base, v, Terminal::Node(air), ua * conv, BranchKind::EmitterOutput));
                            out.push(push_branch(
                                &mut base,
                                v,
                                Terminal::Node(s),
                                ua * (1.0 - conv),
                                BranchKind::EmitterOutput,
                            ));
                        }
                        None => out.push(push_branch(&mut base, v, Terminal::Node(air), ua, BranchKind::EmitterOutput)),
                    }
                    emitters.push(Emitter {
                        zone: f.z_pri,
                        ori: f.ori,
                        kind: HeatType::Radiator,
                        pipe_length: 0.0,
                        ua,
                        volumes: vec![v],
                        slab: None,
                        output_branches: out,
                    });
                }
            }
        }
        loops.push(HydronicLoop {
            id,
            zone: faces[0].z_pri,
            ctrl: faces[0].heat_ctrl,
            dis_pip: params.dis_pip,
            h_int,
            emitters,
        });
    }
    Ok(HiFiModel {
        base,
        loops,
        defaults: defaults.clone(),
    })
}

fn push_node(m: &mut ThermalModel, role: NodeRole, capacity: f64) -> usize {
    m.nodes.push(Node { role, capacity });
    m.nodes.len() - 1
}

fn push_branch(m: &mut ThermalModel, a: usize, b: Terminal, g: f64, kind: BranchKind) -> usize {
    m.branches.push(Branch {
        a,
        b,
        g: Conductance::Fixed(g),
        kind,
    });
    m.branches.len() - 1
}

#[derive(Debug, Error, PartialEq)]
#[error("explicit step {dt} s exceeds the stability limit {limit} s")]
pub struct StabilityError {
    pub dt: f64,
    pub limit: f64,
}

/// Serial well-mixed volumes exchanging heat with a slab.
#[derive(Clone, Debug, PartialEq)]
pub struct PipeChain {
    /// J/K per volume.
    pub capacities: Vec<f64>,
    /// Volume-to-slab conductance, W/K per volume.
    pub ua: Vec<f64>,
}

impl PipeChain {
    pub fn uniform(n: usize, capacity: f64, ua_total: f64) -> Self {
        Self {
            capacities: vec![capacity / n as f64; n],
            ua: vec![ua_total / n as f64; n],
        }
    }

    /// Largest stable explicit step at flow `mdot`.
    pub fn explicit_limit(&self, mdot: f64) -> f64 {
        self.capacities
            .iter()
            .zip(&self.ua)
            .map(|(&c, &u)| c / (mdot * CP_WATER + u))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdvectScheme {
    /// Upwind implicit, swept from the supply end.
    Implicit,
    Explicit,
}

/// Advances the water volumes one step with slab temperatures held, and
/// returns the return temperature.
pub fn advect_step(
    chain: &PipeChain,
    mdot: f64,
    t_sup: f64,
    dt: f64,
    slab: &[f64],
    temps: &mut [f64],
    scheme: AdvectScheme,
) -> Result<f64, StabilityError> {
    let mc = mdot.max(0.0) * CP_WATER;
    match scheme {
        AdvectScheme::Implicit => {
            let mut upstream = t_sup;
            for i in 0..temps.len() {
                let c = chain.capacities[i] / dt;
                let u = chain.ua[i];
                temps[i] = (c * temps[i] + mc * upstream + u * slab[i]) / (c + mc + u);
                upstream = temps[i];
            }
        }
        AdvectScheme::Explicit => {
            let limit = chain.explicit_limit(mdot);
            if dt > limit {
                return Err(StabilityError { dt, limit });
            }
            let mut upstream = t_sup;
            for i in 0..temps.len() {
                let old = temps[i];
                temps[i] += dt / chain.capacities[i] * (mc * (upstream - old) + chain.ua[i] * (slab[i] - old));
                upstream = old;
            }
        }
    }
    Ok(*temps.last().unwrap_or(&t_sup))
}

/// Steady return temperature of `n` equal mixed tanks over a slab held at
/// `t_slab`.
pub fn serial_tank_return(mdot: f64, ua_total: f64, n: usize, t_sup: f64, t_slab: f64) -> f64 {
    let r = 1.0 / (1.0 + ua_total / (n as f64 * mdot * CP_WATER));
    t_slab + (t_sup - t_slab) * r.powi(n as i32)
}

/// On/off flow with hysteresis around the setpoint. Returns the new on
/// state and the flow command.
pub fn thermostat_flow(hysteresis: f64, nominal: f64, t_zone: f64, setpoint: f64, was_on: bool) -> (bool, f64) {
    let half = hysteresis / 2.0;
    let on = if t_zone < setpoint - half {
        true
    } else if t_zone > setpoint + half {
        false
    } else {
        was_on
    };
    (on, if on { nominal } else { 0.0 })
}

/// Measured or scheduled supply temperature and flow per loop.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoopInputs {
    pub grid: Option<UniformGrid>,
    pub supply: BTreeMap<LoopId, Vec<f64>>,
    pub flow: BTreeMap<LoopId, Vec<f64>>,
}

impl LoopInputs {
    /// Reads `Tsup_<id>_C` (or a shared `Tsup_C`) and `mdot_<id>_kgs`
    /// columns for the given loops. Missing columns leave the loop
    /// unprescribed.
    pub fn from_table(table: &Table, loops: &[LoopId]) -> Result<Self, SeriesError> {
        let shared = table.columns.get("Tsup_C");
        let mut inputs = LoopInputs {
            grid: Some(table.grid),
            ..Default::default()
        };
        for &id in loops {
            if let Some(s) = table.columns.get(&format!("Tsup_{id}_C")).or(shared) {
                inputs.supply.insert(id, s.clone());
            }
            if let Some(m) = table.columns.get(&format!("mdot_{id}_kgs")) {
                if let Some(i) = m.iter().position(|&v| v < 0.0) {
                    return Err(SeriesError::Cell {
                        row: i + 2,
                        column: format!("mdot_{id}_kgs"),
                        message: "negative mass flow".into(),
                    });
                }
                inputs.flow.insert(id, m.clone());
            }
        }
        Ok(inputs)
    }

    pub fn supply_at(&self, id: LoopId, t: f64) -> Option<f64> {
        Some(interp(self.grid.as_ref()?, self.supply.get(&id)?, t))
    }

    pub fn flow_at(&self, id: LoopId, t: f64) -> Option<f64> {
        Some(interp(self.grid.as_ref()?, self.flow.get(&id)?, t).max(0.0))
    }

    pub fn covers(&self, t0: f64, t1: f64) -> bool {
        self.grid.is_none_or(|g| g.covers(t0, t1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{add_floor_loops, row_building, Constructions};

    fn model(dis: f64) -> HiFiModel {
        let mut topo = row_building(2, &Constructions::default());
        add_floor_loops(&mut topo, 0);
        let p = HydronicParams::uniform(dis, 6.0, &topo.loop_ids());
        compile_hifi(
            &topo,
            &DiscretizationPolicy::default(),
            &PhysicsConfig::default(),
            &HydronicDefaults::default(),
            &p,
        )
        .unwrap()
    }

    #[test]
    fn pipe_length_follows_spacing() {
        let m = model(0.15);
        let e = &m.loops[0].emitters[0];
        // 12 m × 8 m floor.
        assert!((e.pipe_length - 96.0 / 0.15).abs() < 1e-9);
        let half = model(0.075);
        let e2 = &half.loops[0].emitters[0];
        assert!((e2.pipe_length - 2.0 * e.pipe_length).abs() < 1e-9);
        assert!((e2.ua - 2.0 * e.ua).abs() < 1e-9);
        assert_eq!(e.volumes.len(), 5);
    }

    #[test]
    fn zones_without_loops_have_no_emitters() {
        let mut topo = row_building(3, &Constructions::default());
        add_floor_loops(&mut topo, 0);
        topo.face_mut(102, Orientation::Down).unwrap().heat_type = HeatType::None;
        let f = topo.face_mut(102, Orientation::Down).unwrap();
        f.heat_loop = 0;
        f.heat_order = 0;
        f.split = true;
        let p = HydronicParams::uniform(0.15, 6.0, &topo.loop_ids());
        let m = compile_hifi(
            &topo,
            &DiscretizationPolicy::default(),
            &PhysicsConfig::default(),
            &HydronicDefaults::default(),
            &p,
        )
        .unwrap();
        assert!(m.loops.iter().all(|l| l.zone != 102));
        assert!(!m.base.nodes.iter().any(|n| matches!(n.role, NodeRole::PipeVolume { zone: 102, .. })));
    }

    #[test]
    fn ufh_on_split_face_is_rejected() {
        let mut topo = row_building(1, &Constructions::default());
        add_floor_loops(&mut topo, 0);
        topo.face_mut(101, Orientation::Down).unwrap().split = true;
        let p = HydronicParams::uniform(0.15, 6.0, &[1]);
        let r = compile_hifi(
            &topo,
            &DiscretizationPolicy::default(),
            &PhysicsConfig::default(),
            &HydronicDefaults::default(),
            &p,
        );
        assert!(r.is_err());
    }

    #[test]
    fn zero_flow_equilibrium_is_fixed() {
        let chain = PipeChain::uniform(5, 5000.0, 50.0);
        let mut t = vec![25.0; 5];
        let ret = advect_step(&chain, 0.0, 40.0, 60.0, &[25.0; 5], &mut t, AdvectScheme::Implicit).unwrap();
        assert_eq!(ret, 25.0);
        assert!(t.iter().all(|&v| v == 25.0));
    }

    #[test]
    fn pure_transport_reaches_supply() {
        let chain = PipeChain::uniform(5, 5000.0, 0.0);
        let mut t = vec![20.0; 5];
        let mut first = None;
        for _ in 0..2000 {
            let r = advect_step(&chain, 0.05, 35.0, 1.0, &[0.0; 5], &mut t, AdvectScheme::Implicit).unwrap();
            first.get_or_insert(r);
        }
        assert!(first.unwrap() < 21.0);
        assert!((t[4] - 35.0).abs() < 1e-9);
    }

    #[test]
    fn explicit_limit_is_enforced() {
        let chain = PipeChain::uniform(5, 5000.0, 50.0);
        let limit = chain.explicit_limit(0.05);
        let mut t = vec![20.0; 5];
        assert!(advect_step(&chain, 0.05, 35.0, limit * 1.01, &[20.0; 5], &mut t, AdvectScheme::Explicit).is_err());
        assert!(advect_step(&chain, 0.05, 35.0, limit, &[20.0; 5], &mut t, AdvectScheme::Explicit).is_ok());
    }

    #[test]
    fn thermostat_hysteresis() {
        assert_eq!(thermostat_flow(0.5, 0.05, 20.0, 21.0, false), (true, 0.05));
        assert_eq!(thermostat_flow(0.5, 0.05, 22.0, 21.0, true), (false, 0.0));
        assert_eq!(thermostat_flow(0.5, 0.05, 21.1, 21.0, true), (true, 0.05));
        assert_eq!(thermostat_flow(0.5, 0.05, 20.9, 21.0, false), (false, 0.0));
    }

    #[test]
    fn loop_input_columns() {
        let t = Table::read("time_s,Tsup_C,mdot_1_kgs,Tsup_2_C\n0,30,0.1,40\n60,32,0.2,40\n".as_bytes()).unwrap();
        let i = LoopInputs::from_table(&t, &[1, 2, 3]).unwrap();
        assert_eq!(i.supply_at(1, 30.0), Some(31.0));
        assert_eq!(i.supply_at(2, 30.0), Some(40.0));
        assert!((i.flow_at(1, 30.0).unwrap() - 0.15).abs() < 1e-12);
        assert_eq!(i.flow_at(3, 0.0), None);
        let bad = Table::read("time_s,mdot_1_kgs\n0,-1\n60,0\n".as_bytes()).unwrap();
        assert!(LoopInputs::from_table(&bad, &[1]).is_err());
    }
}
