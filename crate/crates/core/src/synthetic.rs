//! Synthetic buildings: grid layouts, zoning variants of one envelope,
//! typology templates and randomized topologies for property tests.
//!
//! None of these are reference buildings; the constructions are generic
//! textbook values.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::thermal::PhysicsConfig;
use crate::topology::{
    mirror_fill, BoundaryType, BuildingTopology, FaceRecord, HeatType, Layer, LayerStack, Orientation, ZoneId, ZoneSpec,
    EXTERIOR,
};

/// Layer stacks (outside-to-inside) used when generating buildings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constructions {
    pub exterior_wall: Vec<Layer>,
    pub roof: Vec<Layer>,
    pub ground_floor: Vec<Layer>,
    pub exterior_floor: Vec<Layer>,
    pub internal_wall: Vec<Layer>,
    /// Seen from the upper zone, i.e. lower-zone side first.
    pub internal_floor: Vec<Layer>,
    pub glazing: Vec<Layer>,
    pub frame: Vec<Layer>,
    /// Glazed fraction of south-facing exterior walls.
    pub south_window_fraction: f64,
    /// Glazed fraction of the other exterior walls.
    pub window_fraction: f64,
    /// Frame area as a fraction of the glazing area.
    pub frame_fraction: f64,
    pub setpoint: f64,
}

impl Default for Constructions {
    fn default() -> Self {
        let insulation = |d| Layer::new(0.04, d, 30.0, 1400.0);
        Self {
            exterior_wall: vec![insulation(0.12), Layer::new(0.9, 0.2, 1800.0, 900.0)],
            roof: vec![insulation(0.2), Layer::new(1.6, 0.15, 2300.0, 1000.0)],
            ground_floor: vec![Layer::new(0.035, 0.1, 30.0, 1400.0), Layer::new(1.4, 0.06, 2000.0, 1000.0)],
            exterior_floor: vec![insulation(0.15), Layer::new(1.6, 0.16, 2300.0, 1000.0)],
            internal_wall: vec![Layer::new(0.5, 0.12, 1200.0, 1000.0)],
            internal_floor: vec![Layer::new(1.6, 0.16, 2300.0, 1000.0), Layer::new(1.4, 0.06, 2000.0, 1000.0)],
            glazing: vec![Layer::new(0.04, 0.024, 2500.0, 840.0)],
            frame: vec![Layer::new(0.13, 0.07, 700.0, 1600.0)],
            south_window_fraction: 0.25,
            window_fraction: 0.1,
            frame_fraction: 0.2,
            setpoint: 21.0,
        }
    }
}

impl Constructions {
    /// Walls without glazing.
    pub fn opaque() -> Self {
        Self {
            south_window_fraction: 0.0,
            window_fraction: 0.0,
            ..Self::default()
        }
    }
}

/// Zone id for a grid cell: `(floor + 1) * 100 + y * nx + x + 1`.
pub fn grid_zone_id(nx: usize, x: usize, y: usize, floor: usize) -> ZoneId {
    ((floor + 1) * 100 + y * nx + x + 1) as ZoneId
}

fn exterior_face(zone: &ZoneSpec, ori: Orientation, top: bool, cons: &Constructions) -> FaceRecord {
    let area = zone.face_area(ori);
    match ori {
        Orientation::Up => {
            let mut f = FaceRecord::new(zone.id, ori, EXTERIOR, BoundaryType::Opaque);
            f.opeq = LayerStack::new(area, if top { cons.roof.clone() } else { cons.exterior_floor.iter().rev().copied().collect() });
            f
        }
        Orientation::Down => {
            let ground = zone.floor == 0;
            let typ = if ground { BoundaryType::Ground } else { BoundaryType::Opaque };
            let mut f = FaceRecord::new(zone.id, ori, EXTERIOR, typ);
            f.opeq = LayerStack::new(area, if ground { cons.ground_floor.clone() } else { cons.exterior_floor.clone() });
            f
        }
        _ => {
            let frac = if ori == Orientation::South {
                cons.south_window_fraction
            } else {
                cons.window_fraction
            };
            let gla = area * frac;
            let fra = gla * cons.frame_fraction;
            let typ = if gla > 0.0 { BoundaryType::Window } else { BoundaryType::Opaque };
            let mut f = FaceRecord::new(zone.id, ori, EXTERIOR, typ);
            f.opeq = LayerStack::new(area - gla - fra, cons.exterior_wall.clone());
            if gla > 0.0 {
                f.gla = LayerStack::new(gla, cons.glazing.clone());
                f.fra = LayerStack::new(fra, cons.frame.clone());
            }
            f
        }
    }
}

fn internal_face(zone: &ZoneSpec, ori: Orientation, adj: ZoneId, cons: &Constructions) -> FaceRecord {
    let area = zone.face_area(ori);
    let mut f = FaceRecord::new(zone.id, ori, adj, BoundaryType::Opaque);
    f.opeq = match ori {
        Orientation::Down => LayerStack::new(area, cons.internal_floor.clone()),
        Orientation::Up => LayerStack::new(area, cons.internal_floor.iter().rev().copied().collect()),
        Orientation::North | Orientation::East => LayerStack::new(area, cons.internal_wall.clone()),
        _ => LayerStack::new(area, cons.internal_wall.iter().rev().copied().collect()),
    };
    f
}

/// Builds a complete topology over the occupied cells of an
/// `nx × ny × floors` grid with uniform cell size.
pub fn grid_building(
    nx: usize,
    ny: usize,
    floors: usize,
    cell: (f64, f64, f64),
    occupied: impl Fn(usize, usize, usize) -> bool,
    cons: &Constructions,
) -> BuildingTopology {
    let mut zones = Vec::new();
    let mut ids = BTreeMap::new();
    for f in 0..floors {
        for y in 0..ny {
            for x in 0..nx {
                if occupied(x, y, f) {
                    let id = grid_zone_id(nx, x, y, f);
                    ids.insert((x as i64, y as i64, f as i64), id);
                    zones.push(ZoneSpec::new(id, (x as i32, y as i32, f as u32), cell, cons.setpoint));
                }
            }
        }
    }
    let top_floor = |z: &ZoneSpec| !ids.contains_key(&(i64::from(z.x), i64::from(z.y), i64::from(z.floor) + 1));
    let mut faces = Vec::new();
    for z in &zones {
        for ori in Orientation::ALL {
            let (x, y, f) = z.cell();
            let (dx, dy, df) = ori.grid_offset();
            match ids.get(&(x + dx, y + dy, f + df)) {
                Some(&adj) => faces.push(internal_face(z, ori, adj, cons)),
                None => faces.push(exterior_face(z, ori, top_floor(z), cons)),
            }
        }
    }
    BuildingTopology { azi_s: 0.0, zones, faces }
}

/// One storey, `n` zones in a row along x, total footprint 24 m × 8 m,
/// 3 m high. Every zoning shares the same exterior envelope.
pub fn row_building(n: usize, cons: &Constructions) -> BuildingTopology {
    let n = n.max(1);
    grid_building(n, 1, 1, (24.0 / n as f64, 8.0, 3.0), |_, _, _| true, cons)
}

/// Puts one underfloor loop (ids 1, 2, ...) in the ground floor of every
/// ground-floor zone. `ctrl` sets `heat_ctrl` on each emitter.
pub fn add_floor_loops(topo: &mut BuildingTopology, ctrl: u32) {
    let mut ground: Vec<ZoneId> = topo.zones.iter().filter(|z| z.floor == 0).map(|z| z.id).collect();
    ground.sort_unstable();
    for (i, id) in ground.into_iter().enumerate() {
        if let Some(f) = topo.face_mut(id, Orientation::Down) {
            f.heat_type = HeatType::Underfloor;
            f.heat_loop = i as u32 + 1;
            f.heat_order = 1;
            f.heat_ctrl = ctrl;
            f.split = false;
        }
    }
}

/// A single-zone box whose total envelope conductance, with films at zero
/// wind, equals `ua` W/K. All six faces are opaque and air-exposed (no
/// ground coupling) and the construction is light, so steady state is
/// reached within hours.
pub fn analytic_box(ua: f64, setpoint: f64, physics: &PhysicsConfig) -> BuildingTopology {
    let zone = ZoneSpec::new(101, (0, 0, 0), (5.0, 4.0, 3.0), setpoint);
    let total_area: f64 = Orientation::ALL.iter().map(|&o| zone.face_area(o)).sum();
    let u = ua / total_area;
    let h_out = crate::thermal::exterior_film(0.0);
    let d = 0.05;
    let faces = Orientation::ALL
        .iter()
        .map(|&ori| {
            let r_layer = 1.0 / u - 1.0 / h_out - 1.0 / physics.interior_film(ori);
            let mut f = FaceRecord::new(zone.id, ori, EXTERIOR, BoundaryType::Opaque);
            f.opeq = LayerStack::new(zone.face_area(ori), vec![Layer::new(d / r_layer, d, 20.0, 1000.0)]);
            f
        })
        .collect();
    BuildingTopology {
        azi_s: 0.0,
        zones: vec![zone],
        faces,
    }
}

/// Building shapes used for neighbourhood runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Typology {
    /// Detached house: 2×1 cells, 2 storeys.
    D,
    /// Semi-detached half: 1×2 cells, 2 storeys, west wall adiabatic-like.
    S,
    /// Terraced: 1×2 cells, 2 storeys, narrow.
    T,
    /// Apartment block: 3×2 cells, 3 storeys.
    A,
    /// Office: 4×2 cells, 2 storeys.
    O,
}

impl Typology {
    pub const ALL: [Typology; 5] = [Typology::D, Typology::S, Typology::T, Typology::A, Typology::O];

    pub fn from_letter(s: &str) -> Option<Self> {
        match s.trim() {
            "D" => Some(Typology::D),
            "S" => Some(Typology::S),
            "T" => Some(Typology::T),
            "A" => Some(Typology::A),
            "O" => Some(Typology::O),
            _ => None,
        }
    }
}

/// Synthetic typology template (not reference constructions).
pub fn typology(kind: Typology, cons: &Constructions) -> BuildingTopology {
    match kind {
        Typology::D => grid_building(2, 1, 2, (5.0, 8.0, 2.8), |_, _, _| true, cons),
        Typology::S => grid_building(1, 2, 2, (6.0, 5.0, 2.8), |_, _, _| true, cons),
        Typology::T => grid_building(1, 2, 2, (5.0, 5.0, 2.8), |_, _, _| true, cons),
        Typology::A => grid_building(3, 2, 3, (6.0, 6.0, 2.8), |_, _, _| true, cons),
        Typology::O => grid_building(4, 2, 2, (6.0, 6.0, 3.2), |_, _, _| true, cons),
    }
}

fn random_layers<R: Rng>(rng: &mut R) -> Vec<Layer> {
    let n = rng.gen_range(1..=3);
    (0..n)
        .map(|_| {
            Layer::new(
                rng.gen_range(0.03..2.0),
                rng.gen_range(0.01..0.3),
                rng.gen_range(20.0..2500.0),
                rng.gen_range(800.0..1600.0),
            )
        })
        .collect()
}

/// A random valid building on a small grid. Each internal adjacency is
/// declared on one or both sides, so callers usually pass the result
/// through [`mirror_fill`].
pub fn random_grid_topology<R: Rng>(rng: &mut R) -> BuildingTopology {
    let nx = rng.gen_range(1..=3);
    let ny = rng.gen_range(1..=3);
    let floors = rng.gen_range(1..=2);
    let cell = (rng.gen_range(2.0..8.0), rng.gen_range(2.0..8.0), rng.gen_range(2.4..4.0));
    let mut occ = vec![false; nx * ny * floors];
    for o in occ.iter_mut() {
        *o = rng.gen_bool(0.75);
    }
    if !occ.iter().any(|&o| o) {
        occ[0] = true;
    }
    let cons = Constructions {
        exterior_wall: random_layers(rng),
        roof: random_layers(rng),
        ground_floor: random_layers(rng),
        internal_wall: random_layers(rng),
        internal_floor: random_layers(rng),
        south_window_fraction: rng.gen_range(0.0..0.4),
        window_fraction: rng.gen_range(0.0..0.2),
        setpoint: rng.gen_range(18.0..22.0),
        ..Constructions::default()
    };
    let mut topo = grid_building(nx, ny, floors, cell, |x, y, f| occ[(f * ny + y) * nx + x], &cons);
    topo.set_azimuth(rng.gen_range(-45.0..45.0));

    // Vary internal boundary types (pairwise) before dropping sides.
    let mut pair_typ: BTreeMap<(ZoneId, ZoneId), (BoundaryType, f64)> = BTreeMap::new();
    for f in topo.faces.iter_mut().filter(|f| !f.is_external()) {
        let key = (f.z_pri.min(f.z_adj), f.z_pri.max(f.z_adj));
        let (typ, open_frac) = *pair_typ.entry(key).or_insert_with(|| {
            let typ = [BoundaryType::Opening, BoundaryType::Door, BoundaryType::Opaque][rng.gen_range(0..3)];
            (typ, rng.gen_range(0.05..0.3))
        });
        if f.ori.is_wall() {
            f.typ = typ;
            if typ == BoundaryType::Opening {
                let a = f.opeq.area * open_frac;
                f.open = LayerStack::new(a, Vec::new());
                f.opeq.area -= a;
            }
        }
    }

    let mut loop_id = 0;
    let ground: Vec<ZoneId> = topo.zones.iter().filter(|z| z.floor == 0).map(|z| z.id).collect();
    for id in ground {
        if rng.gen_bool(0.5) {
            loop_id += 1;
            let f = topo.face_mut(id, Orientation::Down).expect("every zone has a down face");
            f.heat_type = HeatType::Underfloor;
            f.heat_loop = loop_id;
            f.heat_order = 1;
            f.heat_ctrl = rng.gen_range(0..=1);
            f.split = false;
        }
    }

    let keys: Vec<(ZoneId, Orientation)> = topo
        .faces
        .iter()
        .filter(|f| !f.is_external() && f.heat_loop == 0)
        .map(|f| f.key())
        .collect();
    let mut dropped = std::collections::BTreeSet::new();
    for (z, o) in keys {
        let face = topo.face(z, o).unwrap();
        let mirror = (face.z_adj, o.opposite());
        let mirror_has_loop = topo.face(mirror.0, mirror.1).is_some_and(|m| m.heat_loop > 0);
        if !dropped.contains(&mirror) && !mirror_has_loop && rng.gen_bool(0.4) {
            dropped.insert((z, o));
        }
    }
    topo.faces.retain(|f| !dropped.contains(&f.key()));
    topo
}

/// Convenience: random topology with mirrors filled.
pub fn random_complete_topology<R: Rng>(rng: &mut R) -> BuildingTopology {
    mirror_fill(&random_grid_topology(rng)).expect("generated sides are consistent")
}


/// A hydronic test case: a row of zones with one underfloor loop each,
/// prescribed on/off flows and a cold, partly sunny weather record.
#[derive(Clone, Debug)]
pub struct CalibrationScenario {
    pub topology: BuildingTopology,
    pub weather: crate::weather::WeatherSeries,
    pub loops: crate::hydronic::LoopInputs,
    pub truth: crate::hydronic::HydronicParams,
    pub start: f64,
    pub end: f64,
}

/// `zones` ground-floor zones, `days` days starting at t = 0, inputs on a
/// one-minute grid. Loop `L` runs 0.04 kg/s at 36 °C on a cycle whose
/// period and phase depend on `L`.
pub fn calibration_scenario(zones: usize, days: usize) -> CalibrationScenario {
    use crate::hydronic::{HydronicParams, LoopInputs};
    use crate::series::UniformGrid;
    use crate::weather::{Site, WeatherSeries};

    let mut topology = row_building(zones, &Constructions::default());
    add_floor_loops(&mut topology, 0);
    let end = days as f64 * 86_400.0;
    let weather = WeatherSeries::from_fn(
        UniformGrid {
            start: 0.0,
            step: 3600.0,
            len: days * 24 + 1,
        },
        &Site::default(),
        |t| {
            let day = (t / 86_400.0 * std::f64::consts::TAU).sin();
            (2.0 + 4.0 * day, 3.0, 250.0 * day.max(0.0), 60.0 * day.max(0.0))
        },
    );
    let grid = UniformGrid {
        start: 0.0,
        step: 60.0,
        len: days * 1440 + 1,
    };
    let ids = topology.loop_ids();
    let mut supply = BTreeMap::new();
    let mut flow = BTreeMap::new();
    for (i, &l) in ids.iter().enumerate() {
        let period = 90 + 20 * i;
        let on = 45 + 5 * i;
        let f: Vec<f64> = (0..grid.len)
            .map(|k| if (k + 17 * i) % period < on { 0.04 } else { 0.0 })
            .collect();
        let s: Vec<f64> = (0..grid.len)
            .map(|k| 36.0 + 2.0 * (k as f64 / 720.0 * std::f64::consts::PI + i as f64).sin())
            .collect();
        flow.insert(l, f);
        supply.insert(l, s);
    }
    let truth = HydronicParams {
        dis_pip: 0.15,
        h_int: ids.iter().enumerate().map(|(i, &l)| (l, 4.0 + i as f64)).collect(),
    };
    CalibrationScenario {
        topology,
        weather,
        loops: LoopInputs {
            grid: Some(grid),
            supply,
            flow,
        },
        truth,
        start: 0.0,
        end,
    }
}

impl CalibrationScenario {
    /// Hydronic model of the scenario building for a parameter set.
    pub fn build(
        &self,
        params: &crate::hydronic::HydronicParams,
    ) -> Result<crate::hydronic::HiFiModel, crate::thermal::CompileError> {
        crate::hydronic::compile_hifi(
            &self.topology,
            &crate::thermal::DiscretizationPolicy::default(),
            &crate::thermal::PhysicsConfig::default(),
            &crate::hydronic::HydronicDefaults::default(),
            params,
        )
    }

    /// `(loop, zone)` pairs of the scenario.
    pub fn loop_zones(&self) -> Vec<(crate::topology::LoopId, ZoneId)> {
        self.topology
            .loop_ids()
            .into_iter()
            .filter_map(|l| {
                let f = self
                    .topology
                    .faces
                    .iter()
                    .filter(|f| f.heat_loop == l && f.carries_heating())
                    .min_by_key(|f| (f.heat_order, f.key()))?;
                Some((l, f.z_pri))
            })
            .collect()
    }

    /// Simulates `params` from 21 °C at a 30 s output step and samples the
    /// result on the input grid.
    pub fn measurements(
        &self,
        params: &crate::hydronic::HydronicParams,
    ) -> Result<crate::calibration::MeasurementSet, crate::calibration::CalibrationError> {
        use crate::engine::{simulate, EngineConfig, HeatingPeriod, SimInputs};
        let model = self.build(params).map_err(|source| crate::calibration::CalibrationError::Compile { k: 0, source })?;
        let inputs = SimInputs {
            gains: Default::default(),
            loops: self.loops.clone(),
        };
        let cfg = EngineConfig {
            heating: HeatingPeriod::Always,
            out_step: 30.0,
            initial_temperature: Some(21.0),
            ..EngineConfig::hifi()
        };
        let r = simulate(&model, &self.weather, &inputs, self.start, self.end, &cfg)
            .map_err(|source| crate::calibration::CalibrationError::Simulation { k: 0, source })?;
        let grid = self.loops.grid.expect("scenario inputs are gridded");
        crate::calibration::MeasurementSet::from_simulation(&r, &self.loops, &self.weather, grid)
    }
}
