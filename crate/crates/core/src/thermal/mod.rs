//! The reduced-order thermal network: zone air nodes, discretized
//! constructions, films, glazing, infiltration and solar gains.

mod compile;
mod solar;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{Orientation, ValidationReport, ZoneId};

pub use compile::compile_lofi;
pub use solar::{incident_irradiance, solar_gains, SolarGains, SolarSurface, SurfaceTilt};

/// Air density, kg/m³.
pub const RHO_AIR: f64 = 1.2;
/// Air heat capacity, J/(kg·K).
pub const CP_AIR: f64 = 1005.0;

/// Exterior film coefficient `5.7 + 3.8·wind`, capped at 40 W/(m²·K).
pub fn exterior_film(wind: f64) -> f64 {
    (5.7 + 3.8 * wind.max(0.0)).min(40.0)
}

/// Infiltration heat flow into a zone, W.
pub fn infiltration_flow(ach: f64, volume: f64, t_amb: f64, t_zone: f64) -> f64 {
    ach / 3600.0 * volume * RHO_AIR * CP_AIR * (t_amb - t_zone)
}

/// Physical constants and boundary assumptions used when compiling a
/// network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConfig {
    /// Interior combined film on walls, W/(m²·K).
    pub h_in_wall: f64,
    /// Interior film on floors (the zone's D face).
    pub h_in_floor: f64,
    /// Interior film on ceilings (the zone's U face).
    pub h_in_ceiling: f64,
    pub h_out_base: f64,
    pub h_out_per_wind: f64,
    pub h_out_max: f64,
    /// Deep-ground temperature behind typ-5 faces, °C.
    pub ground_temperature: f64,
    /// Base air changes per hour.
    pub ach: f64,
    /// Extra air changes per hour for each face flagged with active
    /// ventilation.
    pub mech_ach: f64,
    pub g_glazing: f64,
    pub alpha_opaque: f64,
    /// Fraction of sky diffuse seen by a vertical surface.
    pub diffuse_view_vertical: f64,
    /// Air-exchange conductance of permanent openings per m², W/(m²·K).
    pub opening_coupling: f64,
    /// Same for the openable area of windows and doors.
    pub operable_opening_coupling: f64,
    /// Heater capacity per zone, W. `None` is unbounded.
    pub q_max: Option<f64>,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            h_in_wall: 7.7,
            h_in_floor: 5.0,
            h_in_ceiling: 10.0,
            h_out_base: 5.7,
            h_out_per_wind: 3.8,
            h_out_max: 40.0,
            ground_temperature: 10.0,
            ach: 0.4,
            mech_ach: 0.5,
            g_glazing: 0.6,
            alpha_opaque: 0.6,
            diffuse_view_vertical: 0.5,
            opening_coupling: 100.0,
            operable_opening_coupling: 0.0,
            q_max: None,
        }
    }
}

impl PhysicsConfig {
    /// Interior film for the surface a zone sees in direction `ori`.
    pub fn interior_film(&self, ori: Orientation) -> f64 {
        match ori {
            Orientation::Down => self.h_in_floor,
            Orientation::Up => self.h_in_ceiling,
            _ => self.h_in_wall,
        }
    }

    pub fn exterior_film(&self, wind: f64) -> f64 {
        (self.h_out_base + self.h_out_per_wind * wind.max(0.0)).min(self.h_out_max)
    }
}

/// How many capacitive nodes each material layer gets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretizationPolicy {
    pub nodes_per_layer: usize,
}

impl Default for DiscretizationPolicy {
    fn default() -> Self {
        Self { nodes_per_layer: 2 }
    }
}

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("invalid topology:\n{0}")]
    Invalid(ValidationReport),
    #[error("face ({zone}, {ori}) carries heating but has no opaque area")]
    HeatedWithoutArea { zone: ZoneId, ori: Orientation },
    #[error("face ({zone}, {ori}) carries underfloor heating but split = 1")]
    UnderfloorOnSplit { zone: ZoneId, ori: Orientation },
    #[error("zone {0} has no heat path to any boundary")]
    Disconnected(ZoneId),
    #[error("topology has no heating loops")]
    NoLoops,
    #[error("nodes_per_layer must be at least 1")]
    BadPolicy,
    #[error("hydronic parameter out of range: {0}")]
    BadParameter(String),
}

/// What a capacitive node represents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum NodeRole {
    ZoneAir { zone: ZoneId },
    /// Sub-node `sub` of layer `layer` (outside-to-inside) of a face's
    /// opaque stack.
    Construction { zone: ZoneId, ori: Orientation, layer: usize, sub: usize },
    /// Construction node hosting embedded pipes.
    Slab { zone: ZoneId, ori: Orientation },
    /// Radiator water.
    Emitter { zone: ZoneId, ori: Orientation, heat_loop: u32 },
    PipeVolume { zone: ZoneId, ori: Orientation, heat_loop: u32, index: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Node {
    pub role: NodeRole,
    /// J/K.
    pub capacity: f64,
}

/// The far end of a branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Terminal {
    Node(usize),
    Ambient,
    Ground,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Conductance {
    /// W/K.
    Fixed(f64),
    /// Exterior film over `area` in series with `resistance` (K/W).
    WindFilm { area: f64, resistance: f64 },
}

impl Conductance {
    pub fn value(&self, physics: &PhysicsConfig, wind: f64) -> f64 {
        match *self {
            Conductance::Fixed(g) => g,
            Conductance::WindFilm { area, resistance } => 1.0 / (1.0 / (physics.exterior_film(wind) * area) + resistance),
        }
    }

    pub fn is_wind_dependent(&self) -> bool {
        matches!(self, Conductance::WindFilm { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BranchKind {
    Conduction,
    InteriorFilm,
    ExteriorFilm,
    /// Massless glazing, frame or shutter path.
    Window,
    Infiltration,
    Opening,
    /// Pipe water to slab.
    PipeWall,
    /// Radiator water to zone air or surface.
    EmitterOutput,
}

/// A heat-flow element between node `a` and terminal `b`; positive flow
/// runs from `a` to `b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Branch {
    pub a: usize,
    pub b: Terminal,
    pub g: Conductance,
    pub kind: BranchKind,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZoneNode {
    pub id: ZoneId,
    pub node: usize,
    pub setpoint: f64,
    pub volume: f64,
}

/// The compiled opaque chain of one face, nodes listed outside-to-inside
/// relative to `zone`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FaceChain {
    pub zone: ZoneId,
    pub ori: Orientation,
    pub adj: ZoneId,
    pub nodes: Vec<usize>,
    pub area: f64,
    /// Branch from the innermost node to the zone air node.
    pub inner_film: usize,
    /// Resistance between the innermost node and the surface, m²·K/W.
    pub inner_half_resistance: f64,
}

/// A compiled ideal-load network.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThermalModel {
    pub nodes: Vec<Node>,
    pub branches: Vec<Branch>,
    pub zones: Vec<ZoneNode>,
    pub zone_index: BTreeMap<ZoneId, usize>,
    pub chains: Vec<FaceChain>,
    pub solar: Vec<SolarSurface>,
    pub physics: PhysicsConfig,
    /// Building rotation, degrees.
    pub azi_s: f64,
}

impl ThermalModel {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Air-node index of a zone.
    pub fn air_node(&self, zone: ZoneId) -> Option<usize> {
        self.zone_index.get(&zone).map(|&i| self.zones[i].node)
    }

    pub fn chain(&self, zone: ZoneId, ori: Orientation) -> Option<&FaceChain> {
        self.chains.iter().find(|c| c.zone == zone && c.ori == ori)
    }

    /// Branch conductances at a given wind speed.
    pub fn conductances(&self, wind: f64) -> Vec<f64> {
        self.branches.iter().map(|b| b.g.value(&self.physics, wind)).collect()
    }

    /// Steady-state envelope conductance of each zone with all other zones
    /// held at the same temperature, W/K, at zero wind. Only meaningful for
    /// single-zone models or as a rough figure.
    pub fn total_ua(&self, wind: f64) -> f64 {
        // Series-parallel reduction is not general; solve the steady network
        // with zone air at 1 K and boundaries at 0 K instead.
        let n = self.nodes.len();
        let g = self.conductances(wind);
        let mut a = vec![vec![0.0; n]; n];
        let mut b = vec![0.0; n];
        for (br, &gv) in self.branches.iter().zip(&g) {
            a[br.a][br.a] += gv;
            if let Terminal::Node(j) = br.b {
                a[j][j] += gv;
                a[br.a][j] -= gv;
                a[j][br.a] -= gv;
            }
        }
        let fixed: Vec<usize> = self.zones.iter().map(|z| z.node).collect();
        for &i in &fixed {
            a[i] = vec![0.0; n];
            a[i][i] = 1.0;
            b[i] = 1.0;
        }
        let x = dense_solve(a, b);
        let mut ua = 0.0;
        for (br, &gv) in self.branches.iter().zip(&g) {
            if !matches!(br.b, Terminal::Node(_)) {
                ua += gv * x[br.a];
            }
        }
        ua
    }
}

pub(crate) fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
            .unwrap_or(k);
        a.swap(k, p);
        b.swap(k, p);
        let piv = a[k][k];
        if piv == 0.0 {
            continue;
        }
        for i in k + 1..n {
            let f = a[i][k] / piv;
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = if a[k][k] == 0.0 { 0.0 } else { (b[k] - s) / a[k][k] };
    }
    x
}
