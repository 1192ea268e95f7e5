use std::collections::BTreeMap;

use crate::topology::{validate_topology, BoundaryType, BuildingTopology, Category, FaceRecord, HeatType, Orientation};

use super::solar::{SolarSurface, SurfaceTilt};
use super::{
    Branch, BranchKind, CompileError, Conductance, DiscretizationPolicy, FaceChain, Node, NodeRole, PhysicsConfig,
    Terminal, ThermalModel, ZoneNode, CP_AIR, RHO_AIR,
};

/// Compiles a validated topology into an ideal-load network.
pub fn compile_lofi(
    topo: &BuildingTopology,
    disc: &DiscretizationPolicy,
    physics: &PhysicsConfig,
) -> Result<ThermalModel, CompileError> {
    let report = validate_topology(topo);
    if !report.is_valid() {
        return Err(CompileError::Invalid(report));
    }
    if disc.nodes_per_layer == 0 {
        return Err(CompileError::BadPolicy);
    }

    let mut b = Builder {
        nodes: Vec::new(),
        branches: Vec::new(),
    };
    let mut zones_sorted: Vec<_> = topo.zones.iter().collect();
    zones_sorted.sort_by_key(|z| z.id);
    let mut zones = Vec::new();
    let mut zone_index = BTreeMap::new();
    for z in &zones_sorted {
        let node = b.node(NodeRole::ZoneAir { zone: z.id }, RHO_AIR * CP_AIR * z.volume());
        zone_index.insert(z.id, zones.len());
        zones.push(ZoneNode {
            id: z.id,
            node,
            setpoint: z.setpoint,
            volume: z.volume(),
        });
    }
    let air = |id| zones[zone_index[&id]].node;

    let mut chains = Vec::new();
    let mut solar = Vec::new();
    for f in topo.sorted_faces() {
        if f.carries_heating() && f.heat_type == HeatType::Underfloor && f.split {
            return Err(CompileError::UnderfloorOnSplit { zone: f.z_pri, ori: f.ori });
        }
        if f.carries_heating() && (f.opeq.area <= 0.0 || f.opeq.layers.is_empty()) {
            return Err(CompileError::HeatedWithoutArea { zone: f.z_pri, ori: f.ori });
        }
        if !f.is_external() && !is_representative(topo, f) {
            continue;
        }
        let inner = air(f.z_pri);
        let outer = if f.is_external() {
            if f.typ == BoundaryType::Ground {
                Outer::Ground
            } else {
                Outer::Ambient
            }
        } else {
            Outer::Zone(air(f.z_adj), physics.interior_film(f.ori.opposite()))
        };
        let h_in = physics.interior_film(f.ori);

        let mut outermost = None;
        if f.opeq.area > 0.0 && !f.opeq.layers.is_empty() {
            let chain = b.chain(f, inner, outer, h_in, disc.nodes_per_layer);
            outermost = Some(chain.nodes[0]);
            chains.push(chain);
        }
        for c in Category::ALL {
            let s = f.stack(c);
            if s.area <= 0.0 {
                continue;
            }
            match c {
                Category::Opeq if !s.layers.is_empty() => {}
                Category::Open => {
                    let per_m2 = match f.typ {
                        BoundaryType::Opening => physics.opening_coupling,
                        BoundaryType::Window | BoundaryType::Door => physics.operable_opening_coupling,
                        _ => 0.0,
                    };
                    let g = per_m2 * s.area;
                    if g > 0.0 {
                        let b_term = match outer {
                            Outer::Zone(n, _) => Terminal::Node(n),
                            Outer::Ambient => Terminal::Ambient,
                            Outer::Ground => continue,
                        };
                        b.branch(inner, b_term, Conductance::Fixed(g), BranchKind::Opening);
                    }
                }
                _ => {
                    // Massless path: inner film, layers, outer film.
                    let r_in = 1.0 / (h_in * s.area) + s.resistance() / s.area;
                    let (term, g) = match outer {
                        Outer::Zone(n, h_adj) => {
                            (Terminal::Node(n), Conductance::Fixed(1.0 / (r_in + 1.0 / (h_adj * s.area))))
                        }
                        Outer::Ground => (Terminal::Ground, Conductance::Fixed(1.0 / r_in)),
                        Outer::Ambient => (
                            Terminal::Ambient,
                            Conductance::WindFilm {
                                area: s.area,
                                resistance: r_in,
                            },
                        ),
                    };
                    b.branch(inner, term, g, BranchKind::Window);
                }
            }
        }

        if matches!(outer, Outer::Ambient) && f.ori != Orientation::Down {
            let tilt = if f.ori == Orientation::Up {
                SurfaceTilt::Horizontal
            } else {
                SurfaceTilt::Vertical
            };
            let azimuth = f.ori.nominal_azimuth().unwrap_or(180.0) + f.azi_s;
            let absorb = match outermost {
                Some(n) => Some((n, physics.alpha_opaque * f.opeq.area)),
                None if f.opeq.area > 0.0 => Some((inner, physics.alpha_opaque * f.opeq.area)),
                None => None,
            };
            let transmit = (f.gla.area > 0.0).then_some((inner, physics.g_glazing * f.gla.area));
            if absorb.is_some() || transmit.is_some() {
                solar.push(SolarSurface {
                    zone: f.z_pri,
                    ori: f.ori,
                    azimuth: azimuth.rem_euclid(360.0),
                    tilt,
                    transmit,
                    absorb,
                });
            }
        }
    }

    for z in &zones_sorted {
        let vents = topo.faces.iter().filter(|f| f.z_pri == z.id && f.act_ven).count() as f64;
        let ach = physics.ach + physics.mech_ach * vents;
        if ach > 0.0 {
            let g = ach / 3600.0 * z.volume() * RHO_AIR * CP_AIR;
            b.branch(air(z.id), Terminal::Ambient, Conductance::Fixed(g), BranchKind::Infiltration);
        }
    }

    let model = ThermalModel {
        nodes: b.nodes,
        branches: b.branches,
        zones,
        zone_index,
        chains,
        solar,
        physics: physics.clone(),
        azi_s: topo.azi_s,
    };
    check_connected(&model)?;
    Ok(model)
}

/// Internal pairs compile once: from the heated side if exactly one side
/// carries heating, otherwise from the lower `(zone, ori)` key.
fn is_representative(topo: &BuildingTopology, f: &FaceRecord) -> bool {
    match topo.face(f.z_adj, f.ori.opposite()) {
        None => true,
        Some(m) => match (f.carries_heating(), m.carries_heating()) {
            (true, false) => true,
            (false, true) => false,
            _ => f.key() < m.key(),
        },
    }
}

#[derive(Clone, Copy)]
enum Outer {
    Ambient,
    Ground,
    /// Adjacent air node and the film on that side.
    Zone(usize, f64),
}

struct Builder {
    nodes: Vec<Node>,
    branches: Vec<Branch>,
}

impl Builder {
    fn node(&mut self, role: NodeRole, capacity: f64) -> usize {
        self.nodes.push(Node { role, capacity });
        self.nodes.len() - 1
    }

    fn branch(&mut self, a: usize, b: Terminal, g: Conductance, kind: BranchKind) -> usize {
        self.branches.push(Branch { a, b, g, kind });
        self.branches.len() - 1
    }

    fn chain(&mut self, f: &FaceRecord, inner: usize, outer: Outer, h_in: f64, per_layer: usize) -> FaceChain {
        let area = f.opeq.area;
        let n = per_layer as f64;
        let mut nodes = Vec::new();
        // Half sub-layer resistance of each node, K/W.
        let mut half = Vec::new();
        for (li, l) in f.opeq.layers.iter().enumerate() {
            for sub in 0..per_layer {
                let role = NodeRole::Construction {
                    zone: f.z_pri,
                    ori: f.ori,
                    layer: li,
                    sub,
                };
                nodes.push(self.node(role, l.rho * l.cp * l.d / n * area));
                half.push(l.d / (2.0 * n * l.k) / area);
            }
        }
        for i in 1..nodes.len() {
            let g = 1.0 / (half[i - 1] + half[i]);
            self.branch(nodes[i - 1], Terminal::Node(nodes[i]), Conductance::Fixed(g), BranchKind::Conduction);
        }
        let first = nodes[0];
        match outer {
            Outer::Ambient => {
                self.branch(
                    first,
                    Terminal::Ambient,
                    Conductance::WindFilm {
                        area,
                        resistance: half[0],
                    },
                    BranchKind::ExteriorFilm,
                );
            }
            Outer::Ground => {
                self.branch(first, Terminal::Ground, Conductance::Fixed(1.0 / half[0]), BranchKind::Conduction);
            }
            Outer::Zone(adj, h) => {
                let g = 1.0 / (half[0] + 1.0 / (h * area));
                self.branch(first, Terminal::Node(adj), Conductance::Fixed(g), BranchKind::InteriorFilm);
            }
        }
        let last = *nodes.last().expect("non-empty chain");
        let r_half = *half.last().expect("non-empty chain");
        let inner_film = self.branch(
            last,
            Terminal::Node(inner),
            Conductance::Fixed(1.0 / (r_half + 1.0 / (h_in * area))),
            BranchKind::InteriorFilm,
        );
        FaceChain {
            zone: f.z_pri,
            ori: f.ori,
            adj: f.z_adj,
            nodes,
            area,
            inner_film,
            inner_half_resistance: r_half * area,
        }
    }
}

fn check_connected(model: &ThermalModel) -> Result<(), CompileError> {
    let n = model.nodes.len();
    // Index n is the shared boundary.
    let mut parent: Vec<usize> = (0..=n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for br in &model.branches {
        let j = match br.b {
            Terminal::Node(j) => j,
            _ => n,
        };
        let (ra, rb) = (find(&mut parent, br.a), find(&mut parent, j));
        parent[ra] = rb;
    }
    let root = find(&mut parent, n);
    for z in &model.zones {
        if find(&mut parent, z.node) != root {
            return Err(CompileError::Disconnected(z.id));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{analytic_box, row_building, Constructions};
    use crate::topology::EXTERIOR;

    #[test]
    fn single_zone_node_count() {
        let topo = analytic_box(100.0, 21.0, &PhysicsConfig::default());
        let m = compile_lofi(&topo, &DiscretizationPolicy::default(), &PhysicsConfig::default()).unwrap();
        assert_eq!(m.n_nodes(), 13);
        assert!(m.nodes.iter().all(|n| n.capacity > 0.0));
    }

    #[test]
    fn envelope_ua_matches_target() {
        let mut physics = PhysicsConfig::default();
        physics.ach = 0.0;
        let topo = analytic_box(100.0, 21.0, &physics);
        let m = compile_lofi(&topo, &DiscretizationPolicy::default(), &physics).unwrap();
        assert!((m.total_ua(0.0) - 100.0).abs() < 1e-9, "{}", m.total_ua(0.0));
    }

    #[test]
    fn compile_is_deterministic() {
        let topo = row_building(4, &Constructions::default());
        let p = PhysicsConfig::default();
        let a = compile_lofi(&topo, &DiscretizationPolicy::default(), &p).unwrap();
        let b = compile_lofi(&topo, &DiscretizationPolicy::default(), &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shared_wall_appears_once() {
        let topo = row_building(2, &Constructions::opaque());
        let m = compile_lofi(&topo, &DiscretizationPolicy::default(), &PhysicsConfig::default()).unwrap();
        let shared: Vec<_> = m.chains.iter().filter(|c| c.adj != EXTERIOR).collect();
        assert_eq!(shared.len(), 1);
        let c = shared[0];
        let (a0, a1) = (m.air_node(101).unwrap(), m.air_node(102).unwrap());
        let touches = |air: usize| {
            m.branches
                .iter()
                .any(|b| c.nodes.contains(&b.a) && b.b == Terminal::Node(air))
        };
        assert!(touches(a0) && touches(a1));
    }

    #[test]
    fn policy_scales_node_count() {
        let topo = analytic_box(100.0, 21.0, &PhysicsConfig::default());
        let m = compile_lofi(&topo, &DiscretizationPolicy { nodes_per_layer: 3 }, &PhysicsConfig::default()).unwrap();
        assert_eq!(m.n_nodes(), 1 + 18);
    }
}
