use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{BoundaryType, BuildingTopology, Category, FaceRecord, HeatType, Orientation, ZoneId, EXTERIOR};

const AREA_TOL: f64 = 1e-9;

/// Names of the topology rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    NoZones,
    ReservedZoneId,
    DuplicateZone,
    DuplicateCell,
    NonPositiveDims,
    UnknownZone,
    SelfAdjacent,
    DuplicateFace,
    GroundNotExternal,
    InvalidLayer,
    NegativeArea,
    AreaExceedsFace,
    MissingMirror,
    MirrorMismatch,
    NotGridNeighbour,
    GeometryMismatch,
    EmitterWithoutLoop,
    LoopWithoutEmitter,
    UnderfloorOnSplitFace,
    HeatOrder,
    NonFinite,
}

impl Rule {
    pub fn describe(self) -> &'static str {
        match self {
            Rule::NoZones => "no zones",
            Rule::ReservedZoneId => "zone id 0 is reserved for the exterior",
            Rule::DuplicateZone => "duplicate zone id",
            Rule::DuplicateCell => "two zones occupy one grid cell",
            Rule::NonPositiveDims => "zone dimensions must be positive",
            Rule::UnknownZone => "face references an unknown zone",
            Rule::SelfAdjacent => "face is adjacent to its own zone",
            Rule::DuplicateFace => "more than one face per (zone, orientation)",
            Rule::GroundNotExternal => "ground face must be external",
            Rule::InvalidLayer => "layer needs k > 0, d > 0, rho > 0, cp > 0",
            Rule::NegativeArea => "category area must be non-negative",
            Rule::AreaExceedsFace => "category areas exceed the geometric face area",
            Rule::MissingMirror => "missing mirror face",
            Rule::MirrorMismatch => "mirror face parameters differ",
            Rule::NotGridNeighbour => "adjacent zone is not the grid neighbour in this direction",
            Rule::GeometryMismatch => "adjacent zones disagree on shared face area",
            Rule::EmitterWithoutLoop => "emitter type set without a heating loop",
            Rule::LoopWithoutEmitter => "heating loop needs heat_type 1 or 2",
            Rule::UnderfloorOnSplitFace => "underfloor heating on a face flagged split",
            Rule::HeatOrder => "heat_order within a loop must run 1..n",
            Rule::NonFinite => "non-finite numeric value",
        }
    }
}

/// One rule violation with the faces (as `(zone, orientation)`) involved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    pub faces: Vec<(ZoneId, u8)>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.rule.describe())?;
        if !self.faces.is_empty() {
            let faces: Vec<String> = self
                .faces
                .iter()
                .map(|(z, o)| format!("{z}/{}", Orientation::from_code(*o).map_or('?', |o| o.letter())))
                .collect();
            write!(f, " [{}]", faces.join(", "))?;
        }
        if !self.detail.is_empty() {
            write!(f, ": {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, rule: Rule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    fn push(&mut self, rule: Rule, faces: &[&FaceRecord], detail: impl Into<String>) {
        self.violations.push(Violation {
            rule,
            faces: faces.iter().map(|f| (f.z_pri, f.ori.code())).collect(),
            detail: detail.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= AREA_TOL * a.abs().max(b.abs()).max(1.0)
}

/// True when `b` is exactly what `a` looks like from the other side.
pub(crate) fn mirror_consistent(a: &FaceRecord, b: &FaceRecord) -> bool {
    a.typ == b.typ
        && Category::ALL.iter().all(|&c| {
            let (sa, sb) = (a.stack(c), b.stack(c));
            close(sa.area, sb.area) && sa.layers.iter().rev().eq(sb.layers.iter())
        })
}

/// Checks every topology invariant. Violations are returned as data.
pub fn validate_topology(topo: &BuildingTopology) -> ValidationReport {
    let mut report = ValidationReport::default();

    if topo.zones.is_empty() {
        report.push(Rule::NoZones, &[], "");
    }
    if !topo.azi_s.is_finite() {
        report.push(Rule::NonFinite, &[], "building azi_S");
    }

    let mut zones = HashMap::new();
    let mut cells = HashMap::new();
    for z in &topo.zones {
        if z.id == EXTERIOR {
            report.push(Rule::ReservedZoneId, &[], "zone 0");
        }
        if zones.insert(z.id, z).is_some() {
            report.push(Rule::DuplicateZone, &[], format!("zone {}", z.id));
        }
        if let Some(other) = cells.insert(z.cell(), z.id) {
            report.push(Rule::DuplicateCell, &[], format!("zones {other} and {}", z.id));
        }
        let dims = [z.length, z.width, z.height];
        if dims.iter().any(|d| !d.is_finite()) || !z.setpoint.is_finite() {
            report.push(Rule::NonFinite, &[], format!("zone {}", z.id));
        } else if dims.iter().any(|&d| d <= 0.0) {
            report.push(Rule::NonPositiveDims, &[], format!("zone {}", z.id));
        }
    }

    let mut by_key: BTreeMap<(ZoneId, Orientation), &FaceRecord> = BTreeMap::new();
    for f in &topo.faces {
        if let Some(prev) = by_key.insert(f.key(), f) {
            report.push(Rule::DuplicateFace, &[prev, f], "");
        }
    }

    for f in &topo.faces {
        check_face(f, &zones, &mut report);
    }

    // Mirror and grid consistency, visiting each internal pair once.
    let mut seen = BTreeSet::new();
    for f in by_key.values() {
        if f.is_external() || f.z_adj == f.z_pri {
            continue;
        }
        let mirror_key = (f.z_adj, f.ori.opposite());
        if seen.contains(&mirror_key) {
            continue;
        }
        seen.insert(f.key());
        match by_key.get(&mirror_key) {
            None => {
                if zones.contains_key(&f.z_adj) {
                    report.push(Rule::MissingMirror, &[f], format!("expected {}/{}", f.z_adj, f.ori.opposite().letter()));
                }
            }
            Some(m) => {
                if m.z_adj != f.z_pri {
                    report.push(Rule::MirrorMismatch, &[f, m], format!("mirror points to zone {}", m.z_adj));
                } else if !mirror_consistent(f, m) {
                    report.push(Rule::MirrorMismatch, &[f, m], "typ, areas or layer stacks differ");
                }
            }
        }
        if let (Some(a), Some(b)) = (zones.get(&f.z_pri), zones.get(&f.z_adj)) {
            let (ax, ay, az) = a.cell();
            let (dx, dy, dz) = f.ori.grid_offset();
            if b.cell() != (ax + dx, ay + dy, az + dz) {
                report.push(Rule::NotGridNeighbour, &[f], format!("zone {} is not {} of zone {}", b.id, f.ori.letter(), a.id));
            } else if !close(a.face_area(f.ori), b.face_area(f.ori.opposite())) {
                report.push(
                    Rule::GeometryMismatch,
                    &[f],
                    format!("{} m² vs {} m²", a.face_area(f.ori), b.face_area(f.ori.opposite())),
                );
            }
        }
    }

    check_loops(topo, &mut report);
    report
}

fn check_face(f: &FaceRecord, zones: &HashMap<ZoneId, &super::ZoneSpec>, report: &mut ValidationReport) {
    if !zones.contains_key(&f.z_pri) {
        report.push(Rule::UnknownZone, &[f], format!("z_pri {}", f.z_pri));
    }
    if f.z_adj != EXTERIOR && !zones.contains_key(&f.z_adj) {
        report.push(Rule::UnknownZone, &[f], format!("z_adj {}", f.z_adj));
    }
    if f.z_adj == f.z_pri {
        report.push(Rule::SelfAdjacent, &[f], "");
    }
    if f.typ == BoundaryType::Ground && f.z_adj != EXTERIOR {
        report.push(Rule::GroundNotExternal, &[f], format!("z_adj {}", f.z_adj));
    }
    if !f.azi_s.is_finite() {
        report.push(Rule::NonFinite, &[f], "azi_S");
    }
    let mut total = 0.0;
    for c in Category::ALL {
        let s = f.stack(c);
        if !s.area.is_finite() {
            report.push(Rule::NonFinite, &[f], format!("A_{}", c.name()));
            continue;
        }
        if s.area < 0.0 {
            report.push(Rule::NegativeArea, &[f], format!("A_{} = {}", c.name(), s.area));
        }
        total += s.area;
        for (i, l) in s.layers.iter().enumerate() {
            let ok = [l.k, l.d, l.rho, l.cp].iter().all(|v| v.is_finite() && *v > 0.0);
            if !ok {
                report.push(Rule::InvalidLayer, &[f], format!("{} layer {}", c.name(), i + 1));
            }
        }
    }
    if let Some(z) = zones.get(&f.z_pri) {
        let geo = z.face_area(f.ori);
        if total > geo + AREA_TOL * geo.max(1.0) {
            report.push(Rule::AreaExceedsFace, &[f], format!("{total} m² > {geo} m²"));
        }
    }
    if f.heat_type != HeatType::None && f.heat_loop == 0 {
        report.push(Rule::EmitterWithoutLoop, &[f], "");
    }
    if f.heat_loop > 0 {
        if f.heat_type == HeatType::None {
            report.push(Rule::LoopWithoutEmitter, &[f], format!("loop {}", f.heat_loop));
        }
        if f.heat_type == HeatType::Underfloor && f.split {
            report.push(Rule::UnderfloorOnSplitFace, &[f], "");
        }
    }
}

fn check_loops(topo: &BuildingTopology, report: &mut ValidationReport) {
    let mut loops: BTreeMap<u32, Vec<&FaceRecord>> = BTreeMap::new();
    for f in topo.faces.iter().filter(|f| f.heat_loop > 0) {
        loops.entry(f.heat_loop).or_default().push(f);
    }
    for (id, mut faces) in loops {
        faces.sort_by_key(|f| f.heat_order);
        let consecutive = faces
            .iter()
            .enumerate()
            .all(|(i, f)| f.heat_order as usize == i + 1);
        if !consecutive {
            let orders: Vec<String> = faces.iter().map(|f| f.heat_order.to_string()).collect();
            report.push(Rule::HeatOrder, &faces, format!("loop {id} orders [{}]", orders.join(",")));
        }
    }
}
