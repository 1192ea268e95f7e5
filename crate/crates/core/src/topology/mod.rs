//! Building topology: orthogonal zone volumes on an integer grid, joined
//! through six directional faces.
//!
//! A [`BuildingTopology`] is the single model description from which both
//! simulation fidelities are compiled. Each [`FaceRecord`] is one row of the
//! face-level parameter table (see [`export_table`] / [`import_table`]).

mod mirror;
mod table;
mod validate;

use serde::{Deserialize, Serialize};

pub use mirror::{mirror_fill, MirrorConflict};
pub use table::{export_table, import_table, parse_table, TableError};
pub use validate::{validate_topology, Rule, ValidationReport, Violation};

/// Zone identifier. `0` is reserved for the exterior.
pub type ZoneId = u32;

/// Hydronic loop identifier. `0` means "no loop".
pub type LoopId = u32;

pub const EXTERIOR: ZoneId = 0;

/// Face direction, coded 1–6 as N/E/S/W/U/D.
///
/// Grid axes: North is `+y`, East is `+x`, Up is `+floor`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Orientation {
    North = 1,
    East = 2,
    South = 3,
    West = 4,
    Up = 5,
    Down = 6,
}

impl Orientation {
    pub const ALL: [Orientation; 6] = [
        Orientation::North,
        Orientation::East,
        Orientation::South,
        Orientation::West,
        Orientation::Up,
        Orientation::Down,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(usize::from(code).checked_sub(1)?).copied()
    }

    pub fn opposite(self) -> Self {
        match self {
            Orientation::North => Orientation::South,
            Orientation::South => Orientation::North,
            Orientation::East => Orientation::West,
            Orientation::West => Orientation::East,
            Orientation::Up => Orientation::Down,
            Orientation::Down => Orientation::Up,
        }
    }

    /// Grid step `(dx, dy, dfloor)` towards the neighbour behind this face.
    pub fn grid_offset(self) -> (i64, i64, i64) {
        match self {
            Orientation::North => (0, 1, 0),
            Orientation::East => (1, 0, 0),
            Orientation::South => (0, -1, 0),
            Orientation::West => (-1, 0, 0),
            Orientation::Up => (0, 0, 1),
            Orientation::Down => (0, 0, -1),
        }
    }

    pub fn is_wall(self) -> bool {
        !matches!(self, Orientation::Up | Orientation::Down)
    }

    /// Outward-normal azimuth in degrees clockwise from north, before the
    /// building rotation is applied. `None` for horizontal faces.
    pub fn nominal_azimuth(self) -> Option<f64> {
        match self {
            Orientation::North => Some(0.0),
            Orientation::East => Some(90.0),
            Orientation::South => Some(180.0),
            Orientation::West => Some(270.0),
            Orientation::Up | Orientation::Down => None,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Orientation::North => 'N',
            Orientation::East => 'E',
            Orientation::South => 'S',
            Orientation::West => 'W',
            Orientation::Up => 'U',
            Orientation::Down => 'D',
        }
    }
}

impl std::fmt::Display for Orientation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl TryFrom<u8> for Orientation {
    type Error = String;

    fn try_from(code: u8) -> Result<Self, Self::Error> {
        Self::from_code(code).ok_or_else(|| format!("orientation code {code} outside 1..=6"))
    }
}

impl From<Orientation> for u8 {
    fn from(o: Orientation) -> u8 {
        o.code()
    }
}

/// Boundary type codes 1–5.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum BoundaryType {
    /// An opening that cannot be closed.
    Opening = 1,
    /// Operable window(s).
    Window = 2,
    /// Operable door(s).
    Door = 3,
    /// Opaque, exterior is not ground.
    Opaque = 4,
    /// Opaque, exterior is ground.
    Ground = 5,
}

impl BoundaryType {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(BoundaryType::Opening),
            2 => Some(BoundaryType::Window),
            3 => Some(BoundaryType::Door),
            4 => Some(BoundaryType::Opaque),
            5 => Some(BoundaryType::Ground),
            _ => None,
        }
    }
}

impl TryFrom<u8> for BoundaryType {
    type Error = String;

    fn try_from(code: u8) -> Result<Self, Self::Error> {
        Self::from_code(code).ok_or_else(|| format!("boundary type {code} outside 1..=5"))
    }
}

impl From<BoundaryType> for u8 {
    fn from(t: BoundaryType) -> u8 {
        t.code()
    }
}

/// Emitter type carried by a face.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum HeatType {
    #[default]
    None = 0,
    Underfloor = 1,
    Radiator = 2,
}

impl HeatType {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(HeatType::None),
            1 => Some(HeatType::Underfloor),
            2 => Some(HeatType::Radiator),
            _ => None,
        }
    }
}

impl TryFrom<u8> for HeatType {
    type Error = String;

    fn try_from(code: u8) -> Result<Self, Self::Error> {
        Self::from_code(code).ok_or_else(|| format!("heat type {code} outside 0..=2"))
    }
}

impl From<HeatType> for u8 {
    fn from(t: HeatType) -> u8 {
        t.code()
    }
}

/// One homogeneous material layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Conductivity, W/(m·K).
    pub k: f64,
    /// Thickness, m.
    pub d: f64,
    /// Density, kg/m³.
    pub rho: f64,
    /// Specific heat, J/(kg·K).
    pub cp: f64,
}

impl Layer {
    pub fn new(k: f64, d: f64, rho: f64, cp: f64) -> Self {
        Self { k, d, rho, cp }
    }

    /// Thermal resistance per unit area, m²·K/W.
    pub fn resistance(&self) -> f64 {
        self.d / self.k
    }
}

/// Area plus layer stack of one face category. Layers run outside-to-inside
/// as seen from the owning face's primary zone.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerStack {
    #[serde(rename = "A")]
    pub area: f64,
    #[serde(default)]
    pub layers: Vec<Layer>,
}

impl LayerStack {
    pub fn new(area: f64, layers: Vec<Layer>) -> Self {
        Self { area, layers }
    }

    pub fn is_absent(&self) -> bool {
        self.area == 0.0 && self.layers.is_empty()
    }

    /// The same stack seen from the other side.
    pub fn reversed(&self) -> Self {
        Self {
            area: self.area,
            layers: self.layers.iter().rev().copied().collect(),
        }
    }

    /// Σ d/k, m²·K/W.
    pub fn resistance(&self) -> f64 {
        self.layers.iter().map(Layer::resistance).sum()
    }
}

/// The five per-face material categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    /// Opaque walls and doors.
    Opeq,
    /// Door and window frames.
    Fra,
    /// Glass.
    Gla,
    /// Openings.
    Open,
    /// Roller shutters.
    Rs,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Opeq,
        Category::Fra,
        Category::Gla,
        Category::Open,
        Category::Rs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Opeq => "opeq",
            Category::Fra => "fra",
            Category::Gla => "gla",
            Category::Open => "open",
            Category::Rs => "RS",
        }
    }
}

/// One face-level parameter row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceRecord {
    pub z_pri: ZoneId,
    pub ori: Orientation,
    pub z_adj: ZoneId,
    pub typ: BoundaryType,
    #[serde(rename = "actVen", with = "flag")]
    pub act_ven: bool,
    /// `true` when underfloor heating is NOT installed in this face.
    #[serde(with = "flag")]
    pub split: bool,
    #[serde(default)]
    pub opeq: LayerStack,
    #[serde(default)]
    pub fra: LayerStack,
    #[serde(default)]
    pub gla: LayerStack,
    #[serde(default)]
    pub open: LayerStack,
    #[serde(rename = "RS", default)]
    pub rs: LayerStack,
    #[serde(default)]
    pub heat_type: HeatType,
    #[serde(default)]
    pub heat_loop: LoopId,
    #[serde(default)]
    pub heat_order: u32,
    #[serde(default)]
    pub heat_ctrl: u32,
    #[serde(rename = "azi_S", default)]
    pub azi_s: f64,
}

impl FaceRecord {
    /// A bare opaque face with no categories filled in.
    pub fn new(z_pri: ZoneId, ori: Orientation, z_adj: ZoneId, typ: BoundaryType) -> Self {
        Self {
            z_pri,
            ori,
            z_adj,
            typ,
            act_ven: false,
            split: true,
            opeq: LayerStack::default(),
            fra: LayerStack::default(),
            gla: LayerStack::default(),
            open: LayerStack::default(),
            rs: LayerStack::default(),
            heat_type: HeatType::None,
            heat_loop: 0,
            heat_order: 0,
            heat_ctrl: 0,
            azi_s: 0.0,
        }
    }

    pub fn key(&self) -> (ZoneId, Orientation) {
        (self.z_pri, self.ori)
    }

    pub fn is_external(&self) -> bool {
        self.z_adj == EXTERIOR
    }

    pub fn stack(&self, c: Category) -> &LayerStack {
        match c {
            Category::Opeq => &self.opeq,
            Category::Fra => &self.fra,
            Category::Gla => &self.gla,
            Category::Open => &self.open,
            Category::Rs => &self.rs,
        }
    }

    pub fn stack_mut(&mut self, c: Category) -> &mut LayerStack {
        match c {
            Category::Opeq => &mut self.opeq,
            Category::Fra => &mut self.fra,
            Category::Gla => &mut self.gla,
            Category::Open => &mut self.open,
            Category::Rs => &mut self.rs,
        }
    }

    pub fn total_area(&self) -> f64 {
        Category::ALL.iter().map(|&c| self.stack(c).area).sum()
    }

    pub fn carries_heating(&self) -> bool {
        self.heat_loop > 0 || self.heat_type != HeatType::None
    }

    /// The reciprocal record as seen from the adjacent zone. Hydronic
    /// mapping and the ventilation flag stay with the declaring side.
    pub fn mirrored(&self) -> Self {
        let mut m = FaceRecord::new(self.z_adj, self.ori.opposite(), self.z_pri, self.typ);
        for c in Category::ALL {
            *m.stack_mut(c) = self.stack(c).reversed();
        }
        m.azi_s = self.azi_s;
        m
    }
}

/// Integer 0/1 encoding of booleans, matching the table's flag columns.
mod flag {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!("flag must be 0 or 1, got {other}"))),
        }
    }
}

/// An axis-aligned zone volume occupying one grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneSpec {
    pub id: ZoneId,
    pub floor: u32,
    pub x: i32,
    pub y: i32,
    /// Extent along x (E–W), m.
    pub length: f64,
    /// Extent along y (N–S), m.
    pub width: f64,
    pub height: f64,
    /// Heating setpoint, °C.
    pub setpoint: f64,
}

impl ZoneSpec {
    pub fn new(id: ZoneId, (x, y, floor): (i32, i32, u32), dims: (f64, f64, f64), setpoint: f64) -> Self {
        Self {
            id,
            floor,
            x,
            y,
            length: dims.0,
            width: dims.1,
            height: dims.2,
            setpoint,
        }
    }

    pub fn floor_index(&self) -> u32 {
        self.floor
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }

    pub fn floor_area(&self) -> f64 {
        self.length * self.width
    }

    /// Geometric area of the face in direction `ori`.
    pub fn face_area(&self, ori: Orientation) -> f64 {
        match ori {
            Orientation::North | Orientation::South => self.length * self.height,
            Orientation::East | Orientation::West => self.width * self.height,
            Orientation::Up | Orientation::Down => self.length * self.width,
        }
    }

    pub fn cell(&self) -> (i64, i64, i64) {
        (i64::from(self.x), i64::from(self.y), i64::from(self.floor))
    }
}

/// Zones, faces and the building rotation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildingTopology {
    /// Degrees between the declared south face and true south (positive
    /// rotates towards west).
    #[serde(rename = "azi_S", default)]
    pub azi_s: f64,
    pub zones: Vec<ZoneSpec>,
    pub faces: Vec<FaceRecord>,
}

impl BuildingTopology {
    pub fn zone(&self, id: ZoneId) -> Option<&ZoneSpec> {
        self.zones.iter().find(|z| z.id == id)
    }

    pub fn face(&self, zone: ZoneId, ori: Orientation) -> Option<&FaceRecord> {
        self.faces.iter().find(|f| f.z_pri == zone && f.ori == ori)
    }

    pub fn face_mut(&mut self, zone: ZoneId, ori: Orientation) -> Option<&mut FaceRecord> {
        self.faces.iter_mut().find(|f| f.z_pri == zone && f.ori == ori)
    }

    /// Zone ids in ascending order.
    pub fn zone_ids(&self) -> Vec<ZoneId> {
        let mut ids: Vec<ZoneId> = self.zones.iter().map(|z| z.id).collect();
        ids.sort_unstable();
        ids
    }

    /// Distinct hydronic loop ids referenced by faces, ascending.
    pub fn loop_ids(&self) -> Vec<LoopId> {
        let mut ids: Vec<LoopId> = self
            .faces
            .iter()
            .filter(|f| f.heat_loop > 0)
            .map(|f| f.heat_loop)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Faces sorted by `(z_pri, ori)`.
    pub fn sorted_faces(&self) -> Vec<&FaceRecord> {
        let mut faces: Vec<&FaceRecord> = self.faces.iter().collect();
        faces.sort_by_key(|f| f.key());
        faces
    }

    /// Applies the building rotation to every face record as well.
    pub fn set_azimuth(&mut self, azi_s: f64) {
        self.azi_s = azi_s;
        for f in &mut self.faces {
            f.azi_s = azi_s;
        }
    }
}
