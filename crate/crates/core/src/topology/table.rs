//! Face-level parameter table in CSV form.
//!
//! ```text
//! #building,<azi_S>
//! #zone,<id>,<floor>,<x>,<y>,<length>,<width>,<height>,<setpoint>
//! z_pri,ori,z_adj,typ,actVen,split,A_opeq,n_layers_opeq,k_opeq_1,d_opeq_1,rho_opeq_1,cp_opeq_1,...,heat_type,heat_loop,heat_order,heat_ctrl,azi_S
//! ```
//!
//! Zone geometry rides along as `#`-prefixed metadata lines ahead of the
//! header. Each category gets as many `(k, d, rho, cp)` slots as its longest
//! stack in the table; unused slots are left empty.

use std::fmt::Write as _;

use thiserror::Error;

use super::{
    validate_topology, BoundaryType, BuildingTopology, Category, FaceRecord, HeatType, Layer, LayerStack, Orientation,
    ValidationReport, ZoneSpec,
};

const LEAD: [&str; 6] = ["z_pri", "ori", "z_adj", "typ", "actVen", "split"];
const TAIL: [&str; 5] = ["heat_type", "heat_loop", "heat_order", "heat_ctrl", "azi_S"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TableError {
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: usize, message: String },
    #[error("topology invalid: {0}")]
    Invalid(ValidationReport),
}

fn perr(row: usize, column: usize, message: impl Into<String>) -> TableError {
    TableError::Parse {
        row,
        column,
        message: message.into(),
    }
}

fn header(slots: &[usize; 5]) -> Vec<String> {
    let mut cols: Vec<String> = LEAD.iter().map(|s| s.to_string()).collect();
    for (c, &n) in Category::ALL.iter().zip(slots) {
        cols.push(format!("A_{}", c.name()));
        cols.push(format!("n_layers_{}", c.name()));
        for i in 1..=n {
            for q in ["k", "d", "rho", "cp"] {
                cols.push(format!("{q}_{}_{i}", c.name()));
            }
        }
    }
    cols.extend(TAIL.iter().map(|s| s.to_string()));
    cols
}

/// Serializes a valid topology. Faces are written in their stored order.
pub fn export_table(topo: &BuildingTopology) -> Result<String, TableError> {
    let report = validate_topology(topo);
    if !report.is_valid() {
        return Err(TableError::Invalid(report));
    }
    let mut slots = [0usize; 5];
    for f in &topo.faces {
        for (i, c) in Category::ALL.iter().enumerate() {
            slots[i] = slots[i].max(f.stack(*c).layers.len());
        }
    }

    let mut out = String::new();
    let _ = writeln!(out, "#building,{}", topo.azi_s);
    for z in &topo.zones {
        let _ = writeln!(
            out,
            "#zone,{},{},{},{},{},{},{},{}",
            z.id, z.floor, z.x, z.y, z.length, z.width, z.height, z.setpoint
        );
    }
    out.push_str(&header(&slots).join(","));
    out.push('\n');
    for f in &topo.faces {
        let mut cells: Vec<String> = vec![
            f.z_pri.to_string(),
            f.ori.code().to_string(),
            f.z_adj.to_string(),
            f.typ.code().to_string(),
            u8::from(f.act_ven).to_string(),
            u8::from(f.split).to_string(),
        ];
        for (c, &n) in Category::ALL.iter().zip(&slots) {
            let s = f.stack(*c);
            cells.push(s.area.to_string());
            cells.push(s.layers.len().to_string());
            for i in 0..n {
                match s.layers.get(i) {
                    Some(l) => cells.extend([l.k, l.d, l.rho, l.cp].iter().map(f64::to_string)),
                    None => cells.extend(std::iter::repeat_n(String::new(), 4)),
                }
            }
        }
        cells.extend([
            f.heat_type.code().to_string(),
            f.heat_loop.to_string(),
            f.heat_order.to_string(),
            f.heat_ctrl.to_string(),
            f.azi_s.to_string(),
        ]);
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

struct Cursor<'a> {
    row: usize,
    cells: Vec<&'a str>,
    names: &'a [String],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn next_raw(&mut self) -> (usize, &'a str) {
        let col = self.pos + 1;
        let cell = self.cells[self.pos].trim();
        self.pos += 1;
        (col, cell)
    }

    fn parse<T: std::str::FromStr>(&mut self) -> Result<T, TableError> {
        let (col, cell) = self.next_raw();
        cell.parse::<T>().map_err(|_| {
            perr(self.row, col, format!("cannot parse {:?} in column {}", cell, self.names[col - 1]))
        })
    }

    fn flag(&mut self) -> Result<bool, TableError> {
        let col = self.pos + 1;
        match self.parse::<u8>()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(perr(self.row, col, format!("flag must be 0 or 1, got {v}"))),
        }
    }

    fn skip_empty(&mut self, n: usize) -> Result<(), TableError> {
        for _ in 0..n {
            let (col, cell) = self.next_raw();
            if !cell.is_empty() {
                return Err(perr(self.row, col, "value beyond n_layers"));
            }
        }
        Ok(())
    }
}

fn parse_header(row: usize, line: &str) -> Result<([usize; 5], Vec<String>), TableError> {
    let names: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
    let mut pos = 0;
    let expect = |name: &str, pos: &mut usize| -> Result<(), TableError> {
        match names.get(*pos) {
            Some(n) if n == name => {
                *pos += 1;
                Ok(())
            }
            Some(n) => Err(perr(row, *pos + 1, format!("expected header {name:?}, found {n:?}"))),
            None => Err(perr(row, *pos + 1, format!("missing header {name:?}"))),
        }
    };
    for name in LEAD {
        expect(name, &mut pos)?;
    }
    let mut slots = [0usize; 5];
    for (ci, c) in Category::ALL.iter().enumerate() {
        expect(&format!("A_{}", c.name()), &mut pos)?;
        expect(&format!("n_layers_{}", c.name()), &mut pos)?;
        let mut i = 1;
        while names.get(pos).is_some_and(|n| *n == format!("k_{}_{i}", c.name())) {
            for q in ["k", "d", "rho", "cp"] {
                expect(&format!("{q}_{}_{i}", c.name()), &mut pos)?;
            }
            i += 1;
        }
        slots[ci] = i - 1;
    }
    for name in TAIL {
        expect(name, &mut pos)?;
    }
    if pos != names.len() {
        return Err(perr(row, pos + 1, "unexpected trailing column"));
    }
    Ok((slots, names))
}

fn parse_meta(row: usize, line: &str, topo: &mut BuildingTopology) -> Result<(), TableError> {
    let cells: Vec<&str> = line.trim_start_matches('#').split(',').map(str::trim).collect();
    let num = |i: usize| -> Result<f64, TableError> {
        cells
            .get(i)
            .ok_or_else(|| perr(row, i + 1, "missing field"))?
            .parse::<f64>()
            .map_err(|_| perr(row, i + 1, format!("cannot parse {:?}", cells[i])))
    };
    let int = |i: usize| -> Result<i64, TableError> {
        cells
            .get(i)
            .ok_or_else(|| perr(row, i + 1, "missing field"))?
            .parse::<i64>()
            .map_err(|_| perr(row, i + 1, format!("cannot parse {:?}", cells[i])))
    };
    match cells.first().copied() {
        Some("building") => {
            if cells.len() != 2 {
                return Err(perr(row, 1, "#building expects one value"));
            }
            topo.azi_s = num(1)?;
        }
        Some("zone") => {
            if cells.len() != 9 {
                return Err(perr(row, 1, "#zone expects 8 values"));
            }
            let id = u32::try_from(int(1)?).map_err(|_| perr(row, 2, "zone id out of range"))?;
            let floor = u32::try_from(int(2)?).map_err(|_| perr(row, 3, "floor must be >= 0"))?;
            let x = i32::try_from(int(3)?).map_err(|_| perr(row, 4, "x out of range"))?;
            let y = i32::try_from(int(4)?).map_err(|_| perr(row, 5, "y out of range"))?;
            topo.zones.push(ZoneSpec {
                id,
                floor,
                x,
                y,
                length: num(5)?,
                width: num(6)?,
                height: num(7)?,
                setpoint: num(8)?,
            });
        }
        _ => {}
    }
    Ok(())
}

/// Parses and validates a parameter table.
pub fn import_table(text: &str) -> Result<BuildingTopology, TableError> {
    let topo = parse_table(text)?;
    let report = validate_topology(&topo);
    if !report.is_valid() {
        return Err(TableError::Invalid(report));
    }
    Ok(topo)
}

/// Parses a parameter table without checking topology invariants, e.g. to
/// run [`mirror_fill`](super::mirror_fill) on a table that declares each
/// adjacency from one side only.
pub fn parse_table(text: &str) -> Result<BuildingTopology, TableError> {
    let mut topo = BuildingTopology::default();
    let mut header: Option<([usize; 5], Vec<String>)> = None;
    let mut last_row = 0;

    for (i, raw) in text.lines().enumerate() {
        let row = i + 1;
        last_row = row;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with('#') {
            parse_meta(row, line, &mut topo)?;
            continue;
        }
        let Some((slots, names)) = &header else {
            header = Some(parse_header(row, line)?);
            continue;
        };
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != names.len() {
            return Err(perr(row, cells.len().min(names.len()) + 1, format!("expected {} columns, found {}", names.len(), cells.len())));
        }
        let mut cur = Cursor {
            row,
            cells,
            names,
            pos: 0,
        };
        let z_pri = cur.parse()?;
        let ori_col = cur.pos + 1;
        let ori = Orientation::from_code(cur.parse()?).ok_or_else(|| perr(row, ori_col, "orientation outside 1..=6"))?;
        let z_adj = cur.parse()?;
        let typ_col = cur.pos + 1;
        let typ = BoundaryType::from_code(cur.parse()?).ok_or_else(|| perr(row, typ_col, "boundary type outside 1..=5"))?;
        let mut face = FaceRecord::new(z_pri, ori, z_adj, typ);
        face.act_ven = cur.flag()?;
        face.split = cur.flag()?;
        for (c, &slot) in Category::ALL.iter().zip(slots.iter()) {
            let area: f64 = cur.parse()?;
            let n_col = cur.pos + 1;
            let n: usize = cur.parse()?;
            if n > slot {
                return Err(perr(row, n_col, format!("n_layers_{} = {n} exceeds {slot} header slots", c.name())));
            }
            let mut layers = Vec::with_capacity(n);
            for _ in 0..n {
                layers.push(Layer::new(cur.parse()?, cur.parse()?, cur.parse()?, cur.parse()?));
            }
            cur.skip_empty(4 * (slot - n))?;
            *face.stack_mut(*c) = LayerStack::new(area, layers);
        }
        let ht_col = cur.pos + 1;
        face.heat_type = HeatType::from_code(cur.parse()?).ok_or_else(|| perr(row, ht_col, "heat_type outside 0..=2"))?;
        face.heat_loop = cur.parse()?;
        face.heat_order = cur.parse()?;
        face.heat_ctrl = cur.parse()?;
        face.azi_s = cur.parse()?;
        topo.faces.push(face);
    }

    if topo.zones.is_empty() {
        return Err(perr(last_row.max(1), 1, "no zones"));
    }
    if header.is_none() {
        return Err(perr(last_row.max(1), 1, "missing face table header"));
    }
    Ok(topo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::mirror_fill;

    /// Three zones: two side by side on the ground floor, one above the
    /// first. Every adjacency is declared from one side only.
    pub(crate) fn three_zone_table() -> &'static str {
        "#building,0\n\
         #zone,101,0,0,0,5,4,3,21\n\
         #zone,102,0,1,0,5,4,3,20\n\
         #zone,201,1,0,0,5,4,3,21\n\
         z_pri,ori,z_adj,typ,actVen,split,A_opeq,n_layers_opeq,k_opeq_1,d_opeq_1,rho_opeq_1,cp_opeq_1,k_opeq_2,d_opeq_2,rho_opeq_2,cp_opeq_2,A_fra,n_layers_fra,k_fra_1,d_fra_1,rho_fra_1,cp_fra_1,A_gla,n_layers_gla,k_gla_1,d_gla_1,rho_gla_1,cp_gla_1,A_open,n_layers_open,A_RS,n_layers_RS,heat_type,heat_loop,heat_order,heat_ctrl,azi_S\n\
         101,1,0,4,0,1,15,2,0.04,0.1,30,1400,0.9,0.2,1800,900,0,0,,,,,0,0,,,,,0,0,0,0,0,0,0,0,0\n\
         101,2,102,3,0,1,12,1,0.5,0.12,1200,1000,,,,,0,0,,,,,0,0,,,,,0,0,0,0,0,0,0,0,0\n\
         101,3,0,2,0,1,12,2,0.04,0.1,30,1400,0.9,0.2,1800,900,0.5,1,0.2,0.06,700,1600,2.5,1,1,0.008,2500,840,0,0,0,0,0,0,0,0,0\n\
         101,4,0,4,0,1,12,2,0.04,0.1,30,1400,0.9,0.2,1800,900,0,0,,,,,0,0,,,,,0,0,0,0,0,0,0,0,0\n\
         101,6,0,5,0,0,20,2,0.035,0.1,30,1400,1.4,0.06,2000,1000,0,0,,,,,0,0,,,,,0,0,0,0,1,1,1,0,0\n\
         102,1,0,4,0,1,15,2,0.04,0.1,30,1400,0.9,0.2,1800,900,0,0,,,,,0,0,,,,,0,0,0,0,0,0,0,0,0\n\
         102,2,0,4,0,1,12,2,0.04,0.1,30,1400,0.9,0.2,1800,900,0,0,,,,,0,0,,,,,0,0,0,0,0,0,0,0,0\n\
         102,3,0,4,0,1,15,2,0.04,0.1,30,1400,0.9,0.2,1800,900,0,0,,,,,0,0,,,,,0,0,0,0,0,0,0,0,0\n\
         102,5,0,4,0,1,20,2,0.04,0.2,30,1400,0.9,0.2,1800,900,0,0,,,,,0,0,,,,,0,0,0,0,0,0,0,0,0\n\
         102,6,0,5,0,1,20,2,0.035,0.1,30,1400,1.4,0.06,2000,1000,0,0,,,,,0,0,,,,,0,0,0,0,0,0,0,0,0\n\
         201,1,0,4,0,1,15,2,0.04,0.1,30,1400,0.9,0.2,1800,900,0,0,,,,,0,0,,,,,0,0,0,0,0,0,0,0,0\n\
         201,2,0,4,0,1,12,2,0.04,0.1,30,1400,0.9,0.2,1800,900,0,0,,,,,0,0,,,,,0,0,0,0,0,0,0,0,0\n\
         201,3,0,4,0,1,15,2,0.04,0.1,30,1400,0.9,0.2,1800,900,0,0,,,,,0,0,,,,,0,0,0,0,0,0,0,0,0\n\
         201,4,0,4,0,1,12,2,0.04,0.1,30,1400,0.9,0.2,1800,900,0,0,,,,,0,0,,,,,0,0,0,0,0,0,0,0,0\n\
         201,5,0,4,0,1,20,2,0.04,0.2,30,1400,0.9,0.2,1800,900,0,0,,,,,0,0,,,,,0,0,0,0,0,0,0,0,0\n\
         201,6,101,4,0,1,20,1,1.4,0.2,2000,1000,,,,,0,0,,,,,0,0,,,,,0,0,0,0,0,0,0,0,0\n"
    }

    #[test]
    fn three_zone_table_needs_mirrors_then_round_trips() {
        // Only one side of each adjacency is declared, so the raw table is
        // rejected until mirrors are filled.
        let err = import_table(three_zone_table()).unwrap_err();
        assert!(matches!(err, TableError::Invalid(ref r) if r.has(crate::topology::Rule::MissingMirror)));

        let topo = mirror_fill(&parse_table(three_zone_table()).unwrap()).unwrap();
        assert_eq!(topo.zones.len(), 3);
        assert_eq!(topo.face(101, Orientation::East).unwrap().z_adj, 102);
        assert_eq!(topo.face(102, Orientation::West).unwrap().z_adj, 101);
        assert_eq!(topo.face(201, Orientation::Down).unwrap().z_adj, 101);
        assert_eq!(topo.face(101, Orientation::Up).unwrap().z_adj, 201);
        assert_eq!(topo.loop_ids(), vec![1]);
        let text = export_table(&topo).unwrap();
        assert_eq!(import_table(&text).unwrap(), topo);
    }

    #[test]
    fn empty_table_has_no_zones() {
        match import_table("").unwrap_err() {
            TableError::Parse { message, .. } => assert_eq!(message, "no zones"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_cell_reports_locus() {
        let mut topo = crate::synthetic::row_building(2, &Default::default());
        topo = mirror_fill(&topo).unwrap();
        let text = export_table(&topo).unwrap();
        let broken = text.replacen("\n101,1,", "\n101,x,", 1);
        match import_table(&broken).unwrap_err() {
            TableError::Parse { row, column, .. } => {
                let expected_row = text.lines().position(|l| l.starts_with("101,1,")).unwrap() + 1;
                assert_eq!((row, column), (expected_row, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn export_import_export_is_byte_identical() {
        let topo = mirror_fill(&crate::synthetic::row_building(3, &Default::default())).unwrap();
        let text = export_table(&topo).unwrap();
        let back = import_table(&text).unwrap();
        assert_eq!(back, topo);
        assert_eq!(export_table(&back).unwrap(), text);
    }
}
