use std::collections::BTreeMap;

use thiserror::Error;

use super::validate::mirror_consistent;
use super::{BuildingTopology, FaceRecord, Orientation, ZoneId};

/// Both sides of an adjacency were declared and disagree.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("conflicting mirror faces {}/{} and {}/{}", .first.z_pri, .first.ori.letter(), .second.z_pri, .second.ori.letter())]
pub struct MirrorConflict {
    pub first: Box<FaceRecord>,
    pub second: Box<FaceRecord>,
}

/// Synthesizes the missing side of every internal adjacency.
///
/// The output lists faces sorted by `(z_pri, ori)`; applying it twice gives
/// the same topology. Faces pointing at unknown zones are left alone for
/// [`validate_topology`](super::validate_topology) to report.
pub fn mirror_fill(topo: &BuildingTopology) -> Result<BuildingTopology, MirrorConflict> {
    let mut faces: BTreeMap<(ZoneId, Orientation), FaceRecord> = BTreeMap::new();
    for f in &topo.faces {
        faces.entry(f.key()).or_insert_with(|| f.clone());
    }

    let mut synthesized = Vec::new();
    for f in faces.values() {
        if f.is_external() || f.z_adj == f.z_pri || topo.zone(f.z_adj).is_none() {
            continue;
        }
        match faces.get(&(f.z_adj, f.ori.opposite())) {
            Some(m) if m.z_adj == f.z_pri => {
                if !mirror_consistent(f, m) {
                    let (first, second) = if f.key() < m.key() { (f, m) } else { (m, f) };
                    return Err(MirrorConflict {
                        first: Box::new(first.clone()),
                        second: Box::new(second.clone()),
                    });
                }
            }
            Some(_) => {}
            None => synthesized.push(f.mirrored()),
        }
    }
    for m in synthesized {
        faces.insert(m.key(), m);
    }

    let mut zones = topo.zones.clone();
    zones.sort_by_key(|z| z.id);
    Ok(BuildingTopology {
        azi_s: topo.azi_s,
        zones,
        faces: faces.into_values().collect(),
    })
}
