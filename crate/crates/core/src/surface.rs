//! Attack-surface analytics: how many construction VTables a hierarchy
//! produces and which offsets they carry.
//!
//! Every construction VTable is a legitimate vptr target that ordinary
//! VTable-based defenses do not know about. A class sitting `n` levels of
//! (non-virtual) derivation above a virtual base gets
//! `(n+1)(n+2)/2 - 1` of them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::itanium::VTables;
use crate::recovery::Hierarchy;

/// Construction VTables produced at inheritance depth `depth`.
pub fn predict_cvtables(depth: u64) -> u64 {
    (depth + 1) * (depth + 2) / 2 - 1
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SurfaceReport {
    pub n_construction_vtables: usize,
    pub unique_vbase_offsets: BTreeSet<i64>,
    /// Non-zero offsets-to-top (secondary sub-VTables).
    pub unique_offsets_to_top: BTreeSet<i64>,
    pub vbase_offset_counts: BTreeMap<i64, usize>,
    pub offset_to_top_counts: BTreeMap<i64, usize>,
    /// Depth observed in the recovered hierarchy → predicted construction
    /// VTable count for a class at that depth.
    pub per_depth_prediction: BTreeMap<u64, u64>,
    pub max_depth: Option<u64>,
}

/// Offsets carried by construction groups only; depths come from the
/// hierarchy when one is available.
pub fn offset_distribution(vtables: &VTables, hierarchy: Option<&Hierarchy>) -> SurfaceReport {
    let mut r = SurfaceReport::default();
    for g in vtables.groups().iter().filter(|g| g.is_construction) {
        r.n_construction_vtables += 1;
        for m in g.members() {
            for &v in &m.vbase_offsets {
                *r.vbase_offset_counts.entry(v).or_default() += 1;
            }
            if m.offset_to_top != 0 {
                *r.offset_to_top_counts.entry(m.offset_to_top).or_default() += 1;
            }
        }
    }
    r.unique_vbase_offsets = r.vbase_offset_counts.keys().copied().collect();
    r.unique_offsets_to_top = r.offset_to_top_counts.keys().copied().collect();
    if let Some(h) = hierarchy {
        for id in h.nodes.keys() {
            if let Some(d) = h.depth(*id) {
                let d = d as u64;
                r.per_depth_prediction.insert(d, predict_cvtables(d));
                r.max_depth = r.max_depth.max(Some(d));
            }
        }
    }
    r
}

fn signed_hex(v: i64) -> String {
    if v < 0 {
        format!("-{:#x}", v.unsigned_abs())
    } else {
        format!("{v:#x}")
    }
}

impl SurfaceReport {
    /// Two gnuplot data blocks (`index 0`: vbase-offsets, `index 1`:
    /// offsets-to-top), each `value count` per line.
    pub fn gnuplot(&self) -> String {
        let mut s = String::new();
        for (title, counts) in [
            ("vbase-offset", &self.vbase_offset_counts),
            ("offset-to-top", &self.offset_to_top_counts),
        ] {
            let _ = writeln!(s, "# {title} count");
            for (v, c) in counts {
                let _ = writeln!(s, "{v} {c}");
            }
            s.push_str("\n\n");
        }
        s
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "construction vtables: {}", self.n_construction_vtables);
        for (title, counts) in [
            ("vbase-offsets", &self.vbase_offset_counts),
            ("offsets-to-top", &self.offset_to_top_counts),
        ] {
            let _ = writeln!(s, "{title} ({} unique):", counts.len());
            for (v, c) in counts {
                let _ = writeln!(s, "  {v:>8}  {:>8}  x{c}", signed_hex(*v));
            }
        }
        if !self.per_depth_prediction.is_empty() {
            let _ = writeln!(s, "depth  predicted construction vtables");
            for (d, p) in &self.per_depth_prediction {
                let _ = writeln!(s, "  {d:>3}  {p}");
            }
        }
        s
    }
}
