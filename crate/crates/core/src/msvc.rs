//! MSVC ABI: VB-Tables and virtual/intermediate base recovery.
//!
//! MSVC keeps virtual-base displacements in a separate VB-Table referenced
//! by a vbptr inside the object, and has no VTTs or construction VTables.
//! A VB-Table is recognised by its first entry (a fixed constant, the
//! offset from the vbptr back to its sub-object) followed by positive
//! displacements.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::addr::Va;
use crate::ctor::CtorSummary;
use crate::disasm::{Listing, Operand};
use crate::image::BinaryImage;
use crate::itanium::{find_vtables, ValidationRule, VTables};
use crate::recovery::{build_tree_with, ClassNode, EdgeKind, Evidence, Hierarchy, InheritanceEdge, RecoveryIssue};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VbTable {
    pub base: Va,
    /// Displacements from the vbptr to each virtual base.
    pub entries: Vec<i64>,
    pub first_constant: i64,
}

/// Recognition parameters for VB-Tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VbTableConfig {
    /// Value of the first entry. 0 means the vbptr sits at the start of its
    /// sub-object.
    pub constant: i64,
    /// Entries must lie strictly between 0 and this value.
    pub cap_offset: i64,
    /// Entry width in bytes; MSVC uses 32-bit entries.
    pub entry_size: u8,
}

impl Default for VbTableConfig {
    fn default() -> Self {
        VbTableConfig {
            constant: 0,
            cap_offset: 0x10_0000,
            entry_size: 4,
        }
    }
}

/// The recognition predicate applied at one address.
pub fn vbtable_at(img: &BinaryImage, addr: Va, cfg: &VbTableConfig) -> Option<VbTable> {
    let step = u64::from(cfg.entry_size);
    if img.read_sized(addr, cfg.entry_size).ok()? != cfg.constant {
        return None;
    }
    let mut entries = Vec::new();
    let mut loc = Va(addr.0 + step);
    while let Ok(w) = img.read_sized(loc, cfg.entry_size) {
        if !(0 < w && w < cfg.cap_offset) {
            break;
        }
        entries.push(w);
        loc = Va(loc.0 + step);
    }
    (!entries.is_empty()).then_some(VbTable {
        base: addr,
        entries,
        first_constant: cfg.constant,
    })
}

/// Addresses referenced from code: immediates and absolute memory
/// operands.
pub fn referenced_addresses(listing: &Listing) -> BTreeSet<Va> {
    let mut out = BTreeSet::new();
    for body in listing.values() {
        for i in &body.instrs {
            for o in [i.dst, i.src].into_iter().flatten() {
                match o {
                    Operand::Imm(v) => {
                        out.insert(Va(v as u64));
                    }
                    Operand::Mem(m) if m.base.is_none() => {
                        out.insert(Va(m.disp as u64));
                    }
                    _ => {}
                }
            }
        }
    }
    out
}

/// Every code-referenced data address that satisfies [`vbtable_at`].
pub fn get_vbtables(img: &BinaryImage, listing: &Listing, cfg: &VbTableConfig) -> BTreeMap<Va, VbTable> {
    referenced_addresses(listing)
        .into_iter()
        .filter(|a| img.is_data(*a))
        .filter_map(|a| vbtable_at(img, a, cfg).map(|t| (a, t)))
        .collect()
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct MsvcMeta {
    pub vtables: VTables,
    pub vbtables: BTreeMap<Va, VbTable>,
}

pub fn recover_msvc_metadata(img: &BinaryImage, listing: &Listing, cfg: &VbTableConfig) -> MsvcMeta {
    MsvcMeta {
        vtables: find_vtables(img, listing, ValidationRule::Msvc),
        vbtables: get_vbtables(img, listing, cfg),
    }
}

/// Class of each constructor: the VTable it stores at the lowest offset.
pub fn msvc_ctor_classes(summaries: &BTreeMap<Va, CtorSummary>, vtables: &VTables) -> BTreeMap<Va, Va> {
    summaries
        .values()
        .filter(|s| s.is_ctor())
        .filter_map(|s| Some((s.func, vtables.group_of(s.primary_write()?)?.id())))
        .collect()
}

/// Virtual edges where a call's `this` displacement equals a VB-Table
/// entry (relative to the vbptr's position); intermediate edges where the
/// callee initializes a known vbptr.
pub fn recover_msvc_bases(
    summaries: &BTreeMap<Va, CtorSummary>,
    vbtables: &BTreeMap<Va, VbTable>,
    vtables: &VTables,
) -> (Vec<InheritanceEdge>, Vec<RecoveryIssue>) {
    let classes = msvc_ctor_classes(summaries, vtables);
    let mut edges = Vec::new();
    let mut issues = Vec::new();
    for (&func, &x) in &classes {
        let s = &summaries[&func];
        // The first VB-Table pointer written in program order.
        let vbptr = s.vbptr_writes.first().copied();
        if vbptr.is_none() {
            issues.push(RecoveryIssue::MissingVbptr { ctor: func });
        }
        for call in &s.calls {
            let Some(target) = call.target else {
                issues.push(RecoveryIssue::UnresolvedTarget { ctor: func, site: call.site });
                continue;
            };
            let Some(&y) = classes.get(&target) else {
                continue;
            };
            if y == x {
                continue;
            }
            if let (Some(w), Some(k)) = (vbptr, call.this_offset()) {
                if let Some(t) = vbtables.get(&w.value) {
                    if t.entries.iter().any(|e| w.offset + e == k) {
                        edges.push(InheritanceEdge::new(
                            x,
                            y,
                            EdgeKind::Virtual,
                            Evidence::VbaseOffsetMatch { offset: k, vbtable: Some(w.value) },
                        ));
                    }
                }
            }
            if let Some(w) = summaries[&target].first_vbptr() {
                edges.push(InheritanceEdge::new(x, y, EdgeKind::Intermediate, Evidence::VbptrInit { vbtable: w.value }));
            }
        }
    }
    (edges, issues)
}

pub fn msvc_nodes(summaries: &BTreeMap<Va, CtorSummary>, meta: &MsvcMeta) -> BTreeMap<Va, ClassNode> {
    let classes = msvc_ctor_classes(summaries, &meta.vtables);
    meta.vtables
        .groups()
        .iter()
        .map(|g| {
            let ctor_tables: Vec<&crate::msvc::VbTable> = classes
                .iter()
                .filter(|(_, c)| **c == g.id())
                .filter_map(|(f, _)| summaries[f].vbptr_writes.first())
                .filter_map(|w| meta.vbtables.get(&w.value))
                .collect();
            let vbase_offsets = ctor_tables.first().map(|t| t.entries.clone()).unwrap_or_default();
            (
                g.id(),
                ClassNode {
                    id: g.id(),
                    name: None,
                    stand_in: false,
                    vbase_offsets,
                    has_vtt: !ctor_tables.is_empty(),
                },
            )
        })
        .collect()
}

pub fn recover_msvc(meta: &MsvcMeta, summaries: &BTreeMap<Va, CtorSummary>) -> Hierarchy {
    let (edges, issues) = recover_msvc_bases(summaries, &meta.vbtables, &meta.vtables);
    build_tree_with(msvc_nodes(summaries, meta), edges, issues)
}
