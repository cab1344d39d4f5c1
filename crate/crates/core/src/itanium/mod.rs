//! Itanium C++ ABI metadata: VTable groups, VTTs, sub-VTTs, vbase-offsets
//! and the construction → regular VTable mapping.
//!
//! The passes run in data-dependency order:
//! [`find_vtables`] → [`find_vtts`] → [`group_subvtts`] →
//! [`extract_vbase_offsets`] → [`map_construction_to_regular`].
//! [`recover_metadata`] chains them.

mod mapping;
mod vbase;
mod vtables;
mod vtt;

use std::collections::BTreeMap;

use serde::Serialize;

use crate::addr::Va;
use crate::disasm::Listing;
use crate::image::BinaryImage;

pub use mapping::{map_construction_to_regular, Mapping, MappingIssue};
pub use vbase::{apply_vbase_offsets, extract_vbase_offsets, SubVttVbase};
pub use vtables::{collect_candidates, find_vtables, find_vtables_in, validate_vptr, ValidationRule};
pub use vtt::{find_vtts, group_subvtts, Termination, VttOptions};

/// One sub-VTable (primary or secondary), identified by its address point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubVTable {
    pub address_point: Va,
    pub offset_to_top: i64,
    pub rtti_slot: Va,
    pub fn_ptrs: Vec<Va>,
    /// Confirmed vbase-offsets stored above this sub-VTable, each > 0.
    pub vbase_offsets: Vec<i64>,
    pub vcall_region_present: bool,
}

impl SubVTable {
    pub fn is_primary(&self) -> bool {
        self.offset_to_top == 0
    }
}

/// A complete-object (or construction) VTable: primary plus the secondary
/// sub-VTables laid out after it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VTableGroup {
    pub primary: SubVTable,
    pub secondaries: Vec<SubVTable>,
    pub is_construction: bool,
    pub group_key: Vec<Va>,
}

impl VTableGroup {
    pub fn new(primary: SubVTable, secondaries: Vec<SubVTable>) -> Self {
        let group_key = std::iter::once(&primary)
            .chain(&secondaries)
            .flat_map(|s| s.fn_ptrs.iter().copied())
            .collect();
        VTableGroup {
            primary,
            secondaries,
            is_construction: false,
            group_key,
        }
    }

    pub fn id(&self) -> Va {
        self.primary.address_point
    }

    pub fn members(&self) -> impl Iterator<Item = &SubVTable> {
        std::iter::once(&self.primary).chain(&self.secondaries)
    }

    /// All vbase-offsets, primary first then each secondary in address
    /// order.
    pub fn vbase_offsets(&self) -> Vec<i64> {
        self.members().flat_map(|m| m.vbase_offsets.iter().copied()).collect()
    }

    /// Virtual-base displacements from the top of the object: each
    /// vbase-offset plus the position of the sub-object it was read from.
    pub fn vbase_displacements(&self) -> Vec<i64> {
        let mut v: Vec<i64> = self
            .members()
            .flat_map(|m| m.vbase_offsets.iter().map(move |o| o - m.offset_to_top))
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Wrapping sum of all function pointers, the coarse mapping key.
    pub fn fn_ptr_sum(&self) -> u64 {
        self.group_key.iter().fold(0u64, |a, v| a.wrapping_add(v.0))
    }
}

/// VTable groups sorted by primary address point, with an index from every
/// address point to its (group, member) position.
#[derive(Debug, Clone, Default, Serialize)]
#[serde(transparent)]
pub struct VTables {
    groups: Vec<VTableGroup>,
    #[serde(skip)]
    index: BTreeMap<Va, (usize, usize)>,
}

impl VTables {
    pub fn new(mut groups: Vec<VTableGroup>) -> Self {
        groups.sort_by_key(|g| g.id());
        let mut index = BTreeMap::new();
        for (gi, g) in groups.iter().enumerate() {
            for (mi, m) in g.members().enumerate() {
                index.insert(m.address_point, (gi, mi));
            }
        }
        VTables { groups, index }
    }

    pub fn groups(&self) -> &[VTableGroup] {
        &self.groups
    }

    pub fn groups_mut(&mut self) -> &mut [VTableGroup] {
        &mut self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn is_address_point(&self, v: Va) -> bool {
        self.index.contains_key(&v)
    }

    pub fn address_points(&self) -> impl Iterator<Item = Va> + '_ {
        self.index.keys().copied()
    }

    pub fn locate(&self, v: Va) -> Option<(usize, usize)> {
        self.index.get(&v).copied()
    }

    pub fn sub(&self, v: Va) -> Option<&SubVTable> {
        let (gi, mi) = self.locate(v)?;
        self.groups[gi].members().nth(mi)
    }

    pub fn group_of(&self, v: Va) -> Option<&VTableGroup> {
        self.locate(v).map(|(gi, _)| &self.groups[gi])
    }

    pub fn group(&self, primary: Va) -> Option<&VTableGroup> {
        match self.locate(primary) {
            Some((gi, 0)) => Some(&self.groups[gi]),
            _ => None,
        }
    }

    pub fn offset_to_top(&self, v: Va) -> Option<i64> {
        self.sub(v).map(|s| s.offset_to_top)
    }
}

/// An array of VTable address points found in data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Vtt {
    pub base: Va,
    pub entries: Vec<Va>,
    pub sub_vtts: Vec<SubVtt>,
    pub owner_vptr: Va,
    /// Entry size in bytes (the image word size).
    #[serde(skip)]
    pub stride: u64,
    /// Why the forward scan stopped.
    pub terminated_by: Termination,
    /// Where the alternative boundary rule would have cut this VTT, when
    /// it disagrees with the rule in force.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alternative_split: Option<usize>,
}

impl Vtt {
    pub fn end(&self) -> Va {
        Va(self.base.0 + self.stride * self.entries.len() as u64)
    }

    pub fn contains(&self, addr: Va) -> bool {
        addr >= self.base && addr < self.end()
    }

    /// Entry index of a slot address.
    pub fn slot_index(&self, addr: Va) -> Option<usize> {
        (self.contains(addr) && (addr.0 - self.base.0).is_multiple_of(self.stride))
            .then(|| ((addr.0 - self.base.0) / self.stride) as usize)
    }

    /// The sub-VTT whose entries include the one stored at `addr`.
    pub fn sub_vtt_at(&self, addr: Va) -> Option<&SubVtt> {
        let idx = self.slot_index(addr)?;
        let target = self.entries[idx];
        self.sub_vtts.iter().find(|s| s.member_vptrs.contains(&target))
    }
}

/// A run of VTT entries covering one VTable group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubVtt {
    /// Address of the VTT slot holding `primary_vptr`.
    pub start: Va,
    pub primary_vptr: Va,
    pub member_vptrs: Vec<Va>,
    pub is_construction: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize)]
pub enum MetaError {
    #[error("VTT at {0} has no entry with offset-to-top 0")]
    NoPrimaryFound(Va),
}

/// Everything the Itanium passes recover.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ItaniumMeta {
    pub vtables: VTables,
    pub vtts: Vec<Vtt>,
    pub mapping: Mapping,
    /// VTTs dropped because no sub-VTT confirmed a vbase-offset.
    pub discarded_vtts: Vec<Va>,
    pub errors: Vec<MetaError>,
}

impl ItaniumMeta {
    pub fn construction_groups(&self) -> impl Iterator<Item = &VTableGroup> {
        self.vtables.groups().iter().filter(|g| g.is_construction)
    }

    /// VTT owned by the class whose primary address point is `owner`.
    pub fn vtts_owned_by(&self, owner: Va) -> impl Iterator<Item = &Vtt> {
        self.vtts.iter().filter(move |v| v.owner_vptr == owner)
    }

    pub fn vtt_containing(&self, addr: Va) -> Option<&Vtt> {
        self.vtts.iter().find(|v| v.contains(addr))
    }
}

/// Run all Itanium passes.
pub fn recover_metadata(img: &BinaryImage, listing: &Listing, opts: VttOptions) -> ItaniumMeta {
    let mut vtables = find_vtables(img, listing, ValidationRule::Itanium);
    let mut meta = ItaniumMeta::default();
    let mut kept = Vec::new();
    let mut per_subvtt = Vec::new();
    for mut vtt in find_vtts(img, &vtables, opts) {
        match group_subvtts(&vtt, &vtables) {
            Ok(subs) => vtt.sub_vtts = subs,
            Err(e) => {
                meta.errors.push(e);
                meta.discarded_vtts.push(vtt.base);
                continue;
            }
        }
        let results: Vec<SubVttVbase> = vtt
            .sub_vtts
            .iter()
            .map(|s| extract_vbase_offsets(img, s, &vtables))
            .collect();
        if results.iter().any(|r| r.is_valid()) {
            per_subvtt.extend(results);
            kept.push(vtt);
        } else {
            log::debug!("discarding VTT at {}: no vbase-offset confirmed", vtt.base);
            meta.discarded_vtts.push(vtt.base);
        }
    }
    apply_vbase_offsets(&mut vtables, &per_subvtt);
    for vtt in &kept {
        for s in vtt.sub_vtts.iter().filter(|s| s.is_construction) {
            if let Some((gi, 0)) = vtables.locate(s.primary_vptr) {
                vtables.groups_mut()[gi].is_construction = true;
            }
        }
    }
    meta.mapping = map_construction_to_regular(&vtables, &kept);
    meta.vtables = vtables;
    meta.vtts = kept;
    meta
}
