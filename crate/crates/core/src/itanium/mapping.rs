use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{VTables, Vtt};
use crate::addr::Va;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MappingIssue {
    /// Two or more regular groups share a function-pointer sequence; the
    /// bucket is left unmapped.
    AmbiguousBucket { groups: Vec<Va> },
    /// No regular group shares the sequence; `stand_in` represents the
    /// class.
    OrphanConstruction { group: Va, stand_in: Va },
    /// Different sequences with equal sums (the sum alone would have
    /// merged them).
    SumCollision { groups: Vec<Va> },
}

/// Construction group → regular group (or flagged stand-in).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Mapping {
    pub pairs: BTreeMap<Va, Va>,
    /// Construction groups standing in for a class without a regular VTable.
    pub stand_ins: BTreeSet<Va>,
    pub issues: Vec<MappingIssue>,
}

impl Mapping {
    /// Class id for a group: regular groups map to themselves, mapped
    /// construction groups to their regular group.
    pub fn class_of(&self, group: Va, vtables: &VTables) -> Option<Va> {
        let g = vtables.group(group)?;
        if g.is_construction {
            self.pairs.get(&group).copied()
        } else {
            Some(group)
        }
    }

    pub fn is_stand_in(&self, id: Va) -> bool {
        self.stand_ins.contains(&id)
    }
}

/// Bucket groups by their ordered function-pointer sequence and map each
/// construction group to the single regular group in its bucket.
pub fn map_construction_to_regular(vtables: &VTables, _vtts: &[Vtt]) -> Mapping {
    let mut buckets: BTreeMap<&[Va], Vec<usize>> = BTreeMap::new();
    for (i, g) in vtables.groups().iter().enumerate() {
        buckets.entry(g.group_key.as_slice()).or_default().push(i);
    }
    let groups = vtables.groups();
    let mut m = Mapping::default();

    let mut by_sum: BTreeMap<u64, Vec<&[Va]>> = BTreeMap::new();
    for key in buckets.keys() {
        let sum = key.iter().fold(0u64, |a, v| a.wrapping_add(v.0));
        by_sum.entry(sum).or_default().push(key);
    }
    for keys in by_sum.values().filter(|k| k.len() > 1) {
        let ids = keys
            .iter()
            .flat_map(|k| buckets[k].iter().map(|&i| groups[i].id()))
            .collect();
        m.issues.push(MappingIssue::SumCollision { groups: ids });
    }

    for members in buckets.values() {
        let cons: Vec<usize> = members.iter().copied().filter(|&i| groups[i].is_construction).collect();
        if cons.is_empty() {
            continue;
        }
        let regular: Vec<usize> = members.iter().copied().filter(|&i| !groups[i].is_construction).collect();
        match regular.as_slice() {
            [r] => {
                debug_assert_eq!(groups[*r].fn_ptr_sum(), groups[cons[0]].fn_ptr_sum());
                for &c in &cons {
                    m.pairs.insert(groups[c].id(), groups[*r].id());
                }
            }
            [] => {
                let stand_in = groups[cons[0]].id();
                m.stand_ins.insert(stand_in);
                for &c in &cons {
                    m.pairs.insert(groups[c].id(), stand_in);
                    m.issues.push(MappingIssue::OrphanConstruction { group: groups[c].id(), stand_in });
                }
            }
            _ => m.issues.push(MappingIssue::AmbiguousBucket {
                groups: members.iter().map(|&i| groups[i].id()).collect(),
            }),
        }
    }
    m
}
