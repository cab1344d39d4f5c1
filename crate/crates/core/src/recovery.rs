//! Virtual-inheritance recovery and the class hierarchy graph.
//!
//! Three kinds of edge, in decreasing priority when the same pair is
//! found more than once:
//!
//! * `Virtual`: a constructor calls another class's constructor at a
//!   `this` displacement equal to one of its virtual-base displacements.
//! * `Intermediate`: a constructor passes a sub-VTT address (directly, or
//!   forwarded through special constructors) whose sub-VTT points at a
//!   construction VTable of another class.
//! * `Direct`: a constructor calls another constructor at offset 0 or at
//!   the position of one of its secondary sub-VTables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use petgraph::algo::tarjan_scc;
use petgraph::graphmap::DiGraphMap;
use petgraph::unionfind::UnionFind;
use serde::Serialize;

use crate::addr::Va;
use crate::ctor::{CtorSummary, SymValue};
use crate::itanium::ItaniumMeta;

/// Special constructors may forward the sub-VTT pointer through this many
/// levels before the walk gives up.
pub const MAX_FORWARD_DEPTH: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Direct,
    Intermediate,
    Virtual,
}

impl EdgeKind {
    pub fn dot_style(self) -> &'static str {
        match self {
            EdgeKind::Virtual => "bold",
            EdgeKind::Intermediate => "dashed",
            EdgeKind::Direct => "solid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    /// Base constructor called at `this + offset`, a virtual-base
    /// displacement of the derived class (under MSVC, read from the
    /// VB-Table at `vbtable`).
    VbaseOffsetMatch {
        offset: i64,
        #[serde(skip_serializing_if = "Option::is_none")]
        vbtable: Option<Va>,
    },
    /// Sub-VTT slot handed to a special constructor, `depth` calls deep.
    SubVttArg { slot: Va, depth: u8 },
    /// MSVC: the callee initializes a known VB-Table pointer.
    VbptrInit { vbtable: Va },
    /// Base constructor called at a non-virtual sub-object offset.
    CtorCallOffset { offset: i64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InheritanceEdge {
    pub derived: Va,
    pub base: Va,
    pub kind: EdgeKind,
    pub evidence: Evidence,
    /// Part of a cycle, which real hierarchies cannot contain.
    pub flagged_cycle: bool,
    /// The base is a stand-in for a class without a regular VTable.
    pub stand_in: bool,
}

impl InheritanceEdge {
    pub fn new(derived: Va, base: Va, kind: EdgeKind, evidence: Evidence) -> Self {
        InheritanceEdge {
            derived,
            base,
            kind,
            evidence,
            flagged_cycle: false,
            stand_in: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassNode {
    /// Primary address point of the class's VTable (or its stand-in).
    pub id: Va,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Represented by a construction VTable because the regular one is
    /// missing.
    pub stand_in: bool,
    pub vbase_offsets: Vec<i64>,
    /// Owns a VTT (Itanium) or initializes a VB-Table pointer (MSVC).
    pub has_vtt: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecoveryIssue {
    /// Indirect call in a constructor; the record was skipped.
    UnresolvedTarget { ctor: Va, site: Va },
    /// Classes on a cycle; their edges are kept but flagged.
    CycleDetected { classes: Vec<Va> },
    /// MSVC constructor initializing no VB-Table pointer.
    MissingVbptr { ctor: Va },
}

/// Weakly connected component containing at least one virtual edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Tree {
    pub members: Vec<Va>,
    pub virtual_bases: Vec<Va>,
    pub edges: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Hierarchy {
    pub nodes: BTreeMap<Va, ClassNode>,
    edges: Vec<InheritanceEdge>,
    pub trees: Vec<Tree>,
    pub issues: Vec<RecoveryIssue>,
}

impl Hierarchy {
    pub fn edges(&self) -> &[InheritanceEdge] {
        &self.edges
    }

    pub fn edge(&self, derived: Va, base: Va) -> Option<&InheritanceEdge> {
        self.edges.iter().find(|e| e.derived == derived && e.base == base)
    }

    fn bases_of(&self, x: Va, kind: EdgeKind) -> Vec<Va> {
        self.edges
            .iter()
            .filter(|e| e.derived == x && e.kind == kind)
            .map(|e| e.base)
            .collect()
    }

    pub fn virtual_bases(&self, x: Va) -> Vec<Va> {
        self.bases_of(x, EdgeKind::Virtual)
    }

    pub fn intermediates(&self, x: Va) -> Vec<Va> {
        self.bases_of(x, EdgeKind::Intermediate)
    }

    pub fn direct_bases(&self, x: Va) -> Vec<Va> {
        self.bases_of(x, EdgeKind::Direct)
    }

    pub fn name(&self, id: Va) -> String {
        self.nodes
            .get(&id)
            .and_then(|n| n.name.clone())
            .unwrap_or_else(|| id.to_string())
    }

    /// Attach human-readable names (e.g. from a `--map` file).
    pub fn set_names(&mut self, names: &BTreeMap<Va, String>) {
        for (id, n) in names {
            if let Some(node) = self.nodes.get_mut(id) {
                node.name = Some(n.clone());
            }
        }
    }

    /// Length of the longest edge path from `x` that ends with a virtual
    /// edge, minus one: 0 for a class that only has virtual bases, 1 for a
    /// class deriving from such classes, and so on.
    pub fn depth(&self, x: Va) -> Option<usize> {
        let mut memo = BTreeMap::new();
        let mut on_path = BTreeSet::new();
        self.longest_to_virtual(x, &mut memo, &mut on_path).map(|l| l - 1)
    }

    fn longest_to_virtual(
        &self,
        x: Va,
        memo: &mut BTreeMap<Va, Option<usize>>,
        on_path: &mut BTreeSet<Va>,
    ) -> Option<usize> {
        if let Some(v) = memo.get(&x) {
            return *v;
        }
        if !on_path.insert(x) {
            return None;
        }
        let mut best = None;
        for e in self.edges.iter().filter(|e| e.derived == x && !e.flagged_cycle) {
            let via = if e.kind == EdgeKind::Virtual {
                Some(1)
            } else {
                None
            };
            let deeper = self.longest_to_virtual(e.base, memo, on_path).map(|l| l + 1);
            best = best.max(via).max(deeper);
        }
        on_path.remove(&x);
        memo.insert(x, best);
        best
    }

    /// Graphviz rendering: bold virtual, dashed intermediate, solid direct
    /// edges; stand-in classes are drawn dotted.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph hierarchy {\n  rankdir=BT;\n  node [shape=box];\n");
        for n in self.nodes.values() {
            let style = if n.stand_in { ", style=dotted" } else { "" };
            let label = match &n.name {
                Some(name) => format!("{name}\\n{}", n.id),
                None => n.id.to_string(),
            };
            let _ = writeln!(s, "  \"{}\" [label=\"{}\"{}];", n.id, label, style);
        }
        for e in &self.edges {
            let color = if e.flagged_cycle { ", color=red" } else { "" };
            let _ = writeln!(
                s,
                "  \"{}\" -> \"{}\" [style={}{}];",
                e.derived,
                e.base,
                e.kind.dot_style(),
                color
            );
        }
        s.push_str("}\n");
        s
    }
}

/// Resolves a VTT slot address to the class of the construction group its
/// sub-VTT describes.
fn class_at_slot(meta: &ItaniumMeta, slot: Va) -> Option<Va> {
    let vtt = meta.vtt_containing(slot)?;
    let sub = vtt.sub_vtt_at(slot)?;
    if !sub.is_construction {
        return None;
    }
    let g = meta.vtables.group_of(sub.primary_vptr)?;
    meta.mapping.class_of(g.id(), &meta.vtables)
}

/// Class of each ordinary constructor, named by the vptr it stores at the
/// lowest object offset.
pub fn ctor_classes(meta: &ItaniumMeta, summaries: &BTreeMap<Va, CtorSummary>) -> BTreeMap<Va, Va> {
    summaries
        .values()
        .filter(|s| s.is_ctor())
        .filter_map(|s| {
            let vptr = s.primary_write()?;
            let g = meta.vtables.group_of(vptr)?;
            let class = meta.mapping.class_of(g.id(), &meta.vtables)?;
            Some((s.func, class))
        })
        .collect()
}

/// Candidate edges from constructor summaries over Itanium metadata.
pub fn recover_itanium_edges(meta: &ItaniumMeta, summaries: &BTreeMap<Va, CtorSummary>) -> Vec<InheritanceEdge> {
    let classes = ctor_classes(meta, summaries);
    let mut out = Vec::new();
    for (&func, &x) in &classes {
        let s = &summaries[&func];
        let Some(group) = meta.vtables.group_of(x) else {
            continue;
        };
        let displacements = group.vbase_displacements();
        let secondary_offsets: BTreeSet<i64> = group.secondaries.iter().map(|m| -m.offset_to_top).collect();

        for call in &s.calls {
            let Some(target) = call.target else {
                continue;
            };
            if let Some(k) = call.this_offset() {
                if let Some(&y) = classes.get(&target) {
                    if y != x {
                        if displacements.contains(&k) {
                            out.push(InheritanceEdge::new(x, y, EdgeKind::Virtual, Evidence::VbaseOffsetMatch { offset: k, vbtable: None }));
                        } else if k == 0 || secondary_offsets.contains(&k) {
                            out.push(InheritanceEdge::new(x, y, EdgeKind::Direct, Evidence::CtorCallOffset { offset: k }));
                        }
                    }
                }
            }
            if let SymValue::Imm { v: slot } = call.arg2 {
                if meta.vtt_containing(slot).is_some() {
                    intermediate_walk(meta, summaries, x, target, slot, 1, &mut out);
                }
            }
        }
    }
    out
}

fn intermediate_walk(
    meta: &ItaniumMeta,
    summaries: &BTreeMap<Va, CtorSummary>,
    x: Va,
    callee: Va,
    slot: Va,
    depth: u8,
    out: &mut Vec<InheritanceEdge>,
) {
    if let Some(y) = class_at_slot(meta, slot) {
        if y != x {
            out.push(InheritanceEdge::new(
                x,
                y,
                EdgeKind::Intermediate,
                Evidence::SubVttArg { slot, depth },
            ));
        }
    }
    if depth >= MAX_FORWARD_DEPTH {
        return;
    }
    let Some(s) = summaries.get(&callee) else {
        return;
    };
    for call in &s.calls {
        let (Some(t), SymValue::Arg2Plus { k }) = (call.target, call.arg2) else {
            continue;
        };
        // Only special constructors forward a sub-VTT meaningfully; other
        // callees merely see the untouched argument register.
        if summaries.get(&t).is_some_and(|c| c.is_special) {
            intermediate_walk(meta, summaries, x, t, slot.offset(k), depth + 1, out);
        }
    }
}

/// Deduplicate edges (highest kind wins), flag cycles and compute the
/// virtual-inheritance trees.
pub fn build_tree(nodes: BTreeMap<Va, ClassNode>, candidates: Vec<InheritanceEdge>) -> Hierarchy {
    build_tree_with(nodes, candidates, Vec::new())
}

/// [`build_tree`] carrying issues found while collecting the edges.
pub fn build_tree_with(
    nodes: BTreeMap<Va, ClassNode>,
    candidates: Vec<InheritanceEdge>,
    mut issues: Vec<RecoveryIssue>,
) -> Hierarchy {
    let mut best: BTreeMap<(Va, Va), InheritanceEdge> = BTreeMap::new();
    for e in candidates {
        if e.derived == e.base {
            continue;
        }
        match best.get(&(e.derived, e.base)) {
            Some(cur) if cur.kind >= e.kind => {}
            _ => {
                best.insert((e.derived, e.base), e);
            }
        }
    }
    let mut edges: Vec<InheritanceEdge> = best.into_values().collect();

    let mut g: DiGraphMap<Va, ()> = DiGraphMap::new();
    for n in nodes.keys() {
        g.add_node(*n);
    }
    for e in &edges {
        g.add_edge(e.derived, e.base, ());
    }
    let mut cycles: Vec<Vec<Va>> = tarjan_scc(&g)
        .into_iter()
        .filter(|c| c.len() > 1)
        .map(|mut c| {
            c.sort();
            c
        })
        .collect();
    cycles.sort();
    for e in &mut edges {
        e.flagged_cycle = cycles.iter().any(|c| c.contains(&e.derived) && c.contains(&e.base));
        e.stand_in = nodes.get(&e.base).is_some_and(|n| n.stand_in);
    }
    issues.extend(cycles.into_iter().map(|classes| RecoveryIssue::CycleDetected { classes }));

    let ids: Vec<Va> = g.nodes().collect();
    let pos: BTreeMap<Va, usize> = ids.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let mut uf = UnionFind::<usize>::new(ids.len());
    for e in &edges {
        uf.union(pos[&e.derived], pos[&e.base]);
    }
    let mut comps: BTreeMap<usize, Tree> = BTreeMap::new();
    for &id in &ids {
        comps.entry(uf.find(pos[&id])).or_insert_with(|| Tree {
            members: Vec::new(),
            virtual_bases: Vec::new(),
            edges: 0,
        });
        comps.get_mut(&uf.find(pos[&id])).unwrap().members.push(id);
    }
    let mut has_virtual = BTreeSet::new();
    for e in &edges {
        let t = comps.get_mut(&uf.find(pos[&e.derived])).unwrap();
        t.edges += 1;
        if e.kind == EdgeKind::Virtual {
            if !t.virtual_bases.contains(&e.base) {
                t.virtual_bases.push(e.base);
            }
            has_virtual.insert(uf.find(pos[&e.derived]));
        }
    }
    let mut trees: Vec<Tree> = comps
        .into_iter()
        .filter(|(k, _)| has_virtual.contains(k))
        .map(|(_, mut t)| {
            t.members.sort();
            t.virtual_bases.sort();
            t
        })
        .collect();
    trees.sort_by_key(|t| t.members[0]);

    Hierarchy {
        nodes,
        edges,
        trees,
        issues,
    }
}

/// Class nodes for every regular group and every stand-in.
pub fn itanium_nodes(meta: &ItaniumMeta) -> BTreeMap<Va, ClassNode> {
    meta.vtables
        .groups()
        .iter()
        .filter(|g| !g.is_construction || meta.mapping.is_stand_in(g.id()))
        .map(|g| {
            (
                g.id(),
                ClassNode {
                    id: g.id(),
                    name: None,
                    stand_in: g.is_construction,
                    vbase_offsets: g.vbase_offsets(),
                    has_vtt: meta.vtts_owned_by(g.id()).next().is_some(),
                },
            )
        })
        .collect()
}

pub fn recover_itanium(meta: &ItaniumMeta, summaries: &BTreeMap<Va, CtorSummary>) -> Hierarchy {
    let issues = unresolved_calls(&ctor_classes(meta, summaries), summaries);
    build_tree_with(itanium_nodes(meta), recover_itanium_edges(meta, summaries), issues)
}

/// Indirect calls made by constructors, which recovery skips.
pub fn unresolved_calls(classes: &BTreeMap<Va, Va>, summaries: &BTreeMap<Va, CtorSummary>) -> Vec<RecoveryIssue> {
    classes
        .keys()
        .flat_map(|f| {
            summaries[f]
                .calls
                .iter()
                .filter(|c| c.target.is_none())
                .map(|c| RecoveryIssue::UnresolvedTarget { ctor: *f, site: c.site })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(v: u64) -> (Va, ClassNode) {
        (
            Va(v),
            ClassNode {
                id: Va(v),
                name: None,
                stand_in: false,
                vbase_offsets: vec![],
                has_vtt: false,
            },
        )
    }

    fn e(d: u64, b: u64, kind: EdgeKind) -> InheritanceEdge {
        InheritanceEdge::new(Va(d), Va(b), kind, Evidence::CtorCallOffset { offset: 0 })
    }

    #[test]
    fn stronger_kind_wins() {
        let h = build_tree(
            [node(1), node(2)].into(),
            vec![e(1, 2, EdgeKind::Direct), e(1, 2, EdgeKind::Virtual), e(1, 2, EdgeKind::Intermediate)],
        );
        assert_eq!(h.edges().len(), 1);
        assert_eq!(h.edges()[0].kind, EdgeKind::Virtual);
    }

    #[test]
    fn cycles_are_flagged_not_dropped() {
        let h = build_tree([node(1), node(2), node(3)].into(), vec![e(1, 2, EdgeKind::Direct), e(2, 1, EdgeKind::Direct), e(3, 1, EdgeKind::Virtual)]);
        assert_eq!(h.issues, vec![RecoveryIssue::CycleDetected { classes: vec![Va(1), Va(2)] }]);
        assert!(h.edge(Va(1), Va(2)).unwrap().flagged_cycle);
        assert!(!h.edge(Va(3), Va(1)).unwrap().flagged_cycle);
    }

    #[test]
    fn trees_need_a_virtual_edge() {
        let h = build_tree(
            [node(1), node(2), node(3), node(4)].into(),
            vec![e(1, 2, EdgeKind::Virtual), e(3, 4, EdgeKind::Direct)],
        );
        assert_eq!(h.trees.len(), 1);
        assert_eq!(h.trees[0].members, vec![Va(1), Va(2)]);
        assert_eq!(h.trees[0].virtual_bases, vec![Va(2)]);
    }

    #[test]
    fn depth_counts_levels_above_virtual_edge() {
        // F -> E -> D -> B =v=> A
        let h = build_tree(
            [node(1), node(2), node(3), node(4), node(5)].into(),
            vec![
                e(5, 4, EdgeKind::Intermediate),
                e(4, 3, EdgeKind::Intermediate),
                e(3, 2, EdgeKind::Intermediate),
                e(2, 1, EdgeKind::Virtual),
            ],
        );
        assert_eq!(h.depth(Va(2)), Some(0));
        assert_eq!(h.depth(Va(3)), Some(1));
        assert_eq!(h.depth(Va(5)), Some(3));
        assert_eq!(h.depth(Va(1)), None);
    }

    #[test]
    fn dot_styles() {
        let h = build_tree([node(1), node(2)].into(), vec![e(1, 2, EdgeKind::Intermediate)]);
        let dot = h.to_dot();
        assert!(dot.contains("\"0x1\" -> \"0x2\" [style=dashed]"));
    }
}
