//! Ground-truth comparison.
//!
//! Ground truth is either the canonical JSON written by the fixture build
//! script or a GCC `-fdump-lang-class` dump, converted with the same rules:
//! virtual bases are the `virtual` nodes of a class's layout, intermediate
//! bases are the bases that themselves have virtual bases, direct bases the
//! non-virtual nodes one level down.
//!
//! Scoring is per class: for every GT class with at least one virtual base,
//! the recovered virtual-base and intermediate-base name sets are compared
//! with the GT sets as a whole.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::addr::Va;
use crate::recovery::Hierarchy;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtClass {
    pub name: String,
    #[serde(default)]
    pub vptr_hint: Option<Va>,
    #[serde(default)]
    pub virtual_bases: Vec<String>,
    #[serde(default)]
    pub intermediate_bases: Vec<String>,
    #[serde(default)]
    pub direct_bases: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub classes: Vec<GtClass>,
    /// Classes the compiler did not emit; excluded from comparison.
    #[serde(default)]
    pub removed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl GroundTruth {
    pub fn class(&self, name: &str) -> Option<&GtClass> {
        self.classes.iter().find(|c| c.name == name)
    }

    /// Drop `removed` classes and every mention of them.
    pub fn exclude(&mut self, removed: &[String]) {
        let gone: BTreeSet<&str> = removed.iter().map(String::as_str).collect();
        self.classes.retain(|c| !gone.contains(c.name.as_str()));
        for c in &mut self.classes {
            for list in [&mut c.virtual_bases, &mut c.intermediate_bases, &mut c.direct_bases] {
                list.retain(|b| !gone.contains(b.as_str()));
            }
        }
        for r in removed {
            if !self.removed.contains(r) {
                self.removed.push(r.clone());
            }
        }
    }

    fn validate(&self) -> Result<(), ParseError> {
        let mut seen = BTreeSet::new();
        for c in &self.classes {
            if !seen.insert(c.name.as_str()) {
                return Err(ParseError { line: 0, message: format!("duplicate class {}", c.name) });
            }
            let lists = [&c.virtual_bases, &c.intermediate_bases, &c.direct_bases];
            if lists.iter().any(|l| l.contains(&c.name)) {
                return Err(ParseError { line: 0, message: format!("class {} lists itself as a base", c.name) });
            }
        }
        Ok(())
    }
}

/// Parse canonical GT JSON or a GCC class-hierarchy dump.
pub fn parse_gt(text: &str) -> Result<GroundTruth, ParseError> {
    let gt = if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| ParseError { line: e.line(), message: e.to_string() })?
    } else {
        parse_gcc_dump(text)?
    };
    gt.validate()?;
    Ok(gt)
}

/// [`parse_gt`] followed by exclusion of classes absent from the binary.
pub fn parse_gt_with_removed(text: &str, removed: &[String]) -> Result<GroundTruth, ParseError> {
    let mut gt = parse_gt(text)?;
    gt.exclude(removed);
    Ok(gt)
}

struct DumpNode {
    name: String,
    depth: Option<usize>,
    is_virtual: bool,
    alternative: bool,
}

/// `Name (0x...) OFFSET [virtual]` or `Name (0x...) alternative-path`.
fn parse_node(line: &str) -> Option<(String, bool, bool)> {
    if line.starts_with(' ') {
        return None;
    }
    let t: Vec<&str> = line.split_whitespace().collect();
    if !(3..=4).contains(&t.len()) || !(t[1].starts_with("(0x") && t[1].ends_with(')')) {
        return None;
    }
    match (t[2], t.get(3)) {
        ("alternative-path", None) => Some((t[0].to_string(), true, true)),
        (off, v) if off.parse::<i64>().is_ok() => match v {
            None => Some((t[0].to_string(), false, false)),
            Some(&"virtual") => Some((t[0].to_string(), true, false)),
            _ => None,
        },
        _ => None,
    }
}

/// Convert a GCC `-fdump-lang-class` dump into canonical ground truth.
pub fn parse_gcc_dump(text: &str) -> Result<GroundTruth, ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut classes: Vec<(String, Vec<DumpNode>)> = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let Some(name) = lines[i].strip_prefix("Class ") else {
            i += 1;
            continue;
        };
        let name = name.trim();
        if name.is_empty() {
            return Err(ParseError { line: i + 1, message: "class header without a name".into() });
        }
        i += 1;
        let mut nodes = Vec::new();
        while i < lines.len() && !lines[i].trim().is_empty() {
            if let Some((n, is_virtual, alternative)) = parse_node(lines[i]) {
                // Depth comes from the indentation of the node's first
                // attribute line (4 spaces at depth 0, 2 more per level).
                let depth = lines.get(i + 1).and_then(|next| {
                    let indent = next.len() - next.trim_start_matches(' ').len();
                    (parse_node(next).is_none() && indent >= 4).then(|| (indent - 4) / 2)
                });
                nodes.push(DumpNode { name: n, depth, is_virtual, alternative });
            }
            i += 1;
        }
        if nodes.is_empty() {
            return Err(ParseError { line: i, message: format!("class {name} has no layout") });
        }
        classes.push((name.to_string(), nodes));
    }

    let virt: BTreeMap<&str, BTreeSet<&str>> = classes
        .iter()
        .map(|(n, nodes)| {
            let v = nodes[1..].iter().filter(|x| x.is_virtual).map(|x| x.name.as_str()).collect();
            (n.as_str(), v)
        })
        .collect();
    let mut out = GroundTruth::default();
    for (name, nodes) in &classes {
        let bases: BTreeSet<&str> = nodes[1..].iter().map(|x| x.name.as_str()).collect();
        let direct: BTreeSet<&str> = nodes[1..]
            .iter()
            .filter(|x| x.depth == Some(1) && !x.is_virtual && !x.alternative)
            .map(|x| x.name.as_str())
            .collect();
        let inter: BTreeSet<&str> = bases
            .iter()
            .copied()
            .filter(|b| virt.get(b).is_some_and(|v| !v.is_empty()))
            .collect();
        let owned = |s: &BTreeSet<&str>| s.iter().map(|x| x.to_string()).collect();
        out.classes.push(GtClass {
            name: name.clone(),
            vptr_hint: None,
            virtual_bases: owned(&virt[name.as_str()]),
            intermediate_bases: owned(&inter),
            direct_bases: owned(&direct),
        });
    }
    out.classes.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}

/// Load a `--map` file: `{"0x3b60": "D", ...}`.
pub fn parse_name_map(text: &str) -> Result<BTreeMap<Va, String>, ParseError> {
    serde_json::from_str(text).map_err(|e| ParseError { line: e.line(), message: e.to_string() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Matching,
    /// Recovered set strictly contains the GT set.
    Overest,
    /// Recovered set misses GT bases (including sets that are neither
    /// subset nor superset).
    Underest,
}

fn verdict(recovered: &BTreeSet<String>, gt: &BTreeSet<String>) -> Verdict {
    if recovered == gt {
        Verdict::Matching
    } else if recovered.is_superset(gt) {
        Verdict::Overest
    } else {
        Verdict::Underest
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassScore {
    pub name: String,
    pub id: Option<Va>,
    /// `None` when the class was not found in the recovered hierarchy.
    pub vbases: Option<Verdict>,
    pub ibases: Option<Verdict>,
    pub recovered_vbases: BTreeSet<String>,
    pub recovered_ibases: BTreeSet<String>,
    /// Recovered bases with no name in the map.
    pub unmapped: Vec<Va>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ScoreCard {
    pub n_classes_with_virt: usize,
    pub vbases_matching: usize,
    pub vbases_overest: usize,
    pub vbases_underest: usize,
    pub ibases_matching: usize,
    pub ibases_overest: usize,
    pub ibases_underest: usize,
    pub not_found: usize,
    /// Recovered base ids missing from the name map.
    pub unmapped: usize,
    pub classes: Vec<ClassScore>,
}

fn names(ids: Vec<Va>, map: &BTreeMap<Va, String>, unmapped: &mut Vec<Va>) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for id in ids {
        match map.get(&id) {
            Some(n) => {
                out.insert(n.clone());
            }
            None => unmapped.push(id),
        }
    }
    out
}

/// Compare a recovered hierarchy against ground truth.
pub fn score(h: &Hierarchy, gt: &GroundTruth, name_map: &BTreeMap<Va, String>) -> ScoreCard {
    let by_name: BTreeMap<&str, Va> = name_map.iter().map(|(id, n)| (n.as_str(), *id)).collect();
    let mut card = ScoreCard::default();
    let mut classes: Vec<&GtClass> = gt
        .classes
        .iter()
        .filter(|c| !c.virtual_bases.is_empty() && !gt.removed.contains(&c.name))
        .collect();
    classes.sort_by(|a, b| a.name.cmp(&b.name));
    for c in classes {
        card.n_classes_with_virt += 1;
        let id = by_name.get(c.name.as_str()).copied().or(c.vptr_hint);
        let present = id.filter(|i| h.nodes.contains_key(i));
        let mut s = ClassScore {
            name: c.name.clone(),
            id,
            vbases: None,
            ibases: None,
            recovered_vbases: BTreeSet::new(),
            recovered_ibases: BTreeSet::new(),
            unmapped: Vec::new(),
        };
        let Some(id) = present else {
            card.not_found += 1;
            card.classes.push(s);
            continue;
        };
        s.recovered_vbases = names(h.virtual_bases(id), name_map, &mut s.unmapped);
        s.recovered_ibases = names(h.intermediates(id), name_map, &mut s.unmapped);
        let gv: BTreeSet<String> = c.virtual_bases.iter().cloned().collect();
        let gi: BTreeSet<String> = c.intermediate_bases.iter().cloned().collect();
        let (v, i) = (verdict(&s.recovered_vbases, &gv), verdict(&s.recovered_ibases, &gi));
        match v {
            Verdict::Matching => card.vbases_matching += 1,
            Verdict::Overest => card.vbases_overest += 1,
            Verdict::Underest => card.vbases_underest += 1,
        }
        match i {
            Verdict::Matching => card.ibases_matching += 1,
            Verdict::Overest => card.ibases_overest += 1,
            Verdict::Underest => card.ibases_underest += 1,
        }
        s.vbases = Some(v);
        s.ibases = Some(i);
        card.unmapped += s.unmapped.len();
        card.classes.push(s);
    }
    card
}

impl ScoreCard {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "classes with virtual bases: {}", self.n_classes_with_virt);
        let _ = writeln!(s, "{:<10} {:>9} {:>8} {:>9}", "", "matching", "overest", "underest");
        let _ = writeln!(
            s,
            "{:<10} {:>9} {:>8} {:>9}",
            "vbases", self.vbases_matching, self.vbases_overest, self.vbases_underest
        );
        let _ = writeln!(
            s,
            "{:<10} {:>9} {:>8} {:>9}",
            "ibases", self.ibases_matching, self.ibases_overest, self.ibases_underest
        );
        let _ = writeln!(s, "not found: {}  unmapped: {}", self.not_found, self.unmapped);
        for c in &self.classes {
            let v = |x: Option<Verdict>| x.map_or("not found".to_string(), |v| format!("{v:?}").to_lowercase());
            let _ = writeln!(s, "  {:<12} vbases {:<9} ibases {}", c.name, v(c.vbases), v(c.ibases));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recovery::{build_tree, ClassNode, EdgeKind, Evidence, InheritanceEdge};

    const DUMP: &str = "\
Class A
   size=16 align=8
   base size=12 base align=8
A (0x0x1) 0
    vptr=((& A::_ZTV1A) + 16)

Class B
   size=32 align=8
B (0x0x2) 0
    vptridx=0 vptr=((& B::_ZTV1B) + 24)
A (0x0x3) 16 virtual
      vptridx=8 vbaseoffset=-24 vptr=((& B::_ZTV1B) + 56)

Class C
   size=32 align=8
C (0x0x4) 0
    vptridx=0 vptr=((& C::_ZTV1C) + 24)
A (0x0x5) 16 virtual
      vptridx=8 vbaseoffset=-24 vptr=((& C::_ZTV1C) + 56)

Class D
   size=48 align=8
D (0x0x6) 0
    vptridx=0 vptr=((& D::_ZTV1D) + 24)
B (0x0x7) 0
      primary-for D (0x0x6)
      subvttidx=8
A (0x0x8) 32 virtual
        vptridx=40 vbaseoffset=-24 vptr=((& D::_ZTV1D) + 104)
C (0x0x9) 16
      subvttidx=24 vptridx=48 vptr=((& D::_ZTV1D) + 72)
A (0x0x8) alternative-path
";

    #[test]
    fn empty_dump_is_empty_gt() {
        assert_eq!(parse_gt("").unwrap(), GroundTruth::default());
    }

    #[test]
    fn dump_conversion() {
        let gt = parse_gt(DUMP).unwrap();
        let d = gt.class("D").unwrap();
        assert_eq!(d.virtual_bases, ["A"]);
        assert_eq!(d.intermediate_bases, ["B", "C"]);
        assert_eq!(d.direct_bases, ["B", "C"]);
        assert!(gt.class("A").unwrap().virtual_bases.is_empty());
    }

    #[test]
    fn self_base_rejected() {
        let j = r#"{"classes":[{"name":"X","virtual_bases":["X"]}]}"#;
        assert!(parse_gt(j).is_err());
    }

    fn running() -> (Hierarchy, BTreeMap<Va, String>) {
        let ids = [("A", 1), ("B", 2), ("C", 3), ("D", 4)];
        let nodes = ids
            .iter()
            .map(|(_, v)| {
                (Va(*v), ClassNode { id: Va(*v), name: None, stand_in: false, vbase_offsets: vec![], has_vtt: false })
            })
            .collect();
        let e = |d, b, k| {
            InheritanceEdge::new(Va(d), Va(b), k, Evidence::CtorCallOffset { offset: 0 })
        };
        let h = build_tree(
            nodes,
            vec![
                e(4, 1, EdgeKind::Virtual),
                e(2, 1, EdgeKind::Virtual),
                e(3, 1, EdgeKind::Virtual),
                e(4, 2, EdgeKind::Intermediate),
                e(4, 3, EdgeKind::Intermediate),
            ],
        );
        let map = ids.iter().map(|(n, v)| (Va(*v), n.to_string())).collect();
        (h, map)
    }

    #[test]
    fn exact_recovery_all_matching() {
        let (h, map) = running();
        let card = score(&h, &parse_gt(DUMP).unwrap(), &map);
        assert_eq!(card.n_classes_with_virt, 3);
        assert_eq!((card.vbases_matching, card.ibases_matching), (3, 3));
        assert_eq!(card.vbases_overest + card.vbases_underest + card.ibases_overest + card.ibases_underest, 0);
    }

    #[test]
    fn dropping_an_intermediate_is_underest() {
        let (h, map) = running();
        let edges: Vec<_> = h.edges().iter().filter(|e| !(e.derived == Va(4) && e.base == Va(3))).cloned().collect();
        let h = build_tree(h.nodes.clone(), edges);
        let card = score(&h, &parse_gt(DUMP).unwrap(), &map);
        assert_eq!(card.ibases_underest, 1);
        assert_eq!(card.ibases_matching, 2);
    }

    #[test]
    fn removed_classes_are_excluded() {
        let gt = parse_gt_with_removed(DUMP, &["C".to_string()]).unwrap();
        assert!(gt.class("C").is_none());
        assert_eq!(gt.class("D").unwrap().intermediate_bases, ["B"]);
    }
}
