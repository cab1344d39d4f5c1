//! End-to-end checks against the prebuilt GCC fixtures.

mod common;

use std::collections::BTreeMap;

use common::{duality_violations, id, load};
use virtscan::eval::{parse_gt, score};
use virtscan::recovery::EdgeKind;
use virtscan::surface::predict_cvtables;
use virtscan::Va;

#[test]
fn running_example_metadata() {
    let (_, a) = load("running");
    let meta = a.itanium.as_ref().unwrap();
    let groups: Vec<(Va, bool)> = meta.vtables.groups().iter().map(|g| (g.id(), g.is_construction)).collect();
    assert_eq!(
        groups,
        vec![
            (Va(0x3b60), false),
            (Va(0x3c00), true),
            (Va(0x3c40), true),
            (Va(0x3c80), false),
            (Va(0x3cd0), false),
            (Va(0x3d18), false),
        ]
    );
    let d = id(&a, "D");
    assert_eq!(meta.vtts_owned_by(d).count(), 1);
    assert_eq!(
        meta.mapping.pairs,
        BTreeMap::from([(Va(0x3c00), id(&a, "B")), (Va(0x3c40), id(&a, "C"))])
    );
    assert!(meta.mapping.issues.is_empty());
    assert_eq!(meta.vtables.group(d).unwrap().vbase_offsets(), vec![0x20, 0x10]);
}

#[test]
fn running_example_hierarchy() {
    let (_, a) = load("running");
    let h = &a.hierarchy;
    let (aa, b, c, d) = (id(&a, "A"), id(&a, "B"), id(&a, "C"), id(&a, "D"));
    let kind = |x, y| h.edge(x, y).map(|e| e.kind);
    assert_eq!(kind(d, aa), Some(EdgeKind::Virtual));
    assert_eq!(kind(d, b), Some(EdgeKind::Intermediate));
    assert_eq!(kind(d, c), Some(EdgeKind::Intermediate));
    assert_eq!(kind(b, aa), Some(EdgeKind::Virtual));
    assert_eq!(kind(c, aa), Some(EdgeKind::Virtual));
    assert_eq!(h.edges().len(), 5);
    assert_eq!(h.nodes.len(), 4);
    assert!(h.nodes.values().all(|n| !n.stand_in));
    assert_eq!(h.trees.len(), 1);
    assert_eq!(h.trees[0].virtual_bases, vec![aa]);
    assert!(h.issues.is_empty());
}

#[test]
fn depth_chain_counts() {
    for (n, want) in [(1u64, 2usize), (2, 5), (3, 9)] {
        let (_, a) = load(&format!("chain{n}"));
        let got = a.itanium.as_ref().unwrap().construction_groups().count();
        assert_eq!(got, want, "chain{n}");
        assert_eq!(got as u64, predict_cvtables(n));
        assert_eq!(a.surface.n_construction_vtables, want);
        assert_eq!(a.surface.max_depth, Some(n));
    }
}

#[test]
fn duality_on_running_example() {
    let (_, a) = load("running");
    assert!(duality_violations(&a).is_empty());
    let meta = a.itanium.as_ref().unwrap();
    // B-in-D against B: vbase-offset 0x20 vs 0x10, A-in-B offset-to-top
    // -0x20 vs -0x10.
    let c = meta.vtables.group(Va(0x3c00)).unwrap();
    let r = meta.vtables.group(id(&a, "B")).unwrap();
    assert_eq!((c.primary.vbase_offsets[0], r.primary.vbase_offsets[0]), (0x20, 0x10));
    assert_eq!((c.secondaries[0].offset_to_top, r.secondaries[0].offset_to_top), (-0x20, -0x10));
}

#[test]
fn duality_on_all_fixtures() {
    for name in ["chain1", "chain2", "chain3", "mixed", "allvirtual", "single", "eliminated"] {
        let (_, a) = load(name);
        assert_eq!(duality_violations(&a), Vec::<String>::new(), "{name}");
    }
}

#[test]
fn scores_against_ground_truth() {
    for name in ["running", "chain1", "chain2", "chain3", "mixed", "allvirtual", "single"] {
        let (_, a) = load(name);
        let gt = parse_gt(&common::gt_text(name)).unwrap();
        let card = score(&a.hierarchy, &gt, &common::names(name));
        assert_eq!(card.vbases_overest + card.vbases_underest, 0, "{name}: {}", card.table());
        assert_eq!(card.ibases_overest + card.ibases_underest, 0, "{name}: {}", card.table());
        assert_eq!(card.not_found, 0, "{name}");
    }
}

#[test]
fn eliminated_class_underestimates() {
    let (_, a) = load("eliminated");
    let gt = parse_gt(&common::gt_text("eliminated")).unwrap();
    let card = score(&a.hierarchy, &gt, &common::names("eliminated"));
    assert_eq!(card.vbases_overest + card.ibases_overest, 0);
    assert!(card.not_found + card.ibases_underest > 0);
    assert!(a.hierarchy.nodes.values().any(|n| n.stand_in));
}

#[test]
fn mixed_direct_and_virtual() {
    let (_, a) = load("mixed");
    let h = &a.hierarchy;
    let kind = |x, y| h.edge(id(&a, x), id(&a, y)).map(|e| e.kind);
    assert_eq!(kind("N", "M"), Some(EdgeKind::Intermediate));
    assert_eq!(kind("N", "V"), Some(EdgeKind::Virtual));
    assert_eq!(kind("M", "V"), Some(EdgeKind::Virtual));
    assert_eq!(kind("M", "Base"), Some(EdgeKind::Direct));
}

#[test]
fn scans_are_byte_identical() {
    for name in ["running", "chain3", "mixed", "eliminated", "purec"] {
        let cfg = virtscan::config::AnalysisConfig::default();
        let img = virtscan::BinaryImage::load(common::binary(name), cfg.abi, cfg.word_size).unwrap();
        let one = virtscan::pipeline::analyze(&img, &cfg, None).unwrap().report(&img, true).to_json();
        let two = virtscan::pipeline::analyze(&img, &cfg, None).unwrap().report(&img, true).to_json();
        assert_eq!(one, two, "{name}");
    }
}

#[test]
fn pure_c_has_no_virtual_inheritance() {
    let cfg = virtscan::config::AnalysisConfig::default();
    let img = virtscan::BinaryImage::load(common::binary("purec"), cfg.abi, cfg.word_size).unwrap();
    let a = virtscan::pipeline::analyze(&img, &cfg, None).unwrap();
    assert!(a.vtables().is_empty());
    assert!(a.vtts().is_empty());
    assert!(!a.detect().virtual_inheritance);
}

#[test]
fn dot_output_parses() {
    use graphviz_rust::parse;
    for name in ["running", "chain3", "mixed", "eliminated"] {
        let (_, a) = load(name);
        let dot = a.hierarchy.to_dot();
        parse(&dot).unwrap_or_else(|e| panic!("{name}: {e}\n{dot}"));
    }
}

#[test]
fn msvc_crafted_images() {
    use virtscan::config::AnalysisConfig;
    use virtscan::Abi;
    for c in [virtscan::craft::msvc_diamond(), virtscan::craft::msvc_triple()] {
        let cfg = AnalysisConfig { abi: Abi::Msvc, ..Default::default() };
        let img = virtscan::BinaryImage::from_bytes(&c.bytes, Abi::Msvc, 8).unwrap();
        let a = virtscan::pipeline::analyze(&img, &cfg, Some(&c.name_map())).unwrap();
        let tables: BTreeMap<Va, Vec<i64>> =
            a.msvc.as_ref().unwrap().vbtables.iter().map(|(k, t)| (*k, t.entries.clone())).collect();
        assert_eq!(tables, c.vbtables);
        let mut got: Vec<(String, String, EdgeKind)> = a
            .hierarchy
            .edges()
            .iter()
            .map(|e| (a.hierarchy.name(e.derived), a.hierarchy.name(e.base), e.kind))
            .collect();
        got.sort();
        let mut want: Vec<_> = c.expected.iter().map(|(d, b, k)| (d.to_string(), b.to_string(), *k)).collect();
        want.sort();
        assert_eq!(got, want);
        assert!(a.detect().virtual_inheritance);
    }
}
