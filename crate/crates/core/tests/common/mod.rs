#![allow(dead_code)]

pub mod gen;

use std::collections::BTreeMap;
use std::path::PathBuf;

use virtscan::config::AnalysisConfig;
use virtscan::eval::parse_name_map;
use virtscan::image::BinaryImage;
use virtscan::pipeline::{analyze, Analysis};
use virtscan::Va;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn binary(name: &str) -> PathBuf {
    fixtures().join(name).join("bin").join(name)
}

pub fn names(name: &str) -> BTreeMap<Va, String> {
    let text = std::fs::read_to_string(fixtures().join(name).join("map.json")).unwrap();
    parse_name_map(&text).unwrap()
}

pub fn gt_text(name: &str) -> String {
    std::fs::read_to_string(fixtures().join(name).join("gt.json")).unwrap()
}

pub fn load(name: &str) -> (BinaryImage, Analysis) {
    let cfg = AnalysisConfig::default();
    let img = BinaryImage::load(binary(name), cfg.abi, cfg.word_size).unwrap();
    let a = analyze(&img, &cfg, Some(&names(name))).unwrap();
    (img, a)
}

/// Class id carrying `name` in the fixture's map.
pub fn id(a: &Analysis, name: &str) -> Va {
    *a.hierarchy
        .nodes
        .iter()
        .find(|(_, n)| n.name.as_deref() == Some(name))
        .unwrap_or_else(|| panic!("no class named {name}"))
        .0
}

/// Construction/regular pairs share their functions but carry larger
/// vbase-offsets and more negative offsets-to-top.
pub fn duality_violations(a: &Analysis) -> Vec<String> {
    let meta = a.itanium.as_ref().unwrap();
    let mut bad = Vec::new();
    for (&cons, &reg) in &meta.mapping.pairs {
        let c = meta.vtables.group(cons).unwrap();
        let r = meta.vtables.group(reg).unwrap();
        if c.group_key != r.group_key {
            bad.push(format!("{cons}/{reg}: function pointers differ"));
        }
        if c.secondaries.len() != r.secondaries.len() {
            bad.push(format!("{cons}/{reg}: member count differs"));
            continue;
        }
        for (cm, rm) in c.members().zip(r.members()) {
            for (cv, rv) in cm.vbase_offsets.iter().zip(&rm.vbase_offsets) {
                if cv < rv {
                    bad.push(format!("{}: vbase-offset {cv:#x} < {rv:#x}", cm.address_point));
                }
            }
            if cm.offset_to_top > rm.offset_to_top {
                bad.push(format!("{}: offset-to-top {} > {}", cm.address_point, cm.offset_to_top, rm.offset_to_top));
            }
        }
    }
    bad
}
