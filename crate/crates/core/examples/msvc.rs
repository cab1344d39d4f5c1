//! MSVC: build a small PE32+ image with a virtual diamond, then recover
//! its VB-Tables and inheritance edges.
//!
//!     cargo run --example msvc

use virtscan::config::AnalysisConfig;
use virtscan::craft::msvc_diamond;
use virtscan::pipeline::analyze;
use virtscan::{Abi, BinaryImage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let crafted = msvc_diamond();
    let img = BinaryImage::from_bytes(&crafted.bytes, Abi::Msvc, 8)?;
    let cfg = AnalysisConfig { abi: Abi::Msvc, ..Default::default() };
    let a = analyze(&img, &cfg, Some(&crafted.name_map()))?;
    for t in a.msvc.as_ref().unwrap().vbtables.values() {
        let entries: Vec<String> = t.entries.iter().map(|v| format!("{v:#x}")).collect();
        println!("VB-Table {} entries {}", t.base, entries.join(" "));
    }
    for e in a.hierarchy.edges() {
        println!("{} -> {} {:?}", a.hierarchy.name(e.derived), a.hierarchy.name(e.base), e.kind);
    }
    println!("{}", a.detect());
    Ok(())
}
