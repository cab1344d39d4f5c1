//! Score recovery against ground truth (JSON or a GCC class dump).
//!
//!     cargo run --example diff_gt -- eliminated

use virtscan::config::AnalysisConfig;
use virtscan::eval::{parse_gt, parse_name_map, score};
use virtscan::pipeline::analyze_path;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "running".into());
    let dir = std::path::Path::new("fixtures").join(&name);
    let names = parse_name_map(&std::fs::read_to_string(dir.join("map.json"))?)?;
    let gt = parse_gt(&std::fs::read_to_string(dir.join("gt.json"))?)?;
    let (_, a) = analyze_path(dir.join("bin").join(&name), &AnalysisConfig::default(), Some(&names))?;
    print!("{}", score(&a.hierarchy, &gt, &names).table());
    Ok(())
}
