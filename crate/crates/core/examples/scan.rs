//! Full JSON report for one binary, optionally with a class-name map.
//!
//!     cargo run --example scan -- fixtures/chain2/bin/chain2 fixtures/chain2/map.json

use virtscan::config::AnalysisConfig;
use virtscan::eval::parse_name_map;
use virtscan::pipeline::analyze_path;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "fixtures/running/bin/running".into());
    let names = match args.next() {
        Some(m) => Some(parse_name_map(&std::fs::read_to_string(m)?)?),
        None => None,
    };
    let (img, analysis) = analyze_path(&path, &AnalysisConfig::default(), names.as_ref())?;
    print!("{}", analysis.report(&img, false).to_json());
    Ok(())
}
