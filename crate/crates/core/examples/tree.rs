//! Recovered inheritance as Graphviz DOT (pipe into `dot -Tsvg`).
//!
//!     cargo run --example tree -- fixtures/chain3/bin/chain3 fixtures/chain3/map.json

use virtscan::config::AnalysisConfig;
use virtscan::eval::parse_name_map;
use virtscan::pipeline::analyze_path;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "fixtures/running/bin/running".into());
    let map = args.next().unwrap_or_else(|| "fixtures/running/map.json".into());
    let names = parse_name_map(&std::fs::read_to_string(map)?)?;
    let (_, a) = analyze_path(&path, &AnalysisConfig::default(), Some(&names))?;
    print!("{}", a.hierarchy.to_dot());
    for x in a.hierarchy.nodes.keys() {
        eprintln!(
            "{:>6}: virtual {:?} intermediate {:?} depth {:?}",
            a.hierarchy.name(*x),
            a.hierarchy.virtual_bases(*x).iter().map(|b| a.hierarchy.name(*b)).collect::<Vec<_>>(),
            a.hierarchy.intermediates(*x).iter().map(|b| a.hierarchy.name(*b)).collect::<Vec<_>>(),
            a.hierarchy.depth(*x)
        );
    }
    Ok(())
}
