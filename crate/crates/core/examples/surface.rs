//! Construction VTables as extra vptr targets: counts per depth against
//! the closed form, and the offsets they carry.
//!
//!     cargo run --example surface -- fixtures/chain3/bin/chain3

use virtscan::config::AnalysisConfig;
use virtscan::pipeline::analyze_path;
use virtscan::surface::predict_cvtables;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "fixtures/chain3/bin/chain3".into());
    let (_, a) = analyze_path(&path, &AnalysisConfig::default(), None)?;
    print!("{}", a.surface.table());
    if let Some(d) = a.surface.max_depth {
        println!(
            "deepest class at depth {d}: predicted {}, found {}",
            predict_cvtables(d),
            a.surface.n_construction_vtables
        );
    }
    println!("depth  construction vtables");
    for n in 1..=6 {
        println!("  {n:>3}  {:>4}", predict_cvtables(n));
    }
    Ok(())
}
