//! What the constructor pass sees: vptr writes, sub-VTT forwarding and
//! calls with their symbolic `this` and second argument.
//!
//!     cargo run --example ctor_summaries -- fixtures/running/bin/running

use virtscan::config::AnalysisConfig;
use virtscan::pipeline::analyze_path;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "fixtures/running/bin/running".into());
    let (_, a) = analyze_path(&path, &AnalysisConfig::default(), None)?;
    for s in a.summaries.values().filter(|s| s.is_ctor() || s.is_special) {
        println!("{}{}", s.func, if s.is_special { " (takes a sub-VTT)" } else { "" });
        for w in &s.vptr_writes {
            println!("  this+{:#x} = {}", w.offset, w.value);
        }
        for (obj, slot) in &s.vtt_copies {
            println!("  this+{obj:#x} = vtt[{slot:#x}]");
        }
        for c in &s.calls {
            let target = c.target.map_or("?".into(), |t| t.to_string());
            println!("  call {target} this={:?} arg2={:?}", c.arg1, c.arg2);
        }
    }
    Ok(())
}
