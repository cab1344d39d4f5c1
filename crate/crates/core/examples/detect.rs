//! Does a binary use virtual inheritance?
//!
//!     cargo run --example detect -- fixtures/running/bin/running

use virtscan::config::AnalysisConfig;
use virtscan::pipeline::analyze_path;
use virtscan::BinaryImage;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "fixtures/running/bin/running".into());
    let data = std::fs::read(&path)?;
    let cfg = AnalysisConfig {
        abi: BinaryImage::sniff_abi(&data).unwrap_or_default(),
        ..Default::default()
    };
    let (_, analysis) = analyze_path(&path, &cfg, None)?;
    println!("{path}: {}", analysis.detect());
    Ok(())
}
