//! The flat `key = value` config format: parse, inspect, write back.
//!
//!     cargo run --example config

use virtscan::config::AnalysisConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let parsed = AnalysisConfig::parse("abi = msvc\ncap_offset = 0x2000\nvbtable_constant = -8\n")?;
    println!("keys set: {:?}", parsed.keys);
    for w in parsed.config.warnings() {
        println!("warning: {w}");
    }
    print!("{}", parsed.config.to_config_string());
    Ok(())
}
