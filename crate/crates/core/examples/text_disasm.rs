//! Run the analysis on a textual listing instead of the built-in decoder.
//! The listing here is rendered from the decoder itself; any external
//! disassembler's output converted to the same grammar works.
//!
//!     cargo run --example text_disasm -- fixtures/running/bin/running

use virtscan::config::AnalysisConfig;
use virtscan::disasm::{decode_all, render_listing, DisasmMode};
use virtscan::pipeline::analyze;
use virtscan::{Abi, BinaryImage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "fixtures/running/bin/running".into());
    let img = BinaryImage::load(&path, Abi::Itanium, 8)?;
    let text = render_listing(&decode_all(&img));
    println!("{}", text.lines().take(8).collect::<Vec<_>>().join("\n"));

    let file = std::env::temp_dir().join("virtscan-example.lst");
    std::fs::write(&file, &text)?;
    let cfg = AnalysisConfig { disasm: DisasmMode::TextIngest(file), ..Default::default() };
    let a = analyze(&img, &cfg, None)?;
    println!("...\n{} constructors, {} edges", a.ctors.len(), a.hierarchy.edges().len());
    Ok(())
}
