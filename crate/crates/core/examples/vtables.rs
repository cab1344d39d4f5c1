//! VTable groups, step by step: disassemble, collect candidate vptrs,
//! validate and group them.
//!
//!     cargo run --example vtables -- fixtures/mixed/bin/mixed

use virtscan::disasm::decode_all;
use virtscan::itanium::{collect_candidates, find_vtables_in, ValidationRule};
use virtscan::{Abi, BinaryImage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "fixtures/running/bin/running".into());
    let img = BinaryImage::load(&path, Abi::Itanium, 8)?;
    let listing = decode_all(&img);
    let candidates = collect_candidates(&img, &listing);
    let vtables = find_vtables_in(&img, &candidates, ValidationRule::Itanium);
    println!("{} candidates, {} groups", candidates.len(), vtables.len());
    for g in vtables.groups() {
        println!("group {} ({} secondaries)", g.id(), g.secondaries.len());
        for m in g.members() {
            println!(
                "  {} offset-to-top {:>4} functions {:?}",
                m.address_point,
                m.offset_to_top,
                m.fn_ptrs.iter().map(|f| f.to_string()).collect::<Vec<_>>()
            );
        }
    }
    Ok(())
}
