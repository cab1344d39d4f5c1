//! VTTs, their sub-VTTs and the vbase-offsets confirmed through them, plus
//! the construction-to-regular VTable mapping.
//!
//!     cargo run --example vtts -- fixtures/chain2/bin/chain2

use virtscan::disasm::decode_all;
use virtscan::itanium::{recover_metadata, VttOptions};
use virtscan::{Abi, BinaryImage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "fixtures/running/bin/running".into());
    let img = BinaryImage::load(&path, Abi::Itanium, 8)?;
    let meta = recover_metadata(&img, &decode_all(&img), VttOptions::default());
    for vtt in &meta.vtts {
        println!("VTT {} owned by {} ({} entries)", vtt.base, vtt.owner_vptr, vtt.entries.len());
        for sub in &vtt.sub_vtts {
            let g = meta.vtables.group(sub.primary_vptr).unwrap();
            println!(
                "  {} {} vbase-offsets {:?}",
                if sub.is_construction { "construction" } else { "regular     " },
                sub.primary_vptr,
                g.vbase_offsets().iter().map(|v| format!("{v:#x}")).collect::<Vec<_>>()
            );
        }
    }
    for (cons, regular) in &meta.mapping.pairs {
        println!("construction group {cons} belongs to class {regular}");
    }
    for id in &meta.mapping.stand_ins {
        println!("construction group {id} stands in for a class without a regular VTable");
    }
    Ok(())
}
