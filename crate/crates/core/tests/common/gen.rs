//! Randomized crafted images and straight-line oracles for VTable and
//! VTT discovery.

use std::collections::BTreeSet;

use proptest::prelude::*;
use virtscan::itanium::VTables;
use virtscan::{Abi, BinaryImage, SectionKind, Va};

pub const TEXT: u64 = 0x1000;
pub const RODATA: u64 = 0x4000;
pub const NFUNCS: u64 = 16;
pub const W: u64 = 8;

pub fn func(i: u64) -> u64 {
    TEXT + 0x10 * i
}

pub fn is_func(v: u64) -> bool {
    (TEXT..TEXT + 0x10 * NFUNCS).contains(&v) && (v - TEXT).is_multiple_of(0x10)
}

/// One layout element of a crafted read-only data section.
#[derive(Debug, Clone)]
pub enum Block {
    /// Arbitrary words.
    Junk(Vec<JunkWord>),
    /// A VTable group: per member `(vbase-offset picks, ott, rtti, fns)`.
    Group { secondaries: Vec<i64>, vbo_picks: Vec<Vec<usize>>, noise: Vec<i64>, rtti: bool, fns: Vec<Vec<u64>> },
    /// Pointers to address points of groups, chosen by index.
    Table(Vec<(usize, usize)>),
    /// A well-formed VTT: every member of the chosen groups, in order.
    Vtt(Vec<usize>),
}

#[derive(Debug, Clone, Copy)]
pub enum JunkWord {
    Raw(u64),
    Small(i64),
    Func(u64),
    Data(u64),
}

pub fn junk() -> impl Strategy<Value = JunkWord> {
    prop_oneof![
        any::<u64>().prop_map(JunkWord::Raw),
        (-0x40i64..0x40).prop_map(JunkWord::Small),
        (0..NFUNCS).prop_map(JunkWord::Func),
        (0u64..0x1000).prop_map(JunkWord::Data),
    ]
}

pub fn block() -> impl Strategy<Value = Block> {
    let group = (0usize..3)
        .prop_flat_map(|nsec| {
            (
                prop::collection::vec((1i64..8).prop_map(|k| -k * 8), nsec),
                prop::collection::vec(prop::collection::vec(0usize..4, 0..3), nsec + 1),
                prop::collection::vec(-0x20i64..0x40, 0..2),
                any::<bool>(),
                prop::collection::vec(prop::collection::vec(0..NFUNCS, 1..4), nsec + 1),
            )
        })
        .prop_map(|(secondaries, vbo_picks, noise, rtti, fns)| Block::Group { secondaries, vbo_picks, noise, rtti, fns });
    prop_oneof![
        2 => prop::collection::vec(junk(), 1..6).prop_map(Block::Junk),
        4 => group,
        2 => prop::collection::vec((0usize..8, 0usize..3), 1..6).prop_map(Block::Table),
        2 => prop::collection::vec(0usize..8, 1..3).prop_map(Block::Vtt),
    ]
}

/// Lay out blocks into words, resolving table entries in a second pass.
pub fn layout(blocks: &[Block]) -> Vec<u64> {
    let mut words: Vec<u64> = Vec::new();
    let mut groups: Vec<Vec<u64>> = Vec::new();
    let mut pending: Vec<(usize, usize, usize)> = Vec::new();
    let sizes: Vec<usize> = blocks
        .iter()
        .filter_map(|b| match b {
            Block::Group { secondaries, .. } => Some(secondaries.len() + 1),
            _ => None,
        })
        .collect();
    let addr = |i: usize| RODATA + W * i as u64;
    for b in blocks {
        match b {
            Block::Junk(js) => words.extend(js.iter().map(|j| match *j {
                JunkWord::Raw(v) => v,
                JunkWord::Small(v) => v as u64,
                JunkWord::Func(i) => func(i),
                JunkWord::Data(o) => RODATA + o,
            })),
            Block::Group { secondaries, vbo_picks, noise, rtti, fns } => {
                let otts: Vec<i64> = std::iter::once(0).chain(secondaries.iter().copied()).collect();
                let mut aps = Vec::new();
                for (m, &ott) in otts.iter().enumerate() {
                    // vbase-offset words, highest address first: picks are
                    // relative displacements to other members.
                    let mut above: Vec<u64> = vbo_picks[m]
                        .iter()
                        .map(|&p| {
                            let target = otts[p % otts.len()];
                            (ott - target) as u64
                        })
                        .collect();
                    if m == 0 {
                        above.extend(noise.iter().map(|v| *v as u64));
                    }
                    above.reverse();
                    words.extend(above);
                    words.push(ott as u64);
                    words.push(if *rtti { RODATA } else { 0 });
                    aps.push(addr(words.len()));
                    words.extend(fns[m].iter().map(|&f| func(f)));
                }
                groups.push(aps);
            }
            Block::Vtt(gs) => {
                if !sizes.is_empty() {
                    for &g in gs {
                        for m in 0..sizes[g % sizes.len()] {
                            pending.push((words.len(), g, m));
                            words.push(0);
                        }
                    }
                }
            }
            Block::Table(refs) => {
                for &(g, m) in refs {
                    pending.push((words.len(), g, m));
                    words.push(0);
                }
            }
        }
    }
    for (slot, g, m) in pending {
        if !groups.is_empty() {
            let aps = &groups[g % groups.len()];
            words[slot] = aps[m % aps.len()];
        }
    }
    words.truncate(512);
    words
}

pub fn image(words: &[u64]) -> BinaryImage {
    let bytes: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
    BinaryImage::builder(Abi::Itanium, 8)
        .section(".text", TEXT, SectionKind::Text, vec![0xc3; (0x10 * NFUNCS) as usize])
        .section(".rodata", RODATA, SectionKind::ReadOnlyData, bytes)
        .functions((0..NFUNCS).map(|i| Va(func(i))))
        .build()
        .unwrap()
}

/// `(address point, ott, rtti, fns)` per member, grouped.
pub type Flat = Vec<Vec<(u64, i64, u64, Vec<u64>)>>;

pub fn flatten(v: &VTables) -> Flat {
    v.groups()
        .iter()
        .map(|g| {
            g.members()
                .map(|m| (m.address_point.0, m.offset_to_top, m.rtti_slot.0, m.fn_ptrs.iter().map(|f| f.0).collect()))
                .collect()
        })
        .collect()
}

/// Straight-line re-statement of VTable discovery over the raw words.
pub fn brute_vtables(words: &[u64]) -> Flat {
    let end = RODATA + W * words.len() as u64;
    let in_data = |v: u64| v >= RODATA && v < end;
    let candidates: BTreeSet<u64> = words.iter().copied().filter(|v| in_data(*v)).collect();
    let mut valid = Vec::new();
    for v in candidates {
        if v % W != 0 {
            continue;
        }
        let i = ((v - RODATA) / W) as usize;
        if i < 2 || !is_func(words[i]) {
            continue;
        }
        let rtti = words[i - 1];
        if rtti != 0 && !in_data(rtti) {
            continue;
        }
        let ott = words[i - 2] as i64;
        if ott <= 0 {
            valid.push((v, ott, rtti));
        }
    }
    let mut out: Flat = Vec::new();
    for (k, &(v, ott, rtti)) in valid.iter().enumerate() {
        let limit = valid.get(k + 1).map(|n| n.0 - 2 * W);
        let mut fns = Vec::new();
        let mut i = ((v - RODATA) / W) as usize;
        while i < words.len() && limit.is_none_or(|l| RODATA + W * (i as u64) < l) && is_func(words[i]) {
            fns.push(words[i]);
            i += 1;
        }
        if ott == 0 {
            out.push(vec![(v, ott, rtti, fns)]);
        } else if let Some(g) = out.last_mut() {
            g.push((v, ott, rtti, fns));
        }
    }
    out
}

/// Every start position, every prefix length: keep the longest run of
/// address points not below the first (and, with the strict ordering rule, not
/// above the second), then take runs greedily from low addresses.
pub fn brute_vtts(words: &[u64], aps: &BTreeSet<u64>, prose: bool) -> Vec<(u64, Vec<u64>)> {
    let ok_prefix = |s: usize, len: usize| {
        (0..len).all(|k| {
            let v = words[s + k];
            aps.contains(&v) && v >= words[s] && (!prose || k < 2 || v <= words[s + 1])
        })
    };
    let mut out = Vec::new();
    let mut s = 0;
    while s < words.len() {
        let longest = (1..=words.len() - s).filter(|&l| ok_prefix(s, l)).max().unwrap_or(0);
        if longest >= 2 {
            out.push((RODATA + W * s as u64, words[s..s + longest].to_vec()));
            s += longest;
        } else {
            s += 1;
        }
    }
    out
}

