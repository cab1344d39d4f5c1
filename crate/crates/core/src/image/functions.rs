//! Function-start discovery for stripped images.
//!
//! Union of direct call targets found by a linear sweep of every text
//! section and the usual prologue shapes (`endbr64`, `push rbp; mov rbp,rsp`)
//! at instruction boundaries.

use std::collections::BTreeSet;

use super::{BinaryImage, SectionKind};
use crate::addr::Va;
use crate::disasm::decode::{decode_one, Decoded};

const ENDBR64: [u8; 4] = [0xf3, 0x0f, 0x1e, 0xfa];
const PUSH_RBP_MOV_RBP_RSP: [u8; 4] = [0x55, 0x48, 0x89, 0xe5];

pub fn derive_function_starts(img: &BinaryImage) -> BTreeSet<Va> {
    let mut starts = BTreeSet::new();
    let mut call_targets = Vec::new();
    for s in img.sections().iter().filter(|s| s.kind == SectionKind::Text) {
        let mut off = 0usize;
        let mut prev_was_endbr = false;
        while off < s.bytes.len() {
            let addr = Va(s.base.0 + off as u64);
            let rest = &s.bytes[off..];
            if rest.starts_with(&ENDBR64) || (rest.starts_with(&PUSH_RBP_MOV_RBP_RSP) && !prev_was_endbr) {
                starts.insert(addr);
            }
            prev_was_endbr = rest.starts_with(&ENDBR64);
            match decode_one(rest, addr) {
                Ok(Decoded { len, call_target, .. }) => {
                    if let Some(t) = call_target {
                        call_targets.push(t);
                    }
                    off += len;
                }
                // Resynchronise one byte later.
                Err(_) => off += 1,
            }
        }
    }
    starts.extend(call_targets.into_iter().filter(|t| img.is_text(*t)));
    starts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Abi;

    #[test]
    fn finds_call_targets_and_prologues() {
        // 0x1000: endbr64; call 0x1010; ret ; pad ; 0x1010: push rbp; mov rbp,rsp; pop rbp; ret
        let mut text = vec![0xf3, 0x0f, 0x1e, 0xfa, 0xe8, 0x07, 0, 0, 0, 0xc3];
        text.resize(0x10, 0xcc);
        text.extend_from_slice(&[0x55, 0x48, 0x89, 0xe5, 0x5d, 0xc3]);
        let img = BinaryImage::builder(Abi::Itanium, 8)
            .section(".text", 0x1000, SectionKind::Text, text)
            .build()
            .unwrap();
        let f: Vec<_> = img.entry_functions().iter().copied().collect();
        assert_eq!(f, vec![Va(0x1000), Va(0x1010)]);
    }
}
