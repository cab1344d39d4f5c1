use serde::Serialize;

use super::{SubVtt, VTables};
use crate::addr::Va;
use crate::image::BinaryImage;

/// vbase-offsets confirmed for one member sub-VTable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MemberVbase {
    pub vptr: Va,
    pub offsets: Vec<i64>,
    pub vcall_region_present: bool,
}

/// Result of running the extraction over one sub-VTT.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubVttVbase {
    pub primary_vptr: Va,
    pub members: Vec<MemberVbase>,
}

impl SubVttVbase {
    /// A sub-VTT is valid when at least one vbase-offset matched.
    pub fn is_valid(&self) -> bool {
        self.members.iter().any(|m| !m.offsets.is_empty())
    }

    /// Offsets of the primary sub-VTable (the sub-VTT's own list).
    pub fn primary_offsets(&self) -> &[i64] {
        self.members
            .iter()
            .find(|m| m.vptr == self.primary_vptr)
            .map(|m| m.offsets.as_slice())
            .unwrap_or(&[])
    }
}

/// Lowest address the header of the sub-VTable at `vptr` may extend to:
/// the end of the previous sub-VTable's function pointers, or the start of
/// the section.
fn header_floor(img: &BinaryImage, vtables: &VTables, vptr: Va) -> Va {
    let sec_base = img.section_at(vptr).map(|s| s.base).unwrap_or(Va::ZERO);
    let prev = vtables
        .address_points()
        .take_while(|a| *a < vptr)
        .last()
        .and_then(|a| vtables.sub(a));
    match prev {
        Some(p) if p.address_point >= sec_base => {
            Va(p.address_point.0 + img.word() * p.fn_ptrs.len() as u64)
        }
        _ => sec_base,
    }
}

/// Walk the words above `anchor` (starting at `anchor - 3W`), matching each
/// member in entry order; a match is `ott(member) - ott(anchor) == -vbo`,
/// which for the primary (ott 0) is exactly the `ott == -vbo` test.
fn scan(img: &BinaryImage, vtables: &VTables, members: &[Va], anchor: Va) -> MemberVbase {
    let w = img.word();
    let anchor_ott = vtables.offset_to_top(anchor).unwrap_or(0);
    let floor = header_floor(img, vtables, anchor);
    let mut offsets = Vec::new();
    let mut cur = anchor.0.checked_sub(3 * w);
    for m in members {
        let Some(loc) = cur.filter(|l| *l >= floor.0) else {
            break;
        };
        let Ok(vbo) = img.read_word(Va(loc)) else {
            break;
        };
        let Some(ott) = vtables.offset_to_top(*m) else {
            continue;
        };
        if vbo > 0 && ott - anchor_ott == -vbo {
            offsets.push(vbo);
            cur = loc.checked_sub(w);
        }
    }
    // Unmatched header words that look like vcall-offsets (zero or
    // negative) mark a vcall region; their values are not interpreted.
    let mut vcall = false;
    if let Some(mut loc) = cur {
        let mut seen = 0;
        let mut all_small = true;
        while loc >= floor.0 {
            match img.read_word(Va(loc)) {
                Ok(v) if v <= 0 => seen += 1,
                _ => {
                    all_small = false;
                    break;
                }
            }
            match loc.checked_sub(w) {
                Some(l) => loc = l,
                None => break,
            }
        }
        vcall = seen > 0 && all_small && anchor_ott != 0;
    }
    MemberVbase {
        vptr: anchor,
        offsets,
        vcall_region_present: vcall,
    }
}

/// Recover the vbase-offsets stored above each sub-VTable of a sub-VTT.
///
/// The primary follows the classic walk: start three words above the
/// address point and, for each member in entry order, accept the word when
/// the member's offset-to-top is its negation. Secondary members get the
/// same walk relative to their own offset-to-top.
pub fn extract_vbase_offsets(img: &BinaryImage, subvtt: &SubVtt, vtables: &VTables) -> SubVttVbase {
    let members = &subvtt.member_vptrs;
    let per = members
        .iter()
        .map(|&m| scan(img, vtables, members, m))
        .collect();
    SubVttVbase {
        primary_vptr: subvtt.primary_vptr,
        members: per,
    }
}

/// Attach extraction results to the VTable groups. The first non-empty
/// result for a sub-VTable wins.
pub fn apply_vbase_offsets(vtables: &mut VTables, results: &[SubVttVbase]) {
    for r in results {
        for m in &r.members {
            let Some((gi, mi)) = vtables.locate(m.vptr) else {
                continue;
            };
            let g = &mut vtables.groups_mut()[gi];
            let sub = if mi == 0 {
                &mut g.primary
            } else {
                &mut g.secondaries[mi - 1]
            };
            if sub.vbase_offsets.is_empty() {
                sub.vbase_offsets = m.offsets.clone();
            }
            sub.vcall_region_present |= m.vcall_region_present;
        }
    }
}
