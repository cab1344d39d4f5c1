use serde::Serialize;

use super::{MetaError, SubVtt, VTables, Vtt};
use crate::addr::Va;
use crate::image::BinaryImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct VttOptions {
    /// Also end a VTT at an entry greater than its second entry (the
    /// strict ordering rule). Off by default: a VTT's own sub-VTT for its first
    /// construction VTable is usually followed by a larger address point,
    /// so the rule truncates ordinary VTTs.
    pub prose_boundary: bool,
}

/// Why the forward scan of a VTT stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Next word is not a VTable address point.
    NotAddressPoint,
    /// Next entry is below the first entry (start of another VTT).
    BelowFirst,
    /// Next entry is above the second entry (strict ordering rule).
    AboveSecond,
    SectionEnd,
}

/// Scan data for arrays of VTable address points.
pub fn find_vtts(img: &BinaryImage, vtables: &VTables, opts: VttOptions) -> Vec<Vtt> {
    let w = img.word();
    let mut out = Vec::new();
    if vtables.is_empty() {
        return out;
    }
    for sec in img.sections().iter().filter(|s| s.kind.is_data()) {
        let end = sec.base.0 + sec.size;
        let mut addr = sec.base.0.div_ceil(w) * w;
        while addr + w <= end {
            let first = match img.read_ptr(Va(addr)) {
                Ok(v) if vtables.is_address_point(v) => v,
                _ => {
                    addr += w;
                    continue;
                }
            };
            let mut entries = vec![first];
            let mut next = addr + w;
            let terminated_by = loop {
                if next + w > end {
                    break Termination::SectionEnd;
                }
                let v = match img.read_ptr(Va(next)) {
                    Ok(v) if vtables.is_address_point(v) => v,
                    _ => break Termination::NotAddressPoint,
                };
                if v < first {
                    break Termination::BelowFirst;
                }
                if opts.prose_boundary && entries.len() >= 2 && v > entries[1] {
                    break Termination::AboveSecond;
                }
                entries.push(v);
                next += w;
            };
            if entries.len() > 1 {
                let alternative_split = if opts.prose_boundary {
                    None
                } else {
                    (2..entries.len()).find(|&i| entries[i] > entries[1])
                };
                out.push(Vtt {
                    base: Va(addr),
                    owner_vptr: first,
                    entries,
                    sub_vtts: Vec::new(),
                    stride: w,
                    terminated_by,
                    alternative_split,
                });
                addr = next;
            } else {
                addr += w;
            }
        }
    }
    out
}

/// Partition a VTT's entries into sub-VTTs by offset-to-top sign, after
/// sorting the targets.
pub fn group_subvtts(vtt: &Vtt, vtables: &VTables) -> Result<Vec<SubVtt>, MetaError> {
    let mut targets = vtt.entries.clone();
    targets.sort_unstable();
    targets.dedup();
    let first = vtt.entries[0];
    let mut subs: Vec<SubVtt> = Vec::new();
    for t in targets {
        let Some(ott) = vtables.offset_to_top(t) else {
            continue;
        };
        if ott == 0 {
            let pos = vtt.entries.iter().position(|e| *e == t).unwrap_or(0);
            subs.push(SubVtt {
                start: Va(vtt.base.0 + vtt.stride * pos as u64),
                primary_vptr: t,
                member_vptrs: vec![t],
                is_construction: false,
            });
        } else if let Some(open) = subs.last_mut() {
            open.member_vptrs.push(t);
        }
    }
    if subs.is_empty() {
        return Err(MetaError::NoPrimaryFound(vtt.base));
    }
    for s in &mut subs {
        s.is_construction = !s.member_vptrs.contains(&first);
    }
    Ok(subs)
}
