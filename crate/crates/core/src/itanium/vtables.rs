use std::collections::BTreeSet;

use super::{SubVTable, VTableGroup, VTables};
use crate::addr::Va;
use crate::disasm::{Listing, Operand};
use crate::image::{BinaryImage, SectionKind};

/// Which slots above an address point are checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationRule {
    /// Function pointer, RTTI slot, and offset-to-top ≤ 0.
    Itanium,
    /// Function pointer and RTTI (complete object locator) slot only;
    /// MSVC VTables carry no offset-to-top.
    Msvc,
}

/// Addresses that might be vptrs: text immediates and absolute memory
/// operands pointing into data (one GOT hop allowed), plus aligned data
/// words pointing into data. Construction VTables are referenced only from
/// VTTs, never from code, hence the second source.
pub fn collect_candidates(img: &BinaryImage, listing: &Listing) -> BTreeSet<Va> {
    let mut out = BTreeSet::new();
    let mut push = |v: Va| {
        if img.classify(v) == Some(SectionKind::GotLike) {
            let r = img.resolve_got(v);
            if r != v && img.is_data(r) {
                out.insert(r);
            }
        } else if img.is_data(v) {
            out.insert(v);
        }
    };
    for body in listing.values() {
        for i in &body.instrs {
            for o in [i.dst, i.src].into_iter().flatten() {
                match o {
                    Operand::Imm(v) => push(Va(v as u64)),
                    Operand::Mem(m) if m.base.is_none() => push(Va(m.disp as u64)),
                    _ => {}
                }
            }
        }
    }
    for slot in img.data_words() {
        if let Ok(v) = img.read_ptr(slot) {
            if img.is_data(v) {
                out.insert(v);
            }
        }
    }
    out
}

/// Check the vptr conditions at `v`; returns `(offset_to_top, rtti)`.
pub fn validate_vptr(img: &BinaryImage, v: Va, rule: ValidationRule) -> Option<(i64, Va)> {
    let w = img.word();
    // VTables live in (relocated) read-only data, never in the GOT.
    let in_table_data = matches!(
        img.classify(v),
        Some(SectionKind::ReadOnlyData | SectionKind::Data)
    );
    if !v.is_aligned(w) || !in_table_data || v.0 < 2 * w {
        return None;
    }
    // (a) first slot is a virtual function
    if !img.is_fn_ptr_slot(v) {
        return None;
    }
    // (b) RTTI slot is null or points into data
    let rtti = img.read_ptr(Va(v.0 - w)).ok()?;
    if rtti != Va::ZERO && !img.is_data(rtti) {
        return None;
    }
    match rule {
        // (c) offset-to-top is zero (primary) or negative (secondary)
        ValidationRule::Itanium => {
            let ott = img.read_word(Va(v.0 - 2 * w)).ok()?;
            (ott <= 0).then_some((ott, rtti))
        }
        ValidationRule::Msvc => Some((0, rtti)),
    }
}

pub fn find_vtables(img: &BinaryImage, listing: &Listing, rule: ValidationRule) -> VTables {
    find_vtables_in(img, &collect_candidates(img, listing), rule)
}

/// Validate `candidates` and group the survivors.
pub fn find_vtables_in(img: &BinaryImage, candidates: &BTreeSet<Va>, rule: ValidationRule) -> VTables {
    let w = img.word();
    let valid: Vec<(Va, i64, Va)> = candidates
        .iter()
        .filter_map(|&v| validate_vptr(img, v, rule).map(|(ott, rtti)| (v, ott, rtti)))
        .collect();

    let mut groups = Vec::new();
    let mut open: Option<(SubVTable, Vec<SubVTable>)> = None;
    for (k, &(v, ott, rtti)) in valid.iter().enumerate() {
        // Stop before the next vptr's header slots.
        let header = match rule {
            ValidationRule::Itanium => 2 * w,
            ValidationRule::Msvc => w,
        };
        let limit = valid.get(k + 1).map(|n| n.0 .0.saturating_sub(header));
        let mut fn_ptrs = Vec::new();
        let mut slot = v;
        while limit.is_none_or(|l| slot.0 < l) && img.is_fn_ptr_slot(slot) {
            fn_ptrs.push(img.read_ptr(slot).unwrap_or(Va::ZERO));
            slot = Va(slot.0 + w);
        }
        let sub = SubVTable {
            address_point: v,
            offset_to_top: ott,
            rtti_slot: rtti,
            fn_ptrs,
            vbase_offsets: Vec::new(),
            vcall_region_present: false,
        };
        if rule == ValidationRule::Msvc || ott == 0 {
            if let Some((p, s)) = open.take() {
                groups.push(VTableGroup::new(p, s));
            }
            open = Some((sub, Vec::new()));
        } else {
            let same_section = |a: Va| img.section_at(a).map(|s| s.base);
            match open.as_mut() {
                Some((p, secs)) if same_section(p.address_point) == same_section(v) => secs.push(sub),
                _ => log::debug!("secondary vptr {v} without an open group"),
            }
        }
    }
    if let Some((p, s)) = open.take() {
        groups.push(VTableGroup::new(p, s));
    }
    VTables::new(groups)
}
