//! Synthetic binaries with known layouts.
//!
//! MSVC test images are generated rather than compiled: small PE32+ files
//! whose constructors follow the MSVC x64 shape (`this` in `rcx`, vbptrs
//! written from immediates, virtual bases constructed at their VB-Table
//! displacement). Each crafted image carries its own ground truth.

use std::collections::BTreeMap;

use object::pe;
use object::write::pe::{NtHeaders, SectionRange, Writer};

use crate::addr::Va;
use crate::disasm::encode::assemble;
use crate::disasm::{Mem, Mnem, Operand, Reg, RAX, RBP, RCX, RDX, RSP};
use crate::recovery::EdgeKind;

pub const IMAGE_BASE: u64 = 0x1_4000_0000;
const SECTION_ALIGN: u32 = 0x1000;
const FILE_ALIGN: u32 = 0x200;

/// Contents of a three-section PE32+ image.
#[derive(Debug, Clone, Default)]
pub struct Pe64 {
    pub text: Vec<u8>,
    pub rdata: Vec<u8>,
    /// `(begin, end)` RVAs written as RUNTIME_FUNCTION records.
    pub functions: Vec<(u32, u32)>,
    pub entry: u32,
}

struct Ranges {
    text: SectionRange,
    rdata: SectionRange,
    pdata: SectionRange,
}

fn reserve(w: &mut Writer<'_>, text: u32, rdata: u32, pdata: u32) -> Ranges {
    w.reserve_dos_header_and_stub();
    w.reserve_nt_headers(pe::IMAGE_NUMBEROF_DIRECTORY_ENTRIES);
    w.reserve_section_headers(3);
    Ranges {
        text: w.reserve_text_section(text),
        rdata: w.reserve_rdata_section(rdata),
        pdata: w.reserve_pdata_section(pdata),
    }
}

impl Pe64 {
    /// RVAs of `.text` and `.rdata` for the given section sizes.
    pub fn layout(text_len: usize, rdata_len: usize, n_functions: usize) -> (u32, u32) {
        let mut sink = Vec::new();
        let mut w = Writer::new(true, SECTION_ALIGN, FILE_ALIGN, &mut sink);
        let r = reserve(&mut w, text_len as u32, rdata_len as u32, 12 * n_functions as u32);
        (r.text.virtual_address, r.rdata.virtual_address)
    }

    pub fn write(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut w = Writer::new(true, SECTION_ALIGN, FILE_ALIGN, &mut out);
        let r = reserve(&mut w, self.text.len() as u32, self.rdata.len() as u32, 12 * self.functions.len() as u32);
        // Every function shares one minimal UNWIND_INFO at the end of .rdata.
        let unwind = r.rdata.virtual_address + self.rdata.len() as u32 - 4;
        let pdata: Vec<u8> = self
            .functions
            .iter()
            .flat_map(|&(b, e)| [b, e, unwind])
            .flat_map(u32::to_le_bytes)
            .collect();
        w.write_dos_header_and_stub().expect("in-memory buffer");
        w.write_nt_headers(NtHeaders {
            machine: pe::IMAGE_FILE_MACHINE_AMD64,
            time_date_stamp: 0,
            characteristics: pe::IMAGE_FILE_EXECUTABLE_IMAGE | pe::IMAGE_FILE_LARGE_ADDRESS_AWARE,
            major_linker_version: 14,
            minor_linker_version: 0,
            address_of_entry_point: self.entry,
            image_base: IMAGE_BASE,
            major_operating_system_version: 6,
            minor_operating_system_version: 0,
            major_image_version: 0,
            minor_image_version: 0,
            major_subsystem_version: 6,
            minor_subsystem_version: 0,
            subsystem: pe::IMAGE_SUBSYSTEM_WINDOWS_CUI,
            dll_characteristics: 0,
            size_of_stack_reserve: 0x10_0000,
            size_of_stack_commit: 0x1000,
            size_of_heap_reserve: 0x10_0000,
            size_of_heap_commit: 0x1000,
        });
        w.write_section_headers();
        w.write_section(r.text.file_offset, &self.text);
        w.write_section(r.rdata.file_offset, &self.rdata);
        w.write_section(r.pdata.file_offset, &pdata);
        out
    }
}

/// A crafted MSVC image plus the facts it was built from.
#[derive(Debug, Clone)]
pub struct CraftedMsvc {
    pub bytes: Vec<u8>,
    /// Class name → VTable address point naming the class.
    pub classes: BTreeMap<&'static str, Va>,
    /// Constructor entry points.
    pub ctors: BTreeMap<&'static str, Va>,
    /// VB-Table address → displacements.
    pub vbtables: BTreeMap<Va, Vec<i64>>,
    /// `(derived, base, kind)` as laid out by construction.
    pub expected: Vec<(&'static str, &'static str, EdgeKind)>,
}

impl CraftedMsvc {
    /// Address point → class name, the shape of a `--map` file.
    pub fn name_map(&self) -> BTreeMap<Va, String> {
        self.classes.iter().map(|(n, v)| (*v, n.to_string())).collect()
    }
}

type Ins = (Mnem, Option<Operand>, Option<Operand>);

fn r(n: u8) -> Option<Operand> {
    Some(Operand::Reg(Reg::q(n)))
}

fn m(base: u8, disp: i64) -> Option<Operand> {
    Some(Operand::Mem(Mem { base: Some(Reg::q(base)), disp, width: 8 }))
}

fn abs(v: Va) -> Option<Operand> {
    Some(Operand::Mem(Mem { base: None, disp: v.0 as i64, width: 8 }))
}

fn imm(v: i64) -> Option<Operand> {
    Some(Operand::Imm(v))
}

/// Constructor and virtual-function bodies in the MSVC debug-build shape.
enum Piece {
    Ctor(Vec<Step>),
    VirtualFn,
    Main(&'static str),
}

enum Step {
    /// Store a VB-Table or VTable pointer at `this + off`.
    Ptr(i64, Target),
    /// Call a constructor on `this + off`.
    Call(i64, &'static str),
}

#[derive(Clone, Copy)]
enum Target {
    VbTable(usize),
    VTable(&'static str),
}

struct Plan {
    /// `(class, virtual function)` in `.rdata` order.
    vtables: Vec<&'static str>,
    vbtables: Vec<Vec<i64>>,
    /// Functions in address order; callees before callers.
    functions: Vec<(&'static str, Piece)>,
    expected: Vec<(&'static str, &'static str, EdgeKind)>,
}

fn fn_name(class: &str) -> String {
    format!("{class}::f")
}

fn build(plan: Plan) -> CraftedMsvc {
    // .rdata: [COL = 0][fn] per VTable, then 16-byte VB-Tables, then the
    // shared UNWIND_INFO.
    let vt_len = 16 * plan.vtables.len();
    let vb_start = vt_len + 16;
    let rdata_len = vb_start + 16 * plan.vbtables.len() + 8;

    // Code size does not depend on addresses (all references are rel32),
    // so a dry run at a fake base sizes `.text`.
    let (dry, _) = emit(&plan, 0x1000, 0x2000, vb_start);
    let (text_rva, rdata_rva) = Pe64::layout(dry.code.len(), rdata_len, plan.functions.len());
    let text_va = IMAGE_BASE + u64::from(text_rva);
    let rdata_va = IMAGE_BASE + u64::from(rdata_rva);
    let (code, addrs) = emit(&plan, text_va, rdata_va, vb_start);

    let mut rdata = vec![0u8; rdata_len];
    let mut classes = BTreeMap::new();
    for (i, class) in plan.vtables.iter().enumerate() {
        let f = addrs.addr[&fn_name(class)];
        rdata[16 * i + 8..16 * i + 16].copy_from_slice(&f.0.to_le_bytes());
        classes.insert(*class, Va(rdata_va + 16 * i as u64 + 8));
    }
    let mut vbtables = BTreeMap::new();
    for (i, entries) in plan.vbtables.iter().enumerate() {
        let off = vb_start + 16 * i;
        assert!(entries.len() < 4, "VB-Table slots are 16 bytes");
        for (j, e) in std::iter::once(&0).chain(entries).enumerate() {
            rdata[off + 4 * j..off + 4 * j + 4].copy_from_slice(&(*e as i32).to_le_bytes());
        }
        vbtables.insert(Va(rdata_va + off as u64), entries.clone());
    }
    // UNWIND_INFO version 1, no codes.
    rdata[rdata_len - 4] = 1;

    let ctors = plan
        .functions
        .iter()
        .filter(|(_, p)| matches!(p, Piece::Ctor(_)))
        .map(|(n, _)| (*n, addrs.addr[*n]))
        .collect();
    let entry = plan
        .functions
        .iter()
        .find(|(_, p)| matches!(p, Piece::Main(_)))
        .map(|(n, _)| (addrs.addr[*n].0 - IMAGE_BASE) as u32)
        .unwrap_or(text_rva);
    let functions = addrs
        .ranges
        .iter()
        .map(|(b, e)| ((b - IMAGE_BASE) as u32, (e - IMAGE_BASE) as u32))
        .collect();
    let pe = Pe64 {
        text: code.code,
        rdata,
        functions,
        entry,
    };
    CraftedMsvc {
        bytes: pe.write(),
        classes,
        ctors,
        vbtables,
        expected: plan.expected,
    }
}

struct Code {
    code: Vec<u8>,
}

struct Addrs {
    addr: BTreeMap<String, Va>,
    ranges: Vec<(u64, u64)>,
}

fn emit(plan: &Plan, text_va: u64, rdata_va: u64, vb_start: usize) -> (Code, Addrs) {
    let vtable_ap = |class: &str| {
        let i = plan.vtables.iter().position(|c| *c == class).expect("declared VTable");
        Va(rdata_va + 16 * i as u64 + 8)
    };
    let vbtable = |i: usize| Va(rdata_va + (vb_start + 16 * i) as u64);
    let mut code = Vec::new();
    let mut addr: BTreeMap<String, Va> = BTreeMap::new();
    let mut ranges = Vec::new();
    for (name, piece) in &plan.functions {
        let at = text_va + code.len() as u64;
        let body: Vec<Ins> = match piece {
            Piece::VirtualFn => vec![
                (Mnem::Push, None, r(RBP)),
                (Mnem::Mov, r(RBP), r(RSP)),
                (Mnem::Pop, r(RBP), None),
                (Mnem::Ret, None, None),
            ],
            Piece::Main(ctor) => vec![
                (Mnem::Sub, r(RSP), imm(0x68)),
                (Mnem::Lea, r(RCX), m(RSP, 0x20)),
                (Mnem::Call, None, imm(addr[*ctor].0 as i64)),
                (Mnem::Add, r(RSP), imm(0x68)),
                (Mnem::Ret, None, None),
            ],
            Piece::Ctor(steps) => {
                let mut b = vec![
                    (Mnem::Push, None, r(RBP)),
                    (Mnem::Mov, r(RBP), r(RSP)),
                    (Mnem::Sub, r(RSP), imm(0x20)),
                    (Mnem::Mov, m(RBP, 0x10), r(RCX)),
                ];
                for s in steps {
                    match *s {
                        Step::Ptr(off, t) => {
                            let v = match t {
                                Target::VbTable(i) => vbtable(i),
                                Target::VTable(c) => vtable_ap(c),
                            };
                            b.push((Mnem::Mov, r(RAX), m(RBP, 0x10)));
                            b.push((Mnem::Lea, r(RDX), abs(v)));
                            b.push((Mnem::Mov, m(RAX, off), r(RDX)));
                        }
                        Step::Call(off, callee) => {
                            b.push((Mnem::Mov, r(RCX), m(RBP, 0x10)));
                            if off != 0 {
                                b.push((Mnem::Add, r(RCX), imm(off)));
                            }
                            // "most derived" flag: callee skips its virtual bases
                            b.push((Mnem::Mov, r(RDX), imm(0)));
                            b.push((Mnem::Call, None, imm(addr[callee].0 as i64)));
                        }
                    }
                }
                b.push((Mnem::Mov, r(RAX), m(RBP, 0x10)));
                b.push((Mnem::Add, r(RSP), imm(0x20)));
                b.push((Mnem::Pop, r(RBP), None));
                b.push((Mnem::Ret, None, None));
                b
            }
        };
        let (bytes, _) = assemble(at, &body).expect("crafted bodies use the encodable subset");
        code.extend_from_slice(&bytes);
        ranges.push((at, at + bytes.len() as u64));
        addr.insert(name.to_string(), Va(at));
        while code.len() % 16 != 0 {
            code.push(0xcc);
        }
    }
    (Code { code }, Addrs { addr, ranges })
}

/// `B : virtual A`, `C : virtual A`, `D : B, C`.
///
/// Object layouts (vbptr first, so every VB-Table starts with 0):
/// A = [vfptr, a]; B = [vbptr, b | A]; D = [B: vbptr, b][C: vbptr, c][d][A].
/// D's constructor builds A at +0x28 (its VB-Table entry) and calls the B
/// and C constructors with the "not most derived" flag.
pub fn msvc_diamond() -> CraftedMsvc {
    use Step::*;
    use Target::*;
    build(Plan {
        vtables: vec!["A", "B", "C", "D"],
        // B, C, D-as-B, D-as-C
        vbtables: vec![vec![0x10], vec![0x10], vec![0x28], vec![0x18]],
        functions: vec![
            ("A::f", Piece::VirtualFn),
            ("B::f", Piece::VirtualFn),
            ("C::f", Piece::VirtualFn),
            ("D::f", Piece::VirtualFn),
            ("A", Piece::Ctor(vec![Ptr(0, VTable("A"))])),
            ("B", Piece::Ctor(vec![Ptr(0, VbTable(0)), Call(0x10, "A"), Ptr(0x10, VTable("B"))])),
            ("C", Piece::Ctor(vec![Ptr(0, VbTable(1)), Call(0x10, "A"), Ptr(0x10, VTable("C"))])),
            (
                "D",
                Piece::Ctor(vec![
                    Ptr(0, VbTable(2)),
                    Ptr(0x10, VbTable(3)),
                    Call(0x28, "A"),
                    Call(0, "B"),
                    Call(0x10, "C"),
                    Ptr(0x28, VTable("D")),
                ]),
            ),
            ("main", Piece::Main("D")),
        ],
        expected: vec![
            ("B", "A", EdgeKind::Virtual),
            ("C", "A", EdgeKind::Virtual),
            ("D", "A", EdgeKind::Virtual),
            ("D", "B", EdgeKind::Intermediate),
            ("D", "C", EdgeKind::Intermediate),
        ],
    })
}

/// `D : virtual A, virtual B, virtual C` with D = [vbptr, d][A][B][C].
pub fn msvc_triple() -> CraftedMsvc {
    use Step::*;
    use Target::*;
    build(Plan {
        vtables: vec!["A", "B", "C", "D"],
        vbtables: vec![vec![0x10, 0x20, 0x30]],
        functions: vec![
            ("A::f", Piece::VirtualFn),
            ("B::f", Piece::VirtualFn),
            ("C::f", Piece::VirtualFn),
            ("D::f", Piece::VirtualFn),
            ("A", Piece::Ctor(vec![Ptr(0, VTable("A"))])),
            ("B", Piece::Ctor(vec![Ptr(0, VTable("B"))])),
            ("C", Piece::Ctor(vec![Ptr(0, VTable("C"))])),
            (
                "D",
                Piece::Ctor(vec![
                    Ptr(0, VbTable(0)),
                    Call(0x10, "A"),
                    Call(0x20, "B"),
                    Call(0x30, "C"),
                    Ptr(0x10, VTable("D")),
                ]),
            ),
            ("main", Piece::Main("D")),
        ],
        expected: vec![
            ("D", "A", EdgeKind::Virtual),
            ("D", "B", EdgeKind::Virtual),
            ("D", "C", EdgeKind::Virtual),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{Abi, BinaryImage, SectionKind};

    #[test]
    fn diamond_parses_as_pe() {
        let c = msvc_diamond();
        let img = BinaryImage::from_bytes(&c.bytes, Abi::Msvc, 8).unwrap();
        let kinds: Vec<_> = img.sections().iter().map(|s| (s.name.as_str(), s.kind)).collect();
        assert!(kinds.contains(&(".text", SectionKind::Text)));
        assert!(kinds.contains(&(".rdata", SectionKind::ReadOnlyData)));
        for ctor in c.ctors.values() {
            assert!(img.entry_functions().contains(ctor));
        }
        for ap in c.classes.values() {
            assert!(img.is_fn_ptr_slot(*ap));
        }
    }
}
