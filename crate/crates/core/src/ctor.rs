//! Constructor identification and symbolic micro-parsing.
//!
//! Each function is interpreted once, in address order, over a tiny value
//! lattice: the incoming `this` plus a constant, an immediate, the incoming
//! second argument (the sub-VTT pointer of special constructors) plus a
//! constant, a word loaded from it, or unknown. Registers and stack slots
//! carry values; calls clobber caller-saved registers after being recorded.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::addr::Va;
use crate::disasm::{self, FunctionBody, Listing, Mem, Mnem, NormInstr, Op, Operand, Reg};
use crate::image::{Abi, BinaryImage, SectionKind};

/// Symbolic value of a register or stack slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SymValue {
    Unknown,
    /// Incoming first argument plus `k`.
    ThisPlus { k: i64 },
    Imm { v: Va },
    /// Incoming second argument plus `k`.
    Arg2Plus { k: i64 },
    /// Word loaded from incoming second argument plus `k`.
    Arg2Load { k: i64 },
}

/// Internal lattice: `SymValue` plus stack addresses relative to the
/// entry stack pointer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Val {
    Sym(SymValue),
    Stack(i64),
}

const UNKNOWN: Val = Val::Sym(SymValue::Unknown);

impl Val {
    fn public(self) -> SymValue {
        match self {
            Val::Sym(s) => s,
            Val::Stack(_) => SymValue::Unknown,
        }
    }

    fn plus(self, d: i64) -> Val {
        match self {
            Val::Sym(SymValue::ThisPlus { k }) => Val::Sym(SymValue::ThisPlus { k: k.wrapping_add(d) }),
            Val::Sym(SymValue::Arg2Plus { k }) => Val::Sym(SymValue::Arg2Plus { k: k.wrapping_add(d) }),
            Val::Sym(SymValue::Imm { v }) => Val::Sym(SymValue::Imm { v: v.offset(d) }),
            Val::Stack(o) => Val::Stack(o.wrapping_add(d)),
            _ => UNKNOWN,
        }
    }
}

/// Integer argument registers and caller-saved set of a platform.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CallingConvention {
    pub arg1: u8,
    pub arg2: u8,
    pub caller_saved: Vec<u8>,
}

impl CallingConvention {
    pub fn for_abi(abi: Abi) -> Self {
        use disasm::{R8, R9, RAX, RCX, RDI, RDX, RSI};
        match abi {
            Abi::Itanium => CallingConvention {
                arg1: RDI,
                arg2: RSI,
                caller_saved: vec![RAX, RCX, RDX, RSI, RDI, R8, R9, 10, 11],
            },
            Abi::Msvc => CallingConvention {
                arg1: RCX,
                arg2: RDX,
                caller_saved: vec![RAX, RCX, RDX, R8, R9, 10, 11],
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CallRecord {
    pub site: Va,
    /// Direct target, `None` for unresolved indirect calls.
    pub target: Option<Va>,
    pub arg1: SymValue,
    pub arg2: SymValue,
}

impl CallRecord {
    pub fn this_offset(&self) -> Option<i64> {
        match self.arg1 {
            SymValue::ThisPlus { k } => Some(k),
            _ => None,
        }
    }
}

/// A store of a pointer into the object under construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PtrWrite {
    pub offset: i64,
    pub value: Va,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CtorSummary {
    pub func: Va,
    /// Immediate VTable address points stored at `this + offset`.
    pub vptr_writes: Vec<PtrWrite>,
    /// Immediate VB-Table addresses stored at `this + offset` (MSVC).
    pub vbptr_writes: Vec<PtrWrite>,
    /// `(object offset, sub-VTT offset)` for vptrs copied from the second
    /// argument.
    pub vtt_copies: Vec<(i64, i64)>,
    pub vtt_args_seen: Vec<Va>,
    pub calls: Vec<CallRecord>,
    /// Initializes vptrs from its second argument instead of immediates.
    pub is_special: bool,
    /// The body was cut short by an undecodable instruction.
    pub partial: bool,
}

impl CtorSummary {
    pub fn is_ctor(&self) -> bool {
        !self.vptr_writes.is_empty()
    }

    /// The vptr stored at the lowest object offset, which names the class.
    pub fn primary_write(&self) -> Option<Va> {
        self.vptr_writes.iter().min_by_key(|w| w.offset).map(|w| w.value)
    }

    pub fn first_vbptr(&self) -> Option<PtrWrite> {
        self.vbptr_writes.iter().min_by_key(|w| w.offset).copied()
    }
}

/// What the summarizer needs to know about recovered tables.
#[derive(Debug, Clone)]
pub struct CtorContext {
    pub address_points: BTreeSet<Va>,
    pub vbtables: BTreeSet<Va>,
    /// `[start, end)` of every VTT.
    pub vtts: Vec<(Va, Va)>,
    pub conv: CallingConvention,
}

impl CtorContext {
    pub fn new(abi: Abi) -> Self {
        CtorContext {
            address_points: BTreeSet::new(),
            vbtables: BTreeSet::new(),
            vtts: Vec::new(),
            conv: CallingConvention::for_abi(abi),
        }
    }

    fn in_vtt(&self, a: Va) -> bool {
        self.vtts.iter().any(|(s, e)| a >= *s && a < *e)
    }
}

struct State {
    regs: [Val; 16],
    slots: BTreeMap<i64, Val>,
}

impl State {
    fn reg(&self, r: Reg) -> Val {
        let v = self.regs[(r.num & 15) as usize];
        match (r.width, v) {
            (8, v) => v,
            (4, Val::Sym(SymValue::Imm { v })) => Val::Sym(SymValue::Imm { v: Va(v.0 & 0xffff_ffff) }),
            _ => UNKNOWN,
        }
    }

    fn set(&mut self, r: Reg, v: Val) {
        let v = match (r.width, v) {
            (8, v) => v,
            // 32-bit writes zero-extend
            (4, Val::Sym(SymValue::Imm { v })) => Val::Sym(SymValue::Imm { v: Va(v.0 & 0xffff_ffff) }),
            _ => UNKNOWN,
        };
        self.regs[(r.num & 15) as usize] = v;
    }

    fn clobber(&mut self, r: Reg) {
        self.regs[(r.num & 15) as usize] = UNKNOWN;
    }

    fn addr_of(&self, m: Mem) -> Val {
        match m.base {
            None => Val::Sym(SymValue::Imm { v: Va(m.disp as u64) }),
            Some(b) => self.reg(b).plus(m.disp),
        }
    }
}

fn operand_value(st: &State, img: &BinaryImage, o: Operand, word: u8) -> Val {
    match o {
        Operand::Reg(r) => st.reg(r),
        Operand::Imm(v) => Val::Sym(SymValue::Imm { v: Va(v as u64) }),
        Operand::Mem(m) => load(st, img, m, word),
    }
}

fn load(st: &State, img: &BinaryImage, m: Mem, word: u8) -> Val {
    if m.width != word {
        return UNKNOWN;
    }
    match st.addr_of(m) {
        Val::Stack(off) => st.slots.get(&off).copied().unwrap_or(UNKNOWN),
        Val::Sym(SymValue::Arg2Plus { k }) => Val::Sym(SymValue::Arg2Load { k }),
        // A GOT slot holds the address of a table.
        Val::Sym(SymValue::Imm { v }) if m.base.is_none() && img.classify(v) == Some(SectionKind::GotLike) => {
            let r = img.resolve_got(v);
            if r != v {
                Val::Sym(SymValue::Imm { v: r })
            } else {
                UNKNOWN
            }
        }
        _ => UNKNOWN,
    }
}

/// Interpret one function body.
pub fn summarize(func: Va, instrs: &[NormInstr], img: &BinaryImage, ctx: &CtorContext) -> CtorSummary {
    let word = img.word_size();
    let conv = &ctx.conv;
    let mut st = State {
        regs: [UNKNOWN; 16],
        slots: BTreeMap::new(),
    };
    st.regs[conv.arg1 as usize] = Val::Sym(SymValue::ThisPlus { k: 0 });
    st.regs[conv.arg2 as usize] = Val::Sym(SymValue::Arg2Plus { k: 0 });
    st.regs[disasm::RSP as usize] = Val::Stack(0);

    let mut s = CtorSummary {
        func,
        vptr_writes: Vec::new(),
        vbptr_writes: Vec::new(),
        vtt_copies: Vec::new(),
        vtt_args_seen: Vec::new(),
        calls: Vec::new(),
        is_special: false,
        partial: false,
    };
    let rsp = Reg::q(disasm::RSP);
    let rbp = Reg::q(disasm::RBP);

    for i in instrs {
        match (i.op, i.mnem) {
            (Op::Move, _) | (Op::Load, _) => {
                if let (Some(Operand::Reg(d)), Some(src)) = (i.dst, i.src) {
                    let v = match src {
                        Operand::Mem(m) => load(&st, img, m, d.width),
                        o => operand_value(&st, img, o, word),
                    };
                    st.set(d, v);
                }
            }
            (Op::Store, _) => {
                let (Some(Operand::Mem(m)), Some(src)) = (i.dst, i.src) else {
                    continue;
                };
                let v = if m.width == word { operand_value(&st, img, src, word) } else { UNKNOWN };
                match st.addr_of(m) {
                    Val::Stack(off) => {
                        st.slots.insert(off, v);
                    }
                    Val::Sym(SymValue::ThisPlus { k }) => match v {
                        Val::Sym(SymValue::Imm { v }) if ctx.address_points.contains(&v) => {
                            s.vptr_writes.push(PtrWrite { offset: k, value: v })
                        }
                        Val::Sym(SymValue::Imm { v }) if ctx.vbtables.contains(&v) => {
                            s.vbptr_writes.push(PtrWrite { offset: k, value: v })
                        }
                        Val::Sym(SymValue::Arg2Load { k: j }) => s.vtt_copies.push((k, j)),
                        _ => {}
                    },
                    _ => {}
                }
            }
            (Op::LoadEffective, _) => {
                if let (Some(Operand::Reg(d)), Some(Operand::Mem(m))) = (i.dst, i.src) {
                    let v = st.addr_of(m);
                    st.set(d, v);
                }
            }
            (Op::Add | Op::Sub, _) => {
                let sign = if i.op == Op::Add { 1 } else { -1 };
                match (i.dst, i.src) {
                    (Some(Operand::Reg(d)), Some(Operand::Imm(c))) => {
                        let v = st.reg(d).plus(sign * c);
                        st.set(d, v);
                    }
                    (Some(Operand::Reg(d)), Some(Operand::Reg(r))) => {
                        let (a, b) = (st.reg(d), st.reg(r));
                        let small = |v: Va| (v.0 as i64).unsigned_abs() < (1 << 24);
                        let v = match (a, b) {
                            (x, Val::Sym(SymValue::Imm { v })) if small(v) => x.plus(sign * v.0 as i64),
                            (Val::Sym(SymValue::Imm { v }), y @ Val::Sym(SymValue::ThisPlus { .. }))
                                if sign == 1 && small(v) =>
                            {
                                y.plus(v.0 as i64)
                            }
                            _ => UNKNOWN,
                        };
                        st.set(d, v);
                    }
                    (Some(Operand::Reg(d)), _) => st.clobber(d),
                    (Some(Operand::Mem(m)), _) => {
                        if let Val::Stack(off) = st.addr_of(m) {
                            st.slots.insert(off, UNKNOWN);
                        }
                    }
                    _ => {}
                }
            }
            (Op::Call, _) => {
                let target = match i.src {
                    Some(Operand::Imm(t)) => Some(Va(t as u64)),
                    Some(Operand::Mem(m)) if m.base.is_none() => {
                        let slot = Va(m.disp as u64);
                        let r = img.resolve_got(slot);
                        (r != slot && img.is_text(r)).then_some(r)
                    }
                    _ => None,
                };
                let arg1 = st.regs[conv.arg1 as usize].public();
                let arg2 = st.regs[conv.arg2 as usize].public();
                if let SymValue::Imm { v } = arg2 {
                    if ctx.in_vtt(v) {
                        s.vtt_args_seen.push(v);
                    }
                }
                s.calls.push(CallRecord { site: i.addr, target, arg1, arg2 });
                for &r in &conv.caller_saved {
                    st.regs[r as usize] = UNKNOWN;
                }
            }
            (_, Mnem::Push) => {
                let v = i.src.map(|o| operand_value(&st, img, o, word)).unwrap_or(UNKNOWN);
                let sp = st.reg(rsp).plus(-i64::from(word));
                st.set(rsp, sp);
                if let Val::Stack(off) = sp {
                    st.slots.insert(off, v);
                }
            }
            (_, Mnem::Pop) => {
                let sp = st.reg(rsp);
                let v = match sp {
                    Val::Stack(off) => st.slots.get(&off).copied().unwrap_or(UNKNOWN),
                    _ => UNKNOWN,
                };
                if let Some(Operand::Reg(d)) = i.dst {
                    st.set(d, v);
                }
                st.set(rsp, sp.plus(i64::from(word)));
            }
            (_, Mnem::Leave) => {
                let fp = st.reg(rbp);
                let v = match fp {
                    Val::Stack(off) => st.slots.get(&off).copied().unwrap_or(UNKNOWN),
                    _ => UNKNOWN,
                };
                st.set(rbp, v);
                st.set(rsp, fp.plus(i64::from(word)));
            }
            _ => match i.dst {
                Some(Operand::Reg(d)) => st.clobber(d),
                Some(Operand::Mem(m)) => {
                    if let Val::Stack(off) = st.addr_of(m) {
                        st.slots.insert(off, UNKNOWN);
                    }
                }
                _ => {}
            },
        }
    }
    s.is_special = s.vptr_writes.is_empty() && !s.vtt_copies.is_empty();
    s
}

/// Summaries of every function in the listing, keyed by start address.
pub fn summarize_all(listing: &Listing, img: &BinaryImage, ctx: &CtorContext) -> BTreeMap<Va, CtorSummary> {
    listing
        .iter()
        .map(|(&f, body): (&Va, &FunctionBody)| {
            let mut s = summarize(f, &body.instrs, img, ctx);
            s.partial = body.partial;
            (f, s)
        })
        .collect()
}

/// Functions storing at least one known VTable address point.
pub fn identify_ctors(summaries: &BTreeMap<Va, CtorSummary>) -> BTreeSet<Va> {
    summaries
        .values()
        .filter(|s| s.is_ctor())
        .map(|s| s.func)
        .collect()
}
