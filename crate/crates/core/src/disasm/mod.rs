//! Normalized x86-64 instruction stream.
//!
//! Only the vocabulary constructors are written in is modelled precisely:
//! `mov`, `lea`, `add`, `sub`, `call`, `ret`, `push`, `pop`, `jmp`, `jcc`
//! and `leave` with register, immediate and `[reg+disp]` operands.
//! Everything else becomes [`Op::Other`], carrying the destination it
//! clobbers when that is identifiable.

pub mod decode;
pub mod encode;
pub mod text;

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::addr::Va;
use crate::image::BinaryImage;

pub use decode::{decode_function, decode_all, DecodeError};
pub use text::{ingest_text_disasm, render_listing, GrammarError};

/// Semantic class of an instruction, as consumed by the constructor
/// summarizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Op {
    Move,
    LoadEffective,
    Add,
    Sub,
    Call,
    Store,
    Load,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Mnem {
    Mov,
    Lea,
    Add,
    Sub,
    Call,
    Ret,
    Push,
    Pop,
    Jmp,
    Jcc,
    Leave,
    Other,
}

impl Mnem {
    pub fn name(self) -> &'static str {
        match self {
            Mnem::Mov => "mov",
            Mnem::Lea => "lea",
            Mnem::Add => "add",
            Mnem::Sub => "sub",
            Mnem::Call => "call",
            Mnem::Ret => "ret",
            Mnem::Push => "push",
            Mnem::Pop => "pop",
            Mnem::Jmp => "jmp",
            Mnem::Jcc => "jcc",
            Mnem::Leave => "leave",
            Mnem::Other => "other",
        }
    }
}

/// A general-purpose register: `num` is the hardware number (0 = rax,
/// 15 = r15), `width` the access size in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Reg {
    pub num: u8,
    pub width: u8,
}

pub const RAX: u8 = 0;
pub const RCX: u8 = 1;
pub const RDX: u8 = 2;
pub const RSP: u8 = 4;
pub const RBP: u8 = 5;
pub const RSI: u8 = 6;
pub const RDI: u8 = 7;
pub const R8: u8 = 8;
pub const R9: u8 = 9;

const NAMES64: [&str; 16] = [
    "rax", "rcx", "rdx", "rbx", "rsp", "rbp", "rsi", "rdi", "r8", "r9", "r10", "r11", "r12",
    "r13", "r14", "r15",
];
const NAMES32: [&str; 16] = [
    "eax", "ecx", "edx", "ebx", "esp", "ebp", "esi", "edi", "r8d", "r9d", "r10d", "r11d",
    "r12d", "r13d", "r14d", "r15d",
];
const NAMES16: [&str; 16] = [
    "ax", "cx", "dx", "bx", "sp", "bp", "si", "di", "r8w", "r9w", "r10w", "r11w", "r12w",
    "r13w", "r14w", "r15w",
];
const NAMES8: [&str; 16] = [
    "al", "cl", "dl", "bl", "spl", "bpl", "sil", "dil", "r8b", "r9b", "r10b", "r11b", "r12b",
    "r13b", "r14b", "r15b",
];

impl Reg {
    pub const fn q(num: u8) -> Reg {
        Reg { num, width: 8 }
    }

    pub const fn d(num: u8) -> Reg {
        Reg { num, width: 4 }
    }

    pub fn name(self) -> &'static str {
        let n = (self.num & 15) as usize;
        match self.width {
            8 => NAMES64[n],
            4 => NAMES32[n],
            2 => NAMES16[n],
            _ => NAMES8[n],
        }
    }

    pub fn parse(s: &str) -> Option<Reg> {
        let s = s.trim().to_ascii_lowercase();
        for (width, table) in [(8, &NAMES64), (4, &NAMES32), (2, &NAMES16), (1, &NAMES8)] {
            if let Some(n) = table.iter().position(|r| *r == s) {
                return Some(Reg { num: n as u8, width });
            }
        }
        None
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `[base + disp]`; `base == None` means an absolute address (RIP-relative
/// operands are resolved to absolute at decode time).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Mem {
    pub base: Option<Reg>,
    pub disp: i64,
    pub width: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Operand {
    Reg(Reg),
    Imm(i64),
    Mem(Mem),
}

impl Operand {
    pub fn reg(self) -> Option<Reg> {
        match self {
            Operand::Reg(r) => Some(r),
            _ => None,
        }
    }

    pub fn imm(self) -> Option<i64> {
        match self {
            Operand::Imm(v) => Some(v),
            _ => None,
        }
    }

    pub fn mem(self) -> Option<Mem> {
        match self {
            Operand::Mem(m) => Some(m),
            _ => None,
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Operand::Reg(r) => write!(f, "{r}"),
            Operand::Imm(v) if v < 0 => write!(f, "-0x{:x}", v.unsigned_abs()),
            Operand::Imm(v) => write!(f, "0x{v:x}"),
            Operand::Mem(m) => {
                match m.width {
                    8 => {}
                    4 => f.write_str("dword ")?,
                    2 => f.write_str("word ")?,
                    _ => f.write_str("byte ")?,
                }
                match m.base {
                    None => write!(f, "[0x{:x}]", m.disp as u64),
                    Some(b) if m.disp == 0 => write!(f, "[{b}]"),
                    Some(b) if m.disp < 0 => write!(f, "[{b}-0x{:x}]", m.disp.unsigned_abs()),
                    Some(b) => write!(f, "[{b}+0x{:x}]", m.disp),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct NormInstr {
    pub addr: Va,
    pub op: Op,
    pub mnem: Mnem,
    pub dst: Option<Operand>,
    pub src: Option<Operand>,
    pub raw_len: u8,
}

impl NormInstr {
    /// Build an instruction, deriving `op` from the mnemonic and operand
    /// shapes exactly as the decoder and the text reader do.
    pub fn new(addr: Va, mnem: Mnem, dst: Option<Operand>, src: Option<Operand>, raw_len: u8) -> Self {
        NormInstr {
            addr,
            op: classify(mnem, dst, src),
            mnem,
            dst,
            src,
            raw_len,
        }
    }

    pub fn next_addr(&self) -> Va {
        Va(self.addr.0 + u64::from(self.raw_len))
    }

    /// Direct call or jump target.
    pub fn branch_target(&self) -> Option<Va> {
        match (self.mnem, self.src) {
            (Mnem::Call | Mnem::Jmp | Mnem::Jcc, Some(Operand::Imm(t))) => Some(Va(t as u64)),
            _ => None,
        }
    }
}

/// Semantic class of a mnemonic applied to its operands.
pub fn classify(mnem: Mnem, dst: Option<Operand>, src: Option<Operand>) -> Op {
    match mnem {
        Mnem::Mov => match (dst, src) {
            (Some(Operand::Mem(_)), _) => Op::Store,
            (_, Some(Operand::Mem(_))) => Op::Load,
            _ => Op::Move,
        },
        Mnem::Lea => Op::LoadEffective,
        Mnem::Add => Op::Add,
        Mnem::Sub => Op::Sub,
        Mnem::Call => Op::Call,
        _ => Op::Other,
    }
}

impl fmt::Display for NormInstr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:x}: {}", self.addr.0, self.mnem.name())?;
        match (self.dst, self.src) {
            (Some(d), Some(s)) => write!(f, " {d}, {s}")?,
            (Some(d), None) => write!(f, " {d}")?,
            (None, Some(s)) => write!(f, " {s}")?,
            (None, None) => {}
        }
        write!(f, " ; len={}", self.raw_len)
    }
}

/// A swept function body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FunctionBody {
    pub start: Va,
    pub instrs: Vec<NormInstr>,
    /// Decoding stopped on an undecodable instruction.
    pub partial: bool,
}

/// Function start → body, in address order.
pub type Listing = BTreeMap<Va, FunctionBody>;

/// Where instruction streams come from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
pub enum DisasmMode {
    #[default]
    Builtin,
    TextIngest(std::path::PathBuf),
}

impl std::str::FromStr for DisasmMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "builtin" {
            Ok(DisasmMode::Builtin)
        } else if let Some(p) = s.strip_prefix("text:") {
            Ok(DisasmMode::TextIngest(p.into()))
        } else {
            Err(format!("unknown disassembly mode `{s}` (builtin | text:<file>)"))
        }
    }
}

impl fmt::Display for DisasmMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DisasmMode::Builtin => f.write_str("builtin"),
            DisasmMode::TextIngest(p) => write!(f, "text:{}", p.display()),
        }
    }
}

/// Produce the listing for `img` according to `mode`.
pub fn listing_for(img: &BinaryImage, mode: &DisasmMode) -> Result<Listing, text::GrammarError> {
    match mode {
        DisasmMode::Builtin => Ok(decode_all(img)),
        DisasmMode::TextIngest(path) => {
            let src = std::fs::read_to_string(path).map_err(|e| GrammarError {
                line: 0,
                message: format!("{}: {e}", path.display()),
            })?;
            ingest_text_disasm(&src, img, false)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_names_round_trip() {
        for num in 0..16 {
            for width in [1, 2, 4, 8] {
                let r = Reg { num, width };
                assert_eq!(Reg::parse(r.name()), Some(r));
            }
        }
    }

    #[test]
    fn mov_classification() {
        let m = Operand::Mem(Mem { base: Some(Reg::q(RAX)), disp: 0, width: 8 });
        let r = Operand::Reg(Reg::q(RDX));
        assert_eq!(classify(Mnem::Mov, Some(m), Some(r)), Op::Store);
        assert_eq!(classify(Mnem::Mov, Some(r), Some(m)), Op::Load);
        assert_eq!(classify(Mnem::Mov, Some(r), Some(Operand::Imm(1))), Op::Move);
    }
}
