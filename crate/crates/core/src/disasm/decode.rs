//! Table-driven x86-64 length decoder with normalization of the modelled
//! subset.

use super::{FunctionBody, Listing, Mem, Mnem, NormInstr, Operand, Reg};
use crate::addr::Va;
use crate::image::BinaryImage;

/// Maximum architectural instruction length.
const MAX_LEN: usize = 15;
/// Sweep budget per function.
const MAX_INSTRS: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    /// The instruction length cannot be determined (unsupported encoding
    /// space or truncated input).
    #[error("cannot determine instruction length at {0}")]
    DecodeStall(Va),
}

/// Result of decoding one instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decoded {
    pub instr: NormInstr,
    pub len: usize,
    pub call_target: Option<Va>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Imm {
    None,
    B1,
    B2,
    /// 4 bytes, or 2 with an operand-size prefix.
    Z,
    /// 4 bytes, 8 with REX.W, 2 with an operand-size prefix (`mov r, imm`).
    V,
    /// `enter`: imm16 + imm8.
    Enter,
    /// Memory offset: 8 bytes, 4 with an address-size prefix.
    Moffs,
}

#[derive(Clone, Copy)]
struct Shape {
    modrm: bool,
    imm: Imm,
}

const fn s(modrm: bool, imm: Imm) -> Option<Shape> {
    Some(Shape { modrm, imm })
}

fn one_byte_shape(op: u8) -> Option<Shape> {
    match op {
        0x00..=0x3f => match op & 7 {
            0..=3 => s(true, Imm::None),
            4 => s(false, Imm::B1),
            5 => s(false, Imm::Z),
            _ => None, // prefixes handled earlier, rest invalid in 64-bit mode
        },
        0x50..=0x5f => s(false, Imm::None),
        0x63 => s(true, Imm::None),
        0x68 => s(false, Imm::Z),
        0x69 => s(true, Imm::Z),
        0x6a => s(false, Imm::B1),
        0x6b => s(true, Imm::B1),
        0x6c..=0x6f => s(false, Imm::None),
        0x70..=0x7f => s(false, Imm::B1),
        0x80 | 0x83 => s(true, Imm::B1),
        0x81 => s(true, Imm::Z),
        0x84..=0x8f => s(true, Imm::None),
        0x90..=0x99 | 0x9b..=0x9f => s(false, Imm::None),
        0xa0..=0xa3 => s(false, Imm::Moffs),
        0xa4..=0xa7 | 0xaa..=0xaf => s(false, Imm::None),
        0xa8 => s(false, Imm::B1),
        0xa9 => s(false, Imm::Z),
        0xb0..=0xb7 => s(false, Imm::B1),
        0xb8..=0xbf => s(false, Imm::V),
        0xc0 | 0xc1 | 0xc6 => s(true, Imm::B1),
        0xc2 | 0xca => s(false, Imm::B2),
        0xc3 | 0xc9 | 0xcb | 0xcc | 0xcf => s(false, Imm::None),
        0xc7 => s(true, Imm::Z),
        0xc8 => s(false, Imm::Enter),
        0xcd => s(false, Imm::B1),
        0xd0..=0xd3 => s(true, Imm::None),
        0xd7 => s(false, Imm::None),
        0xd8..=0xdf => s(true, Imm::None),
        0xe0..=0xe7 | 0xeb => s(false, Imm::B1),
        0xe8 | 0xe9 => s(false, Imm::Z),
        0xec..=0xef | 0xf1 | 0xf4 | 0xf5 | 0xf8..=0xfd => s(false, Imm::None),
        // f6/f7 immediates depend on modrm.reg, fixed up by the caller
        0xf6 | 0xf7 | 0xfe | 0xff => s(true, Imm::None),
        _ => None,
    }
}

fn two_byte_shape(op: u8) -> Option<Shape> {
    match op {
        0x00..=0x03 | 0x0d => s(true, Imm::None),
        0x05..=0x09 | 0x0b | 0x0e => s(false, Imm::None),
        0x10..=0x1f | 0x20..=0x23 | 0x28..=0x2f => s(true, Imm::None),
        0x30..=0x35 | 0x37 => s(false, Imm::None),
        0x40..=0x6f => s(true, Imm::None),
        0x70..=0x73 => s(true, Imm::B1),
        0x74..=0x76 | 0x78..=0x7f => s(true, Imm::None),
        0x77 => s(false, Imm::None),
        0x80..=0x8f => s(false, Imm::Z),
        0x90..=0x9f => s(true, Imm::None),
        0xa0..=0xa2 | 0xa8..=0xaa => s(false, Imm::None),
        0xa3 | 0xa5 | 0xab | 0xad..=0xaf => s(true, Imm::None),
        0xa4 | 0xac => s(true, Imm::B1),
        0xb0..=0xb9 | 0xbb..=0xbf => s(true, Imm::None),
        0xba => s(true, Imm::B1),
        0xc0 | 0xc1 | 0xc3 | 0xc7 => s(true, Imm::None),
        0xc2 | 0xc4..=0xc6 => s(true, Imm::B1),
        0xc8..=0xcf => s(false, Imm::None),
        0xd0..=0xff => s(true, Imm::None),
        _ => None,
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    addr: Va,
}

impl Cursor<'_> {
    fn u8(&mut self) -> Result<u8, DecodeError> {
        if self.pos >= self.bytes.len() || self.pos >= MAX_LEN {
            return Err(DecodeError::DecodeStall(self.addr));
        }
        let b = self.bytes[self.pos];
        self.pos += 1;
        Ok(b)
    }

    fn le(&mut self, n: usize) -> Result<i64, DecodeError> {
        if self.pos + n > self.bytes.len() || self.pos + n > MAX_LEN {
            return Err(DecodeError::DecodeStall(self.addr));
        }
        let b = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(match n {
            1 => b[0] as i8 as i64,
            2 => i16::from_le_bytes([b[0], b[1]]) as i64,
            4 => i32::from_le_bytes(b.try_into().unwrap()) as i64,
            8 => i64::from_le_bytes(b.try_into().unwrap()),
            _ => unreachable!(),
        })
    }
}

/// Decoded ModRM r/m operand before RIP resolution.
#[derive(Clone, Copy)]
enum Rm {
    Reg(u8),
    Mem { base: Option<u8>, disp: i64, rip: bool, indexed: bool },
}

/// Decode one instruction at the start of `bytes`, located at `addr`.
/// Never reads past `bytes`.
pub fn decode_one(bytes: &[u8], addr: Va) -> Result<Decoded, DecodeError> {
    let mut c = Cursor { bytes, pos: 0, addr };
    let mut opsize16 = false;
    let mut addr32 = false;
    let mut rep = false;
    let mut odd_prefix = false; // segment override or lock
    let mut rex = 0u8;
    let mut op = c.u8()?;
    loop {
        match op {
            0x66 => opsize16 = true,
            0x67 => addr32 = true,
            0xf2 | 0xf3 => rep = true,
            0xf0 | 0x26 | 0x2e | 0x36 | 0x3e | 0x64 | 0x65 => odd_prefix = true,
            0x40..=0x4f => {
                rex = op;
                op = c.u8()?;
                if matches!(op, 0x66 | 0x67 | 0xf0 | 0xf2 | 0xf3 | 0x26 | 0x2e | 0x36 | 0x3e | 0x64 | 0x65 | 0x40..=0x4f) {
                    // a REX not directly before the opcode is ignored
                    rex = 0;
                    continue;
                }
                break;
            }
            _ => break,
        }
        op = c.u8()?;
    }
    let rex_w = rex & 8 != 0;
    let rex_r = (rex >> 2) & 1;
    let rex_x = (rex >> 1) & 1;
    let rex_b = rex & 1;

    let (two_byte, opcode, shape) = if op == 0x0f {
        let op2 = c.u8()?;
        match op2 {
            0x38 => {
                c.u8()?;
                (true, 0x38u8, Shape { modrm: true, imm: Imm::None })
            }
            0x3a => {
                c.u8()?;
                (true, 0x3a, Shape { modrm: true, imm: Imm::B1 })
            }
            _ => (
                true,
                op2,
                two_byte_shape(op2).ok_or(DecodeError::DecodeStall(addr))?,
            ),
        }
    } else {
        // c4/c5 (VEX) and 62 (EVEX) are not in the table.
        (false, op, one_byte_shape(op).ok_or(DecodeError::DecodeStall(addr))?)
    };

    let mut modrm_reg = 0u8;
    let mut rm = None;
    if shape.modrm {
        let m = c.u8()?;
        let md = m >> 6;
        modrm_reg = (m >> 3) & 7;
        let rmf = m & 7;
        if !two_byte && opcode == 0x8f && modrm_reg != 0 {
            return Err(DecodeError::DecodeStall(addr)); // XOP
        }
        if md == 3 {
            rm = Some(Rm::Reg(rmf | (rex_b << 3)));
        } else {
            let mut base = Some(rmf | (rex_b << 3));
            let mut indexed = false;
            let mut rip = false;
            let mut disp_len = match md {
                1 => 1,
                2 => 4,
                _ => 0,
            };
            if rmf == 4 {
                let sib = c.u8()?;
                let idx = ((sib >> 3) & 7) | (rex_x << 3);
                let b = sib & 7;
                indexed = idx != 4;
                if b == 5 && md == 0 {
                    base = None;
                    disp_len = 4;
                } else {
                    base = Some(b | (rex_b << 3));
                }
            } else if rmf == 5 && md == 0 {
                base = None;
                rip = true;
                disp_len = 4;
            }
            let disp = if disp_len > 0 { c.le(disp_len)? } else { 0 };
            rm = Some(Rm::Mem { base, disp, rip, indexed });
        }
    }

    let mut imm_kind = shape.imm;
    if !two_byte && (opcode == 0xf6 || opcode == 0xf7) && modrm_reg <= 1 {
        imm_kind = if opcode == 0xf6 { Imm::B1 } else { Imm::Z };
    }
    let imm = match imm_kind {
        Imm::None => None,
        Imm::B1 => Some(c.le(1)?),
        Imm::B2 => Some(c.le(2)?),
        Imm::Z => Some(if opsize16 { c.le(2)? } else { c.le(4)? }),
        Imm::V => Some(if rex_w {
            c.le(8)?
        } else if opsize16 {
            c.le(2)?
        } else {
            c.le(4)?
        }),
        Imm::Enter => {
            c.le(2)?;
            Some(c.le(1)?)
        }
        Imm::Moffs => Some(if addr32 { c.le(4)? } else { c.le(8)? }),
    };
    let len = c.pos;
    let next = addr.0.wrapping_add(len as u64);

    let width = if rex_w {
        8
    } else if opsize16 {
        2
    } else {
        4
    };
    let mem_of = |r: Rm, w: u8| -> Option<Operand> {
        match r {
            Rm::Reg(n) => Some(Operand::Reg(Reg { num: n, width: w })),
            Rm::Mem { indexed: true, .. } => None,
            Rm::Mem { base, disp, rip, .. } => Some(Operand::Mem(if rip {
                Mem { base: None, disp: next.wrapping_add(disp as u64) as i64, width: w }
            } else {
                Mem { base: base.map(Reg::q), disp, width: w }
            })),
        }
    };
    // Full-width clobber of whatever r/m names, for Other instructions.
    let clobber_rm = |r: Option<Rm>| -> Option<Operand> {
        match r {
            Some(Rm::Reg(n)) => Some(Operand::Reg(Reg::q(n))),
            _ => None,
        }
    };
    let reg_field = modrm_reg | (rex_r << 3);
    // High-byte registers (ah..bh) exist only without REX.
    let high_byte = |n: u8| rex == 0 && (4..8).contains(&n);

    let mk = |mnem, dst, src| NormInstr::new(addr, mnem, dst, src, len as u8);
    let other = |dst: Option<Operand>| mk(Mnem::Other, dst, None);

    let mut call_target = None;
    let rm_is_indexed = matches!(rm, Some(Rm::Mem { indexed: true, .. }));
    let instr = if two_byte {
        match opcode {
            0x80..=0x8f => mk(Mnem::Jcc, None, Some(Operand::Imm(next.wrapping_add(imm.unwrap() as u64) as i64))),
            // movzx/movsx, imul, cmov, setcc/bswap write a register
            0xb6 | 0xb7 | 0xbe | 0xbf | 0xaf | 0x40..=0x4f => {
                other(Some(Operand::Reg(Reg::q(reg_field))))
            }
            0x90..=0x9f => other(clobber_rm(rm)),
            0xc8..=0xcf => other(Some(Operand::Reg(Reg::q((opcode - 0xc8) | (rex_b << 3))))),
            _ => other(None),
        }
    } else if odd_prefix || rep && !matches!(opcode, 0xc3) {
        // lock/segment/rep forms: conservatively clobber a register target
        match opcode {
            0x8b | 0x8d | 0x03 | 0x2b | 0x33 => other(Some(Operand::Reg(Reg::q(reg_field)))),
            0x89 | 0x01 | 0x29 | 0xc7 | 0x31 => other(clobber_rm(rm)),
            _ => other(None),
        }
    } else {
        match opcode {
            // add/sub r/m, r
            0x01 | 0x29 | 0x03 | 0x2b | 0x89 | 0x8b => {
                if rm_is_indexed {
                    if matches!(opcode, 0x03 | 0x2b | 0x8b) {
                        other(Some(Operand::Reg(Reg::q(reg_field))))
                    } else {
                        other(None)
                    }
                } else {
                    let r = Operand::Reg(Reg { num: reg_field, width });
                    let m = mem_of(rm.unwrap(), width).unwrap();
                    let mnem = match opcode {
                        0x01 | 0x03 => Mnem::Add,
                        0x29 | 0x2b => Mnem::Sub,
                        _ => Mnem::Mov,
                    };
                    if matches!(opcode, 0x01 | 0x29 | 0x89) {
                        mk(mnem, Some(m), Some(r))
                    } else {
                        mk(mnem, Some(r), Some(m))
                    }
                }
            }
            0x88 | 0x8a => {
                // byte moves
                let hb = high_byte(reg_field) || matches!(rm, Some(Rm::Reg(n)) if high_byte(n));
                if rm_is_indexed || hb {
                    if opcode == 0x8a {
                        other(Some(Operand::Reg(Reg::q(if high_byte(reg_field) { reg_field - 4 } else { reg_field }))))
                    } else {
                        other(match rm {
                            Some(Rm::Reg(n)) => Some(Operand::Reg(Reg::q(if high_byte(n) { n - 4 } else { n }))),
                            _ => None,
                        })
                    }
                } else {
                    let r = Operand::Reg(Reg { num: reg_field, width: 1 });
                    let m = mem_of(rm.unwrap(), 1).unwrap();
                    if opcode == 0x88 {
                        mk(Mnem::Mov, Some(m), Some(r))
                    } else {
                        mk(Mnem::Mov, Some(r), Some(m))
                    }
                }
            }
            0x8d => match rm {
                Some(Rm::Mem { indexed: false, .. }) => mk(
                    Mnem::Lea,
                    Some(Operand::Reg(Reg { num: reg_field, width })),
                    mem_of(rm.unwrap(), 8),
                ),
                _ => other(Some(Operand::Reg(Reg::q(reg_field)))),
            },
            0x05 | 0x2d => mk(
                if opcode == 0x05 { Mnem::Add } else { Mnem::Sub },
                Some(Operand::Reg(Reg { num: 0, width })),
                imm.map(Operand::Imm),
            ),
            0x81 | 0x83 if modrm_reg == 0 || modrm_reg == 5 => match mem_of(rm.unwrap(), width) {
                Some(d) => mk(
                    if modrm_reg == 0 { Mnem::Add } else { Mnem::Sub },
                    Some(d),
                    imm.map(Operand::Imm),
                ),
                None => other(None),
            },
            0xc7 if modrm_reg == 0 => match mem_of(rm.unwrap(), width) {
                Some(d) => mk(Mnem::Mov, Some(d), imm.map(Operand::Imm)),
                None => other(None),
            },
            0xc6 if modrm_reg == 0 => match rm.unwrap() {
                Rm::Reg(n) if high_byte(n) => other(Some(Operand::Reg(Reg::q(n - 4)))),
                r => match mem_of(r, 1) {
                    Some(d) => mk(Mnem::Mov, Some(d), imm.map(Operand::Imm)),
                    None => other(None),
                },
            },
            0xb8..=0xbf => mk(
                Mnem::Mov,
                Some(Operand::Reg(Reg { num: (opcode - 0xb8) | (rex_b << 3), width })),
                imm.map(Operand::Imm),
            ),
            0xb0..=0xb7 => {
                let n = (opcode - 0xb0) | (rex_b << 3);
                if high_byte(n) {
                    other(Some(Operand::Reg(Reg::q(n - 4))))
                } else {
                    mk(Mnem::Mov, Some(Operand::Reg(Reg { num: n, width: 1 })), imm.map(Operand::Imm))
                }
            }
            0xe8 => {
                let t = next.wrapping_add(imm.unwrap() as u64);
                call_target = Some(Va(t));
                mk(Mnem::Call, None, Some(Operand::Imm(t as i64)))
            }
            0xe9 | 0xeb => mk(
                Mnem::Jmp,
                None,
                Some(Operand::Imm(next.wrapping_add(imm.unwrap() as u64) as i64)),
            ),
            0x70..=0x7f => mk(
                Mnem::Jcc,
                None,
                Some(Operand::Imm(next.wrapping_add(imm.unwrap() as u64) as i64)),
            ),
            0xff if modrm_reg == 2 || modrm_reg == 4 => {
                let mnem = if modrm_reg == 2 { Mnem::Call } else { Mnem::Jmp };
                match mem_of(rm.unwrap(), 8) {
                    Some(t) => mk(mnem, None, Some(t)),
                    None => mk(Mnem::Other, None, None),
                }
            }
            0xc3 => mk(Mnem::Ret, None, None),
            0xc9 => mk(Mnem::Leave, None, None),
            0x50..=0x57 if !opsize16 => mk(
                Mnem::Push,
                None,
                Some(Operand::Reg(Reg::q((opcode - 0x50) | (rex_b << 3)))),
            ),
            0x58..=0x5f if !opsize16 => mk(
                Mnem::Pop,
                Some(Operand::Reg(Reg::q((opcode - 0x58) | (rex_b << 3)))),
                None,
            ),
            // ALU ops with a register destination in the reg field
            0x02 | 0x0a | 0x12 | 0x1a | 0x22 | 0x2a | 0x32 | 0x0b | 0x13 | 0x1b | 0x23
            | 0x33 | 0x63 | 0x69 | 0x6b => other(Some(Operand::Reg(Reg::q(reg_field)))),
            // ALU ops with r/m destination (cmp 38/39 and test 84/85 write nothing)
            0x00 | 0x08 | 0x09 | 0x10 | 0x11 | 0x18 | 0x19 | 0x20 | 0x21 | 0x28 | 0x30
            | 0x31 | 0x86 | 0x87 | 0xd0..=0xd3 | 0xc0 | 0xc1 | 0xfe => other(clobber_rm(rm).map(|o| match o {
                Operand::Reg(r) if rex == 0 && matches!(opcode, 0x00 | 0x08 | 0x10 | 0x18 | 0x20 | 0x28 | 0x30 | 0x86 | 0xd0 | 0xd2 | 0xc0 | 0xfe) && (4..8).contains(&r.num) => Operand::Reg(Reg::q(r.num - 4)),
                o => o,
            })),
            0x80..=0x83 if modrm_reg != 7 => other(clobber_rm(rm)),
            0xf6 | 0xf7 if (2..=3).contains(&modrm_reg) => other(clobber_rm(rm)),
            0xf7 if modrm_reg >= 4 => other(Some(Operand::Reg(Reg::q(0)))),
            0xff if modrm_reg <= 1 => other(clobber_rm(rm)),
            0x8f => other(clobber_rm(rm)),
            0x0d | 0x15 | 0x1d | 0x25 | 0x35 | 0x0c | 0x14 | 0x1c | 0x24 | 0x34 | 0x04
            | 0x2c | 0x98 | 0x99 | 0xa0..=0xa1 => other(Some(Operand::Reg(Reg::q(0)))),
            0x90..=0x97 if opcode != 0x90 || rex_b != 0 => {
                other(Some(Operand::Reg(Reg::q((opcode - 0x90) | (rex_b << 3)))))
            }
            _ => other(None),
        }
    };
    Ok(Decoded { instr, len, call_target })
}

/// Linear sweep from `start` until a return, an unconditional jump that
/// leaves the function, the next known function start, or a decode stall.
pub fn decode_function(img: &BinaryImage, start: Va) -> FunctionBody {
    let next_fn = img
        .entry_functions()
        .range(Va(start.0 + 1)..)
        .next()
        .copied();
    let mut instrs = Vec::new();
    let mut partial = false;
    let mut pc = start;
    let mut furthest_forward = start;
    while instrs.len() < MAX_INSTRS {
        if next_fn.is_some_and(|n| pc >= n) {
            break;
        }
        let Ok(bytes) = img.tail_at(pc) else {
            break;
        };
        if bytes.is_empty() || !img.is_text(pc) {
            break;
        }
        let d = match decode_one(bytes, pc) {
            Ok(d) => d,
            Err(e) => {
                log::debug!("{e} in function {start}");
                partial = true;
                break;
            }
        };
        let i = d.instr;
        instrs.push(i);
        pc = i.next_addr();
        match i.mnem {
            Mnem::Jcc => {
                if let Some(t) = i.branch_target() {
                    furthest_forward = furthest_forward.max(t);
                }
            }
            Mnem::Ret if pc > furthest_forward => break,
            Mnem::Jmp => {
                let leaves = match i.branch_target() {
                    None => true,
                    Some(t) => t < start || img.is_function_start(t) && t != start || t <= i.addr,
                };
                if let Some(t) = i.branch_target() {
                    if !leaves {
                        furthest_forward = furthest_forward.max(t);
                    }
                }
                if leaves && pc > furthest_forward {
                    break;
                }
            }
            _ => {}
        }
    }
    FunctionBody { start, instrs, partial }
}

/// Sweep every known function start.
pub fn decode_all(img: &BinaryImage) -> Listing {
    img.entry_functions()
        .iter()
        .filter(|f| img.is_text(**f))
        .map(|&f| (f, decode_function(img, f)))
        .collect()
}
