//! Line-oriented textual disassembly, so the analysis can run on top of
//! any external disassembler.
//!
//! ```text
//! fn 1278
//! 1278: mov [rbp-0x8], rdi ; len=4
//! 127c: mov rax, [rbp-0x8] ; len=4
//! 1280: add rax, 0x20 ; len=4
//! 1284: call 0x1234 ; len=5
//! ```
//!
//! Operands are register names, `0xIMM` / `-0xIMM`, `[reg+0xDISP]`,
//! `[reg-0xDISP]`, `[reg]`, `[rip+0xDISP]` or an absolute `[0xADDR]`, with an
//! optional `byte|word|dword|qword [ptr]` size prefix. The `; len=N` suffix
//! is optional; without it the length is taken from the next address or
//! from the image bytes. `#` starts a comment line.

use std::fmt::Write as _;

use super::decode::decode_one;
use super::{FunctionBody, Listing, Mem, Mnem, NormInstr, Operand, Reg};
use crate::addr::Va;
use crate::image::BinaryImage;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct GrammarError {
    pub line: usize,
    pub message: String,
}

/// Operand before RIP-relative displacements are resolved.
#[derive(Debug, Clone, Copy)]
enum RawOperand {
    Op(Operand),
    RipRel { disp: i64, width: u8 },
}

fn parse_hex(s: &str) -> Option<u64> {
    let t = s.trim();
    let t = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")).unwrap_or(t);
    let t = t.strip_suffix('h').unwrap_or(t);
    if t.is_empty() {
        return None;
    }
    u64::from_str_radix(t, 16).ok()
}

fn parse_signed(s: &str) -> Option<i64> {
    let t = s.trim();
    match t.strip_prefix('-') {
        Some(rest) => parse_hex(rest).map(|v| (v as i64).wrapping_neg()),
        None => parse_hex(t.strip_prefix('+').unwrap_or(t)).map(|v| v as i64),
    }
}

fn parse_operand(s: &str) -> Option<RawOperand> {
    let mut t = s.trim().to_ascii_lowercase();
    let mut width = 8u8;
    for (kw, w) in [("qword", 8u8), ("dword", 4), ("word", 2), ("byte", 1)] {
        if let Some(rest) = t.strip_prefix(kw) {
            if rest.starts_with([' ', '[']) {
                width = w;
                t = rest.trim_start().strip_prefix("ptr").unwrap_or(rest).trim().to_string();
                break;
            }
        }
    }
    if let Some(inner) = t.strip_prefix('[').and_then(|x| x.strip_suffix(']')) {
        let inner = inner.replace(' ', "");
        let (base, disp) = match inner.find(['+', '-']) {
            Some(0) | None => (inner.as_str(), None),
            Some(p) => (&inner[..p], Some(&inner[p..])),
        };
        let disp = match disp {
            Some(d) => parse_signed(d)?,
            None => 0,
        };
        if base == "rip" {
            return Some(RawOperand::RipRel { disp, width });
        }
        if let Some(r) = Reg::parse(base) {
            if r.width != 8 {
                return None;
            }
            return Some(RawOperand::Op(Operand::Mem(Mem { base: Some(r), disp, width })));
        }
        let abs = parse_signed(base)?;
        return Some(RawOperand::Op(Operand::Mem(Mem { base: None, disp: abs.wrapping_add(disp), width })));
    }
    if width != 8 {
        return None; // size prefix without memory
    }
    if let Some(r) = Reg::parse(&t) {
        return Some(RawOperand::Op(Operand::Reg(r)));
    }
    parse_signed(&t).map(|v| RawOperand::Op(Operand::Imm(v)))
}

fn mnemonic(m: &str) -> Option<Mnem> {
    Some(match m {
        "mov" => Mnem::Mov,
        "lea" => Mnem::Lea,
        "add" => Mnem::Add,
        "sub" => Mnem::Sub,
        "call" => Mnem::Call,
        "ret" => Mnem::Ret,
        "push" => Mnem::Push,
        "pop" => Mnem::Pop,
        "jmp" => Mnem::Jmp,
        "leave" => Mnem::Leave,
        "other" => Mnem::Other,
        "jcc" | "je" | "jne" | "jz" | "jnz" | "ja" | "jae" | "jb" | "jbe" | "jg" | "jge"
        | "jl" | "jle" | "js" | "jns" | "jo" | "jno" | "jp" | "jnp" => Mnem::Jcc,
        _ => return None,
    })
}

/// Whether operands fit the mnemonic's modelled forms.
fn shape_ok(m: Mnem, dst: Option<Operand>, src: Option<Operand>) -> bool {
    use Operand as O;
    match m {
        Mnem::Ret | Mnem::Leave => dst.is_none() && src.is_none(),
        Mnem::Push => dst.is_none() && matches!(src, Some(O::Reg(_))),
        Mnem::Pop => matches!(dst, Some(O::Reg(_))) && src.is_none(),
        Mnem::Call | Mnem::Jmp => dst.is_none() && src.is_some(),
        Mnem::Jcc => dst.is_none() && matches!(src, Some(O::Imm(_))),
        Mnem::Lea => matches!((dst, src), (Some(O::Reg(_)), Some(O::Mem(_)))),
        Mnem::Mov | Mnem::Add | Mnem::Sub => matches!(
            (dst, src),
            (Some(O::Reg(_)), Some(_)) | (Some(O::Mem(_)), Some(O::Reg(_) | O::Imm(_)))
        ),
        Mnem::Other => src.is_none() && !matches!(dst, Some(O::Imm(_))),
    }
}

struct Line<'a> {
    no: usize,
    addr: Va,
    mnem: &'a str,
    operands: Vec<&'a str>,
    len: Option<u8>,
}

fn split_line(no: usize, line: &str) -> Result<Line<'_>, String> {
    let (body, comment) = match line.find(';') {
        Some(p) => (&line[..p], Some(&line[p + 1..])),
        None => (line, None),
    };
    let (addr_s, rest) = body.split_once(':').ok_or("missing `ADDR:`")?;
    let addr = parse_hex(addr_s).ok_or_else(|| format!("bad address `{}`", addr_s.trim()))?;
    let rest = rest.trim();
    let (mnem, ops) = match rest.find(char::is_whitespace) {
        Some(p) => (&rest[..p], rest[p..].trim()),
        None => (rest, ""),
    };
    if mnem.is_empty() {
        return Err("missing mnemonic".into());
    }
    let operands = if ops.is_empty() {
        vec![]
    } else {
        ops.split(',').map(str::trim).collect()
    };
    let len = comment.and_then(|c| {
        c.split_whitespace()
            .find_map(|tok| tok.strip_prefix("len="))
            .and_then(|v| v.parse().ok())
    });
    Ok(Line { no, addr: Va(addr), mnem, operands, len })
}

/// Parse a listing. In strict mode structurally invalid lines are errors;
/// otherwise they degrade to [`Mnem::Other`] or are skipped.
pub fn ingest_text_disasm(src: &str, img: &BinaryImage, strict: bool) -> Result<Listing, GrammarError> {
    let mut funcs: Vec<(Va, Vec<Line<'_>>)> = Vec::new();
    for (idx, raw) in src.lines().enumerate() {
        let no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("fn ") {
            match parse_hex(rest) {
                Some(a) => funcs.push((Va(a), Vec::new())),
                None if strict => {
                    return Err(GrammarError { line: no, message: format!("bad function header `{line}`") })
                }
                None => {}
            }
            continue;
        }
        match split_line(no, line) {
            Ok(l) => {
                if funcs.is_empty() {
                    if strict {
                        return Err(GrammarError { line: no, message: "instruction before any `fn` header".into() });
                    }
                    funcs.push((l.addr, Vec::new()));
                }
                funcs.last_mut().unwrap().1.push(l);
            }
            Err(message) if strict => return Err(GrammarError { line: no, message }),
            Err(_) => log::debug!("skipping unparseable line {no}"),
        }
    }

    let mut listing = Listing::new();
    for (start, lines) in funcs {
        let mut instrs = Vec::with_capacity(lines.len());
        for (k, l) in lines.iter().enumerate() {
            let len = l
                .len
                .or_else(|| lines.get(k + 1).map(|n| n.addr.0.wrapping_sub(l.addr.0) as u8))
                .or_else(|| img.tail_at(l.addr).ok().and_then(|b| decode_one(b, l.addr).ok()).map(|d| d.len as u8))
                .unwrap_or(0);
            let next = l.addr.0.wrapping_add(u64::from(len)) as i64;
            let resolve = |r: RawOperand| match r {
                RawOperand::Op(o) => o,
                RawOperand::RipRel { disp, width } => {
                    Operand::Mem(Mem { base: None, disp: next.wrapping_add(disp), width })
                }
            };
            let parsed: Option<Vec<Operand>> = l
                .operands
                .iter()
                .map(|o| parse_operand(o).map(resolve))
                .collect();
            let lower = l.mnem.to_ascii_lowercase();
            let instr = match (mnemonic(&lower), parsed) {
                (Some(m), Some(ops)) if ops.len() <= 2 => {
                    let (dst, src) = match (m, ops.as_slice()) {
                        (Mnem::Call | Mnem::Jmp | Mnem::Jcc | Mnem::Push, [s]) => (None, Some(*s)),
                        (_, []) => (None, None),
                        (_, [d]) => (Some(*d), None),
                        (_, [d, s]) => (Some(*d), Some(*s)),
                        _ => unreachable!(),
                    };
                    if shape_ok(m, dst, src) {
                        Some(NormInstr::new(l.addr, m, dst, src, len))
                    } else {
                        None
                    }
                }
                _ => None,
            };
            let instr = match instr {
                Some(i) => i,
                None if strict && mnemonic(&lower).is_some_and(|m| m != Mnem::Other) => {
                    return Err(GrammarError {
                        line: l.no,
                        message: format!("operands do not fit `{}`", l.mnem),
                    })
                }
                None => {
                    // Unknown instruction: clobber its first operand if it names
                    // a register.
                    let dst = l
                        .operands
                        .first()
                        .and_then(|o| parse_operand(o))
                        .and_then(|o| match o {
                            RawOperand::Op(Operand::Reg(r)) => Some(Operand::Reg(Reg::q(r.num))),
                            _ => None,
                        });
                    NormInstr::new(l.addr, Mnem::Other, dst, None, len)
                }
            };
            instrs.push(instr);
        }
        listing.insert(start, FunctionBody { start, instrs, partial: false });
    }
    Ok(listing)
}

/// Render a listing in the grammar accepted by [`ingest_text_disasm`].
pub fn render_listing(listing: &Listing) -> String {
    let mut out = String::new();
    for (start, body) in listing {
        let _ = writeln!(out, "fn {:x}", start.0);
        for i in &body.instrs {
            let _ = writeln!(out, "{i}");
        }
    }
    out
}
