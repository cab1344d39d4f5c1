//! Encoder for the modelled subset, the inverse of the decoder on its
//! normal forms. Used to assemble crafted test images.

use super::{Mem, Mnem, NormInstr, Operand, Reg};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot encode `{0}`")]
pub struct EncodeError(pub String);

fn err<T>(i: &NormInstr) -> Result<T, EncodeError> {
    Err(EncodeError(i.to_string()))
}

struct Enc {
    out: Vec<u8>,
}

/// ModRM r/m part, before the displacement of RIP-relative operands is
/// known.
enum RmBytes {
    Direct(Vec<u8>),
    RipRel(i64),
}

fn rex_byte(w: bool, r: u8, b: u8) -> u8 {
    0x40 | (u8::from(w) << 3) | ((r >> 3) << 2) | (b >> 3)
}

fn needs_rex_for_byte(r: Reg) -> bool {
    r.width == 1 && (4..8).contains(&r.num)
}

fn mem_modrm(reg_field: u8, m: &Mem) -> Result<(u8, RmBytes), ()> {
    let Some(base) = m.base else {
        return Ok((0, RmBytes::RipRel(m.disp)));
    };
    if base.width != 8 {
        return Err(());
    }
    let b = base.num & 7;
    let disp = m.disp;
    let (md, disp_bytes): (u8, Vec<u8>) = if disp == 0 && b != 5 {
        (0, vec![])
    } else if let Ok(d) = i8::try_from(disp) {
        (1, vec![d as u8])
    } else if let Ok(d) = i32::try_from(disp) {
        (2, d.to_le_bytes().to_vec())
    } else {
        return Err(());
    };
    let mut v = vec![(md << 6) | ((reg_field & 7) << 3) | b];
    if b == 4 {
        v.push(0x24);
    }
    v.extend(disp_bytes);
    Ok((base.num >> 3, RmBytes::Direct(v)))
}

impl Enc {
    /// Emit `[prefixes] [rex] opcode modrm... imm`, fixing up RIP-relative
    /// displacements once the total length is known.
    #[allow(clippy::too_many_arguments)]
    fn modrm_form(
        &mut self,
        addr: u64,
        width: u8,
        opcode: &[u8],
        reg_field: u8,
        rm: &Operand,
        imm: &[u8],
        force_rex: bool,
    ) -> Result<(), ()> {
        let (rex_b, body) = match rm {
            Operand::Reg(r) => (r.num >> 3, RmBytes::Direct(vec![0xc0 | ((reg_field & 7) << 3) | (r.num & 7)])),
            Operand::Mem(m) => mem_modrm(reg_field, m)?,
            Operand::Imm(_) => return Err(()),
        };
        if width == 2 {
            self.out.push(0x66);
        }
        let w = width == 8;
        if w || force_rex || reg_field >= 8 || rex_b != 0 {
            self.out.push(rex_byte(w, reg_field, rex_b << 3));
        }
        self.out.extend_from_slice(opcode);
        match body {
            RmBytes::Direct(b) => self.out.extend(b),
            RmBytes::RipRel(target) => {
                self.out.push(((reg_field & 7) << 3) | 5);
                let end = addr + self.out.len() as u64 + 4 + imm.len() as u64;
                let rel = i32::try_from(target.wrapping_sub(end as i64)).map_err(|_| ())?;
                self.out.extend(rel.to_le_bytes());
            }
        }
        self.out.extend_from_slice(imm);
        Ok(())
    }
}

fn imm_bytes(v: i64, size: usize) -> Result<Vec<u8>, ()> {
    match size {
        1 => i8::try_from(v).map(|x| vec![x as u8]).map_err(|_| ()),
        2 => i16::try_from(v).map(|x| x.to_le_bytes().to_vec()).map_err(|_| ()),
        4 => i32::try_from(v).map(|x| x.to_le_bytes().to_vec()).map_err(|_| ()),
        _ => Ok(v.to_le_bytes().to_vec()),
    }
}

fn width_of(o: &Operand) -> u8 {
    match o {
        Operand::Reg(r) => r.width,
        Operand::Mem(m) => m.width,
        Operand::Imm(_) => 8,
    }
}

fn rel32(addr: u64, len: u64, target: i64) -> Result<[u8; 4], ()> {
    let rel = target.wrapping_sub(addr.wrapping_add(len) as i64);
    i32::try_from(rel).map(i32::to_le_bytes).map_err(|_| ())
}

/// Encode `i` at `i.addr`. `raw_len` is ignored; the encoded length is the
/// returned vector's length.
pub fn encode(i: &NormInstr) -> Result<Vec<u8>, EncodeError> {
    let mut e = Enc { out: Vec::new() };
    let addr = i.addr.0;
    let r: Result<(), ()> = (|| {
        match (i.mnem, i.dst, i.src) {
            (Mnem::Ret, None, None) => e.out.push(0xc3),
            (Mnem::Leave, None, None) => e.out.push(0xc9),
            (Mnem::Push, None, Some(Operand::Reg(r))) if r.width == 8 => {
                if r.num >= 8 {
                    e.out.push(0x41);
                }
                e.out.push(0x50 + (r.num & 7));
            }
            (Mnem::Pop, Some(Operand::Reg(r)), None) if r.width == 8 => {
                if r.num >= 8 {
                    e.out.push(0x41);
                }
                e.out.push(0x58 + (r.num & 7));
            }
            (Mnem::Call, None, Some(Operand::Imm(t))) => {
                e.out.push(0xe8);
                e.out.extend(rel32(addr, 5, t)?);
            }
            (Mnem::Jmp, None, Some(Operand::Imm(t))) => {
                e.out.push(0xe9);
                e.out.extend(rel32(addr, 5, t)?);
            }
            (Mnem::Jcc, None, Some(Operand::Imm(t))) => {
                e.out.extend([0x0f, 0x84]);
                e.out.extend(rel32(addr, 6, t)?);
            }
            (Mnem::Call | Mnem::Jmp, None, Some(t)) if width_of(&t) == 8 => {
                let field = if i.mnem == Mnem::Call { 2 } else { 4 };
                // no REX.W: call/jmp default to 64-bit operands
                e.modrm_form(addr, 4, &[0xff], field, &t, &[], false)?;
            }
            (Mnem::Mov, Some(Operand::Reg(d)), Some(Operand::Imm(v))) => {
                match d.width {
                    8 => {
                        e.out.push(rex_byte(true, 0, d.num));
                        e.out.push(0xb8 + (d.num & 7));
                        e.out.extend(v.to_le_bytes());
                    }
                    1 => {
                        if d.num >= 8 || needs_rex_for_byte(d) {
                            e.out.push(rex_byte(false, 0, d.num));
                        }
                        e.out.push(0xb0 + (d.num & 7));
                        e.out.extend(imm_bytes(v, 1)?);
                    }
                    w => {
                        if w == 2 {
                            e.out.push(0x66);
                        }
                        if d.num >= 8 {
                            e.out.push(rex_byte(false, 0, d.num));
                        }
                        e.out.push(0xb8 + (d.num & 7));
                        e.out.extend(imm_bytes(v, w as usize)?);
                    }
                }
            }
            (Mnem::Mov, Some(dm @ Operand::Mem(m)), Some(Operand::Imm(v))) => {
                if m.width == 1 {
                    e.modrm_form(addr, 1, &[0xc6], 0, &dm, &imm_bytes(v, 1)?, false)?;
                } else {
                    let sz = if m.width == 2 { 2 } else { 4 };
                    e.modrm_form(addr, m.width, &[0xc7], 0, &dm, &imm_bytes(v, sz)?, false)?;
                }
            }
            (Mnem::Mov | Mnem::Add | Mnem::Sub, Some(d), Some(Operand::Reg(s)))
                if !matches!(d, Operand::Imm(_)) && width_of(&d) == s.width =>
            {
                let force = needs_rex_for_byte(s) || matches!(d, Operand::Reg(r) if needs_rex_for_byte(r));
                let op = match (i.mnem, s.width) {
                    (Mnem::Mov, 1) => 0x88,
                    (Mnem::Mov, _) => 0x89,
                    (Mnem::Add, 1) | (Mnem::Sub, 1) => return Err(()),
                    (Mnem::Add, _) => 0x01,
                    _ => 0x29,
                };
                e.modrm_form(addr, s.width, &[op], s.num, &d, &[], force)?;
            }
            (Mnem::Mov | Mnem::Add | Mnem::Sub, Some(Operand::Reg(d)), Some(sm @ Operand::Mem(m)))
                if m.width == d.width =>
            {
                let op = match (i.mnem, d.width) {
                    (Mnem::Mov, 1) => 0x8a,
                    (Mnem::Mov, _) => 0x8b,
                    (_, 1) => return Err(()),
                    (Mnem::Add, _) => 0x03,
                    _ => 0x2b,
                };
                e.modrm_form(addr, d.width, &[op], d.num, &sm, &[], needs_rex_for_byte(d))?;
            }
            (Mnem::Lea, Some(Operand::Reg(d)), Some(sm @ Operand::Mem(m)))
                if m.width == 8 && d.width >= 4 =>
            {
                e.modrm_form(addr, d.width, &[0x8d], d.num, &sm, &[], false)?;
            }
            (Mnem::Add | Mnem::Sub, Some(d), Some(Operand::Imm(v))) if width_of(&d) >= 2 => {
                let field = if i.mnem == Mnem::Add { 0 } else { 5 };
                if let Ok(b) = imm_bytes(v, 1) {
                    e.modrm_form(addr, width_of(&d), &[0x83], field, &d, &b, false)?;
                } else {
                    let sz = if width_of(&d) == 2 { 2 } else { 4 };
                    e.modrm_form(addr, width_of(&d), &[0x81], field, &d, &imm_bytes(v, sz)?, false)?;
                }
            }
            _ => return Err(()),
        }
        Ok(())
    })();
    match r {
        Ok(()) => Ok(e.out),
        Err(()) => err(i),
    }
}

/// Encode a sequence laid out back to back from `base`, fixing each
/// instruction's address and length. Instructions are given with
/// placeholder addresses; branch targets are absolute.
pub fn assemble(base: u64, instrs: &[(Mnem, Option<Operand>, Option<Operand>)]) -> Result<(Vec<u8>, Vec<NormInstr>), EncodeError> {
    let mut out = Vec::new();
    let mut norm = Vec::new();
    for &(mnem, dst, src) in instrs {
        let addr = crate::Va(base + out.len() as u64);
        let mut i = NormInstr::new(addr, mnem, dst, src, 0);
        let bytes = encode(&i)?;
        i.raw_len = bytes.len() as u8;
        out.extend(bytes);
        norm.push(i);
    }
    Ok((out, norm))
}
