use std::collections::{BTreeMap, BTreeSet};

use object::elf;
use object::pe::{self, ImageNtHeaders32, ImageNtHeaders64};
use object::read::pe::{ImageNtHeaders, ImageOptionalHeader, PeFile};
use object::{
    BinaryFormat, LittleEndian as LE, Object, ObjectSection, ObjectSymbol, ObjectSymbolTable,
    RelocationFlags, RelocationTarget, SectionFlags, SymbolKind,
};

use super::{derive_function_starts, Abi, BinaryImage, FunctionSource, ImageError, Result};
use super::{Section, SectionKind};
use crate::addr::Va;

const ELF_PURE_VIRTUAL: &str = "__cxa_pure_virtual";
const PE_PURE_VIRTUAL: &str = "_purecall";

pub(super) fn parse_container(data: &[u8], abi: Abi, word_size: u8) -> Result<BinaryImage> {
    if word_size != 4 && word_size != 8 {
        return Err(ImageError::Invalid(format!("word size {word_size}")));
    }
    if data.len() < 4 {
        return Err(ImageError::MalformedContainer(format!(
            "{} bytes is too short for any header",
            data.len()
        )));
    }
    let is_elf = data.starts_with(b"\x7fELF");
    let is_mz = data.starts_with(b"MZ");
    if !is_elf && !is_mz {
        return Err(ImageError::UnsupportedFormat);
    }
    let file = object::File::parse(data)
        .map_err(|e| ImageError::MalformedContainer(e.to_string()))?;
    let file_word = if file.is_64() { 8 } else { 4 };
    if file_word != word_size {
        return Err(ImageError::WordSizeMismatch {
            file: file_word,
            requested: word_size,
        });
    }
    if !file.is_little_endian() {
        return Err(ImageError::UnsupportedFormat);
    }
    if matches!((abi, file.format()), (Abi::Itanium, BinaryFormat::Pe) | (Abi::Msvc, BinaryFormat::Elf)) {
        log::warn!("{} container analysed under the {abi} ABI", format_name(file.format()));
    }
    match file.format() {
        BinaryFormat::Elf => load_elf(&file, abi, word_size),
        BinaryFormat::Pe if file_word == 8 => load_pe::<ImageNtHeaders64>(data, abi),
        BinaryFormat::Pe => load_pe::<ImageNtHeaders32>(data, abi),
        _ => Err(ImageError::UnsupportedFormat),
    }
}

fn format_name(f: BinaryFormat) -> &'static str {
    match f {
        BinaryFormat::Elf => "ELF",
        BinaryFormat::Pe => "PE",
        _ => "unknown",
    }
}

fn elf_kind(name: &str, flags: u64) -> SectionKind {
    let flags = flags as u32;
    if flags & elf::SHF_EXECINSTR != 0 {
        SectionKind::Text
    } else if name == ".got" || name == ".got.plt" {
        SectionKind::GotLike
    } else if flags & elf::SHF_WRITE != 0 {
        SectionKind::Data
    } else {
        SectionKind::ReadOnlyData
    }
}

fn load_elf(file: &object::File<'_>, abi: Abi, word_size: u8) -> Result<BinaryImage> {
    let mut sections = Vec::new();
    for s in file.sections() {
        let SectionFlags::Elf { sh_flags } = s.flags() else {
            continue;
        };
        let flags = sh_flags as u32;
        if flags & elf::SHF_ALLOC == 0 || s.size() == 0 {
            continue;
        }
        // .tbss occupies no address space of its own.
        let is_nobits = s.kind() == object::SectionKind::UninitializedData
            || s.kind() == object::SectionKind::UninitializedTls;
        if flags & elf::SHF_TLS != 0 && is_nobits {
            continue;
        }
        let name = s.name().unwrap_or("").to_string();
        let bytes = if is_nobits {
            vec![0; s.size() as usize]
        } else {
            let mut b = s
                .data()
                .map_err(|e| ImageError::MalformedContainer(format!("section {name}: {e}")))?
                .to_vec();
            b.resize(s.size() as usize, 0);
            b
        };
        let kind = elf_kind(&name, sh_flags);
        sections.push(Section::new(name, Va(s.address()), kind, bytes));
    }
    sections.sort_by_key(|s| s.base);
    drop_overlaps(&mut sections);

    let mut img = BinaryImage {
        sections,
        word_size,
        abi,
        entry_functions: BTreeSet::new(),
        function_source: FunctionSource::SymbolTable,
        pure_virtual_addr: None,
        pure_virtual_slots: BTreeSet::new(),
        got_map: BTreeMap::new(),
    };

    let mut funcs: BTreeSet<Va> = file
        .symbols()
        .filter(|s| s.kind() == SymbolKind::Text && s.is_definition() && s.address() != 0)
        .map(|s| Va(s.address()))
        .collect();
    let have_symtab = !funcs.is_empty();
    for s in file.dynamic_symbols() {
        if s.name() == Ok(ELF_PURE_VIRTUAL) && s.is_definition() && s.address() != 0 {
            img.pure_virtual_addr = Some(Va(s.address()));
        }
    }
    if img.pure_virtual_addr.is_none() {
        img.pure_virtual_addr = file
            .symbols()
            .find(|s| s.name() == Ok(ELF_PURE_VIRTUAL) && s.is_definition() && s.address() != 0)
            .map(|s| Va(s.address()));
    }

    let mut got = BTreeMap::new();
    if let Some(relocs) = file.dynamic_relocations() {
        let dynsyms = file.dynamic_symbol_table();
        for (offset, r) in relocs {
            let slot = Va(offset);
            let r_type = match r.flags() {
                RelocationFlags::Elf { r_type } => r_type,
                _ => continue,
            };
            let in_got = img.classify(slot) == Some(SectionKind::GotLike);
            match r.target() {
                RelocationTarget::Symbol(idx) => {
                    let Some(sym) = dynsyms.as_ref().and_then(|t| t.symbol_by_index(idx).ok())
                    else {
                        continue;
                    };
                    if sym.name() == Ok(ELF_PURE_VIRTUAL) {
                        img.pure_virtual_slots.insert(slot);
                    }
                    if in_got && sym.is_definition() && sym.address() != 0 {
                        got.insert(slot, Va(sym.address().wrapping_add(r.addend() as u64)));
                    }
                }
                RelocationTarget::Absolute if in_got && r_type == elf::R_X86_64_RELATIVE => {
                    got.insert(slot, Va(r.addend() as u64));
                }
                _ => {}
            }
        }
    }
    // Entries the static linker already resolved carry their target in the
    // file bytes.
    let got_slots: Vec<Va> = img
        .sections
        .iter()
        .filter(|s| s.kind == SectionKind::GotLike)
        .flat_map(|s| {
            let w = u64::from(word_size);
            (0..s.size / w).map(move |i| Va(s.base.0 + i * w))
        })
        .collect();
    for slot in got_slots {
        if got.contains_key(&slot) {
            continue;
        }
        if let Ok(t) = img.read_ptr(slot) {
            if t != Va::ZERO && img.classify(t).is_some() {
                got.insert(slot, t);
            }
        }
    }
    got.retain(|_, t| img.classify(*t) != Some(SectionKind::GotLike));
    img.got_map = got;

    if have_symtab {
        img.entry_functions = funcs;
    } else {
        funcs.extend(
            file.dynamic_symbols()
                .filter(|s| s.kind() == SymbolKind::Text && s.is_definition() && s.address() != 0)
                .map(|s| Va(s.address())),
        );
        funcs.extend(derive_function_starts(&img));
        funcs.retain(|f| img.is_text(*f));
        img.entry_functions = funcs;
        img.function_source = FunctionSource::Derived;
    }
    Ok(img)
}

fn drop_overlaps(sections: &mut Vec<Section>) {
    let mut out: Vec<Section> = Vec::with_capacity(sections.len());
    for s in sections.drain(..) {
        if let Some(prev) = out.last() {
            if prev.base.0 + prev.size > s.base.0 {
                log::debug!("dropping overlapping section {}", s.name);
                continue;
            }
        }
        out.push(s);
    }
    *sections = out;
}

fn load_pe<Pe: ImageNtHeaders>(data: &[u8], abi: Abi) -> Result<BinaryImage> {
    let pe_file = PeFile::<Pe>::parse(data)
        .map_err(|e| ImageError::MalformedContainer(e.to_string()))?;
    let image_base = pe_file.nt_headers().optional_header().image_base();
    let word_size = if pe_file.is_64() { 8 } else { 4 };
    let mut sections = Vec::new();
    for h in pe_file.section_table().iter() {
        let name = String::from_utf8_lossy(h.raw_name()).to_string();
        let (rva, vsize) = h.pe_address_range();
        let raw = h
            .pe_data(data)
            .map_err(|e| ImageError::MalformedContainer(format!("section {name}: {e}")))?;
        let size = if vsize == 0 { raw.len() } else { vsize as usize };
        if size == 0 {
            continue;
        }
        let mut bytes = raw.to_vec();
        bytes.resize(size, 0);
        let ch = h.characteristics.get(LE);
        let kind = if ch & pe::IMAGE_SCN_MEM_EXECUTE != 0 || ch & pe::IMAGE_SCN_CNT_CODE != 0 {
            SectionKind::Text
        } else if name == ".idata" {
            SectionKind::GotLike
        } else if ch & pe::IMAGE_SCN_MEM_WRITE != 0 {
            SectionKind::Data
        } else if ch & (pe::IMAGE_SCN_CNT_INITIALIZED_DATA | pe::IMAGE_SCN_CNT_UNINITIALIZED_DATA)
            != 0
        {
            SectionKind::ReadOnlyData
        } else {
            SectionKind::Other
        };
        sections.push(Section::new(name, Va(image_base + u64::from(rva)), kind, bytes));
    }
    sections.sort_by_key(|s| s.base);
    drop_overlaps(&mut sections);

    let mut img = BinaryImage {
        sections,
        word_size,
        abi,
        entry_functions: BTreeSet::new(),
        function_source: FunctionSource::Derived,
        pure_virtual_addr: None,
        pure_virtual_slots: BTreeSet::new(),
        got_map: BTreeMap::new(),
    };

    let mut funcs = BTreeSet::new();
    if let Ok(exports) = pe_file.exports() {
        for e in exports {
            let a = Va(e.address());
            if e.name() == PE_PURE_VIRTUAL.as_bytes() {
                img.pure_virtual_addr = Some(a);
            }
            if img.is_text(a) {
                funcs.insert(a);
            }
        }
    }
    // Exception directory: RUNTIME_FUNCTION records of (begin, end, unwind).
    if let Some(dir) = pe_file.data_directory(pe::IMAGE_DIRECTORY_ENTRY_EXCEPTION) {
        let (rva, size) = (dir.virtual_address.get(LE), dir.size.get(LE));
        let start = Va(image_base + u64::from(rva));
        if let Ok(bytes) = img.bytes_at(start, size as usize) {
            for rec in bytes.chunks_exact(12) {
                let begin = u32::from_le_bytes(rec[0..4].try_into().unwrap());
                let a = Va(image_base + u64::from(begin));
                if img.is_text(a) {
                    funcs.insert(a);
                }
            }
        }
    }
    let entry = Va(image_base + u64::from(pe_file.nt_headers().optional_header().address_of_entry_point()));
    if img.is_text(entry) {
        funcs.insert(entry);
    }
    funcs.extend(derive_function_starts(&img));
    img.entry_functions = funcs;
    Ok(img)
}
