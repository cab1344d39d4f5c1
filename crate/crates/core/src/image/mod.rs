//! Immutable, addressed view of a loaded binary.
//!
//! Sections are classified once at load time; every later pass reads
//! machine words through [`BinaryImage::read_word`], which rejects unmapped
//! and misaligned addresses instead of guessing.

mod functions;
mod load;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::addr::Va;

pub use functions::derive_function_starts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Abi {
    #[default]
    Itanium,
    Msvc,
}

impl std::str::FromStr for Abi {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "itanium" => Ok(Abi::Itanium),
            "msvc" => Ok(Abi::Msvc),
            other => Err(format!("unknown abi `{other}` (expected itanium or msvc)")),
        }
    }
}

impl std::fmt::Display for Abi {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Abi::Itanium => "itanium",
            Abi::Msvc => "msvc",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    Text,
    ReadOnlyData,
    Data,
    GotLike,
    Extern,
    Other,
}

impl SectionKind {
    /// Sections that may hold VTables, VTTs, typeinfo and VB-Tables.
    pub fn is_data(self) -> bool {
        matches!(
            self,
            SectionKind::ReadOnlyData | SectionKind::Data | SectionKind::GotLike
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub name: String,
    pub base: Va,
    pub size: u64,
    pub kind: SectionKind,
    pub bytes: Vec<u8>,
}

impl Section {
    pub fn new(name: impl Into<String>, base: Va, kind: SectionKind, bytes: Vec<u8>) -> Self {
        Section {
            name: name.into(),
            base,
            size: bytes.len() as u64,
            kind,
            bytes,
        }
    }

    pub fn end(&self) -> Va {
        Va(self.base.0 + self.size)
    }

    pub fn contains(&self, addr: Va) -> bool {
        addr >= self.base && addr.0 < self.base.0 + self.size
    }
}

/// Where [`BinaryImage::entry_functions`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionSource {
    SymbolTable,
    /// Call targets plus prologue patterns (stripped binaries).
    Derived,
    Provided,
}

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("unsupported container format")]
    UnsupportedFormat,
    #[error("malformed container: {0}")]
    MalformedContainer(String),
    #[error("file is {file}-byte class but word size {requested} was requested")]
    WordSizeMismatch { file: u8, requested: u8 },
    #[error("address {0} is not mapped")]
    OutOfBounds(Va),
    #[error("address {0} is not aligned for this read")]
    Misaligned(Va),
    #[error("invalid image: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ImageError> = std::result::Result<T, E>;

#[derive(Debug, Clone)]
pub struct BinaryImage {
    sections: Vec<Section>,
    word_size: u8,
    abi: Abi,
    entry_functions: BTreeSet<Va>,
    function_source: FunctionSource,
    pure_virtual_addr: Option<Va>,
    pure_virtual_slots: BTreeSet<Va>,
    got_map: BTreeMap<Va, Va>,
}

impl BinaryImage {
    /// Load an ELF64 or PE32+ file from disk.
    pub fn load(path: impl AsRef<Path>, abi: Abi, word_size: u8) -> Result<Self> {
        let data = std::fs::read(path)?;
        Self::from_bytes(&data, abi, word_size)
    }

    pub fn from_bytes(data: &[u8], abi: Abi, word_size: u8) -> Result<Self> {
        load::parse_container(data, abi, word_size)
    }

    /// The ABI a container format implies: ELF → Itanium, PE → MSVC.
    pub fn sniff_abi(data: &[u8]) -> Option<Abi> {
        match data {
            [0x7f, b'E', b'L', b'F', ..] => Some(Abi::Itanium),
            [b'M', b'Z', ..] => Some(Abi::Msvc),
            _ => None,
        }
    }

    pub fn builder(abi: Abi, word_size: u8) -> ImageBuilder {
        ImageBuilder {
            abi,
            word_size,
            sections: Vec::new(),
            functions: None,
            pure_virtual_addr: None,
            pure_virtual_slots: BTreeSet::new(),
            got_map: BTreeMap::new(),
        }
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn word_size(&self) -> u8 {
        self.word_size
    }

    pub fn word(&self) -> u64 {
        u64::from(self.word_size)
    }

    pub fn abi(&self) -> Abi {
        self.abi
    }

    pub fn entry_functions(&self) -> &BTreeSet<Va> {
        &self.entry_functions
    }

    pub fn function_source(&self) -> FunctionSource {
        self.function_source
    }

    pub fn pure_virtual_addr(&self) -> Option<Va> {
        self.pure_virtual_addr
    }

    pub fn got_map(&self) -> &BTreeMap<Va, Va> {
        &self.got_map
    }

    pub fn section_at(&self, addr: Va) -> Option<&Section> {
        let idx = self.sections.partition_point(|s| s.base <= addr);
        if idx == 0 {
            return None;
        }
        let s = &self.sections[idx - 1];
        s.contains(addr).then_some(s)
    }

    pub fn classify(&self, addr: Va) -> Option<SectionKind> {
        self.section_at(addr).map(|s| s.kind)
    }

    pub fn is_data(&self, addr: Va) -> bool {
        self.classify(addr).is_some_and(SectionKind::is_data)
    }

    pub fn is_text(&self, addr: Va) -> bool {
        self.classify(addr) == Some(SectionKind::Text)
    }

    pub fn bytes_at(&self, addr: Va, len: usize) -> Result<&[u8]> {
        let s = self.section_at(addr).ok_or(ImageError::OutOfBounds(addr))?;
        let off = (addr.0 - s.base.0) as usize;
        if off + len > s.bytes.len() {
            return Err(ImageError::OutOfBounds(addr));
        }
        Ok(&s.bytes[off..off + len])
    }

    /// Bytes from `addr` to the end of its section.
    pub fn tail_at(&self, addr: Va) -> Result<&[u8]> {
        let s = self.section_at(addr).ok_or(ImageError::OutOfBounds(addr))?;
        Ok(&s.bytes[(addr.0 - s.base.0) as usize..])
    }

    /// Little-endian machine word at `addr`, sign-interpreted.
    pub fn read_word(&self, addr: Va) -> Result<i64> {
        self.read_sized(addr, self.word_size)
    }

    pub fn read_uword(&self, addr: Va) -> Result<u64> {
        let v = self.read_word(addr)?;
        Ok(if self.word_size == 4 {
            v as u32 as u64
        } else {
            v as u64
        })
    }

    /// Word-sized pointer read, zero-extended.
    pub fn read_ptr(&self, addr: Va) -> Result<Va> {
        self.read_uword(addr).map(Va)
    }

    /// Sign-extended little-endian read of 4 or 8 bytes, aligned to `size`.
    pub fn read_sized(&self, addr: Va, size: u8) -> Result<i64> {
        if !addr.is_aligned(u64::from(size)) {
            return Err(ImageError::Misaligned(addr));
        }
        let b = self.bytes_at(addr, size as usize)?;
        Ok(match size {
            4 => i32::from_le_bytes(b.try_into().unwrap()) as i64,
            8 => i64::from_le_bytes(b.try_into().unwrap()),
            _ => return Err(ImageError::Misaligned(addr)),
        })
    }

    /// One level of GOT indirection. Addresses outside the map are returned
    /// unchanged, so resolving twice is the same as resolving once.
    pub fn resolve_got(&self, addr: Va) -> Va {
        self.got_map.get(&addr).copied().unwrap_or(addr)
    }

    pub fn is_function_start(&self, addr: Va) -> bool {
        self.entry_functions.contains(&addr)
    }

    /// Whether the word stored at `slot` is a plausible virtual function
    /// pointer: a known function start, the pure-virtual handler, or a slot
    /// the dynamic linker fills with the handler.
    pub fn is_fn_ptr_slot(&self, slot: Va) -> bool {
        if self.pure_virtual_slots.contains(&slot) {
            return true;
        }
        match self.read_ptr(slot) {
            Ok(target) => {
                self.is_function_start(target)
                    || (self.pure_virtual_addr == Some(target) && target != Va::ZERO)
            }
            Err(_) => false,
        }
    }

    pub fn is_pure_virtual_slot(&self, slot: Va) -> bool {
        self.pure_virtual_slots.contains(&slot)
            || (self.pure_virtual_addr.is_some()
                && self.read_ptr(slot).ok() == self.pure_virtual_addr)
    }

    /// Every word-aligned address of every data-like section.
    pub fn data_words(&self) -> impl Iterator<Item = Va> + '_ {
        let w = self.word();
        self.sections
            .iter()
            .filter(|s| s.kind.is_data())
            .flat_map(move |s| {
                let start = s.base.0.div_ceil(w) * w;
                let end = s.base.0 + s.size;
                (start..end.saturating_sub(w - 1)).step_by(w as usize).map(Va)
            })
    }

    /// Debug dump: one section per line, `name base size kind`.
    pub fn dump_sections(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            let _ = writeln!(out, "{} {} 0x{:x} {:?}", s.name, s.base, s.size, s.kind);
        }
        out
    }
}

/// Assembles an image from raw sections, for crafted inputs and tests.
#[derive(Debug, Clone)]
pub struct ImageBuilder {
    abi: Abi,
    word_size: u8,
    sections: Vec<Section>,
    functions: Option<BTreeSet<Va>>,
    pure_virtual_addr: Option<Va>,
    pure_virtual_slots: BTreeSet<Va>,
    got_map: BTreeMap<Va, Va>,
}

impl ImageBuilder {
    pub fn section(mut self, name: &str, base: u64, kind: SectionKind, bytes: Vec<u8>) -> Self {
        self.sections.push(Section::new(name, Va(base), kind, bytes));
        self
    }

    pub fn push_section(&mut self, section: Section) {
        self.sections.push(section);
    }

    /// Explicit function starts. Without this, starts are derived from the
    /// text sections the same way as for stripped binaries.
    pub fn functions(mut self, starts: impl IntoIterator<Item = Va>) -> Self {
        self.functions = Some(starts.into_iter().collect());
        self
    }

    pub fn pure_virtual(mut self, addr: Va) -> Self {
        self.pure_virtual_addr = Some(addr);
        self
    }

    pub fn pure_virtual_slot(mut self, slot: Va) -> Self {
        self.pure_virtual_slots.insert(slot);
        self
    }

    pub fn got(mut self, slot: Va, target: Va) -> Self {
        self.got_map.insert(slot, target);
        self
    }

    pub fn build(self) -> Result<BinaryImage> {
        if self.word_size != 4 && self.word_size != 8 {
            return Err(ImageError::Invalid(format!(
                "word size {} (expected 4 or 8)",
                self.word_size
            )));
        }
        let mut sections = self.sections;
        sections.sort_by_key(|s| s.base);
        for pair in sections.windows(2) {
            if pair[0].base.0 + pair[0].size > pair[1].base.0 {
                return Err(ImageError::Invalid(format!(
                    "sections {} and {} overlap",
                    pair[0].name, pair[1].name
                )));
            }
        }
        for s in &sections {
            if s.bytes.len() as u64 != s.size {
                return Err(ImageError::Invalid(format!("section {} size mismatch", s.name)));
            }
        }
        let mut img = BinaryImage {
            sections,
            word_size: self.word_size,
            abi: self.abi,
            entry_functions: BTreeSet::new(),
            function_source: FunctionSource::Provided,
            pure_virtual_addr: self.pure_virtual_addr,
            pure_virtual_slots: self.pure_virtual_slots,
            got_map: BTreeMap::new(),
        };
        // GOT entries must live in GOT-like sections, and chains are cut at
        // one hop.
        let mut got = BTreeMap::new();
        for (slot, target) in self.got_map {
            if img.classify(slot) != Some(SectionKind::GotLike) {
                return Err(ImageError::Invalid(format!(
                    "GOT slot {slot} outside a GOT-like section"
                )));
            }
            if img.classify(target) != Some(SectionKind::GotLike) {
                got.insert(slot, target);
            }
        }
        img.got_map = got;
        match self.functions {
            Some(f) => img.entry_functions = f,
            None => {
                img.entry_functions = derive_function_starts(&img);
                img.function_source = FunctionSource::Derived;
            }
        }
        Ok(img)
    }
}
