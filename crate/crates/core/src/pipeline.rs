//! End-to-end analysis and the JSON report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::addr::Va;
use crate::config::AnalysisConfig;
use crate::ctor::{identify_ctors, summarize_all, CtorContext, CtorSummary, PtrWrite};
use crate::disasm::{listing_for, GrammarError, Listing};
use crate::image::{Abi, BinaryImage, FunctionSource, ImageError, SectionKind};
use crate::itanium::{recover_metadata, ItaniumMeta, Mapping, VTables, Vtt, VttOptions};
use crate::msvc::{msvc_ctor_classes, recover_msvc, recover_msvc_metadata, MsvcMeta, VbTable};
use crate::recovery::{ctor_classes, recover_itanium, EdgeKind, Evidence, Hierarchy};
use crate::surface::{offset_distribution, SurfaceReport};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("disassembly listing: {0}")]
    Listing(#[from] GrammarError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
}

/// Everything recovered from one binary.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub config: AnalysisConfig,
    pub listing: Listing,
    pub itanium: Option<ItaniumMeta>,
    pub msvc: Option<MsvcMeta>,
    pub summaries: BTreeMap<Va, CtorSummary>,
    /// Functions storing a known VTable address point.
    pub ctors: BTreeSet<Va>,
    /// Constructor → class id.
    pub ctor_classes: BTreeMap<Va, Va>,
    pub hierarchy: Hierarchy,
    pub surface: SurfaceReport,
    pub notes: Vec<String>,
}

/// Run the full pipeline for `cfg.abi`.
pub fn analyze(
    img: &BinaryImage,
    cfg: &AnalysisConfig,
    names: Option<&BTreeMap<Va, String>>,
) -> Result<Analysis, PipelineError> {
    cfg.validate()?;
    let mut notes = cfg.warnings();
    for w in &notes {
        log::warn!("{w}");
    }
    let listing = listing_for(img, &cfg.disasm)?;
    let mut ctx = CtorContext::new(cfg.abi);

    let (itanium, msvc) = match cfg.abi {
        Abi::Itanium => {
            let meta = recover_metadata(
                img,
                &listing,
                VttOptions {
                    prose_boundary: cfg.vtt_prose_boundary,
                },
            );
            ctx.address_points = meta.vtables.address_points().collect();
            ctx.vtts = meta.vtts.iter().map(|v| (v.base, v.end())).collect();
            (Some(meta), None)
        }
        Abi::Msvc => {
            let meta = recover_msvc_metadata(img, &listing, &cfg.vbtable_config());
            if !meta.vtables.is_empty() {
                notes.push("msvc: VTables validated without the offset-to-top condition".into());
            }
            ctx.address_points = meta.vtables.address_points().collect();
            ctx.vbtables = meta.vbtables.keys().copied().collect();
            (None, Some(meta))
        }
    };

    let summaries = summarize_all(&listing, img, &ctx);
    let ctors = identify_ctors(&summaries);
    let (mut hierarchy, classes, surface) = match (&itanium, &msvc) {
        (Some(meta), _) => {
            let h = recover_itanium(meta, &summaries);
            let s = offset_distribution(&meta.vtables, Some(&h));
            (h, ctor_classes(meta, &summaries), s)
        }
        (_, Some(meta)) => {
            let h = recover_msvc(meta, &summaries);
            let s = offset_distribution(&meta.vtables, Some(&h));
            (h, msvc_ctor_classes(&summaries, &meta.vtables), s)
        }
        _ => unreachable!("one ABI branch always runs"),
    };
    if let Some(n) = names {
        hierarchy.set_names(n);
    }
    Ok(Analysis {
        config: cfg.clone(),
        listing,
        itanium,
        msvc,
        summaries,
        ctors,
        ctor_classes: classes,
        hierarchy,
        surface,
        notes,
    })
}

/// Load `path` and analyze it.
pub fn analyze_path(
    path: impl AsRef<Path>,
    cfg: &AnalysisConfig,
    names: Option<&BTreeMap<Va, String>>,
) -> Result<(BinaryImage, Analysis), PipelineError> {
    let img = BinaryImage::load(path, cfg.abi, cfg.word_size)?;
    let a = analyze(&img, cfg, names)?;
    Ok((img, a))
}

/// Answer to "does this binary use virtual inheritance?".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Detection {
    pub abi: Abi,
    pub virtual_inheritance: bool,
    /// Valid VTTs (Itanium) or VB-Tables backing a virtual edge (MSVC).
    pub count: usize,
}

impl fmt::Display for Detection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.virtual_inheritance {
            return f.write_str("virtual inheritance: no");
        }
        let what = match self.abi {
            Abi::Itanium => "VTTs",
            Abi::Msvc => "VB-Tables",
        };
        write!(f, "virtual inheritance: yes ({} {what})", self.count)
    }
}

impl Analysis {
    pub fn vtables(&self) -> &VTables {
        match (&self.itanium, &self.msvc) {
            (Some(m), _) => &m.vtables,
            (_, Some(m)) => &m.vtables,
            _ => unreachable!(),
        }
    }

    pub fn vtts(&self) -> &[Vtt] {
        self.itanium.as_ref().map_or(&[], |m| m.vtts.as_slice())
    }

    pub fn detect(&self) -> Detection {
        let count = match self.config.abi {
            Abi::Itanium => self.vtts().len(),
            Abi::Msvc => self
                .hierarchy
                .edges()
                .iter()
                .filter(|e| e.kind == EdgeKind::Virtual)
                .filter_map(|e| match e.evidence {
                    Evidence::VbaseOffsetMatch { vbtable, .. } => vbtable,
                    _ => None,
                })
                .collect::<BTreeSet<_>>()
                .len(),
        };
        Detection {
            abi: self.config.abi,
            virtual_inheritance: count > 0,
            count,
        }
    }

    pub fn report(&self, img: &BinaryImage, include_summaries: bool) -> Report {
        let mut errors = Vec::new();
        if let Some(m) = &self.itanium {
            errors.extend(m.errors.iter().map(|e| ReportError {
                section: "vtts".into(),
                message: e.to_string(),
            }));
        }
        let partial: Vec<Va> = self.listing.values().filter(|b| b.partial).map(|b| b.start).collect();
        errors.extend(partial.iter().map(|f| ReportError {
            section: "functions".into(),
            message: format!("decoding stalled inside function {f}; its summary is partial"),
        }));

        let mut ctors: Vec<CtorInfo> = self
            .summaries
            .values()
            .filter(|s| s.is_ctor() || s.is_special)
            .map(|s| CtorInfo {
                func: s.func,
                class: self.ctor_classes.get(&s.func).copied(),
                special: s.is_special,
                vptr_writes: s.vptr_writes.clone(),
                vbptr_writes: s.vbptr_writes.clone(),
                sub_vtt_args: s.vtt_args_seen.clone(),
                partial: s.partial,
            })
            .collect();
        ctors.sort_by_key(|c| c.func);

        Report {
            abi: self.config.abi,
            word_size: img.word_size(),
            sections: img
                .sections()
                .iter()
                .map(|s| SectionInfo {
                    name: s.name.clone(),
                    base: s.base,
                    size: s.size,
                    kind: s.kind,
                })
                .collect(),
            functions: FunctionsInfo {
                count: img.entry_functions().len(),
                source: img.function_source(),
                partial,
            },
            vtables: self.vtables().clone(),
            vtts: self.vtts().to_vec(),
            discarded_vtts: self.itanium.as_ref().map(|m| m.discarded_vtts.clone()).unwrap_or_default(),
            mapping: self.itanium.as_ref().map(|m| m.mapping.clone()).unwrap_or_default(),
            vbtables: self.msvc.as_ref().map(|m| m.vbtables.values().cloned().collect()),
            ctors,
            hierarchy: self.hierarchy.clone(),
            surface: self.surface.clone(),
            detection: self.detect(),
            summaries: include_summaries.then(|| self.summaries.values().cloned().collect()),
            notes: self.notes.clone(),
            errors,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SectionInfo {
    pub name: String,
    pub base: Va,
    pub size: u64,
    pub kind: SectionKind,
}

#[derive(Debug, Clone, Serialize)]
pub struct FunctionsInfo {
    pub count: usize,
    pub source: FunctionSource,
    /// Functions whose decoding stopped at an unsupported instruction.
    pub partial: Vec<Va>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CtorInfo {
    pub func: Va,
    pub class: Option<Va>,
    /// Initializes vptrs from a sub-VTT argument.
    pub special: bool,
    pub vptr_writes: Vec<PtrWrite>,
    pub vbptr_writes: Vec<PtrWrite>,
    pub sub_vtt_args: Vec<Va>,
    pub partial: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportError {
    pub section: String,
    pub message: String,
}

/// The `scan` output. Field order is fixed and every collection is
/// sorted, so equal inputs serialize to identical bytes.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub abi: Abi,
    pub word_size: u8,
    pub sections: Vec<SectionInfo>,
    pub functions: FunctionsInfo,
    pub vtables: VTables,
    pub vtts: Vec<Vtt>,
    pub discarded_vtts: Vec<Va>,
    pub mapping: Mapping,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vbtables: Option<Vec<VbTable>>,
    pub ctors: Vec<CtorInfo>,
    pub hierarchy: Hierarchy,
    pub surface: SurfaceReport,
    pub detection: Detection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summaries: Option<Vec<CtorSummary>>,
    pub notes: Vec<String>,
    pub errors: Vec<ReportError>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Plain-text renderings used by the CLI's `--out table`.
pub mod tables {
    use std::fmt::Write as _;

    use super::Analysis;

    pub fn vtables(a: &Analysis) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<14} {:<6} {:>8} {:>5}  vbase-offsets", "address point", "kind", "ott", "fns");
        for g in a.vtables().groups() {
            let kind = if g.is_construction { "cons" } else { "reg" };
            for (i, m) in g.members().enumerate() {
                let label = if i == 0 { kind } else { "  sec" };
                let vbo: Vec<String> = m.vbase_offsets.iter().map(|v| format!("{v:#x}")).collect();
                let _ = writeln!(
                    s,
                    "{:<14} {:<6} {:>8} {:>5}  {}",
                    m.address_point.to_string(),
                    label,
                    m.offset_to_top,
                    m.fn_ptrs.len(),
                    vbo.join(" ")
                );
            }
        }
        s
    }

    pub fn vtts(a: &Analysis) -> String {
        let mut s = String::new();
        for v in a.vtts() {
            let _ = writeln!(
                s,
                "VTT {} owner {} entries {} (stopped: {:?})",
                v.base,
                v.owner_vptr,
                v.entries.len(),
                v.terminated_by
            );
            for sub in &v.sub_vtts {
                let kind = if sub.is_construction { "construction" } else { "regular" };
                let members: Vec<String> = sub.member_vptrs.iter().map(|m| m.to_string()).collect();
                let _ = writeln!(s, "  sub-VTT @{} {kind}: {}", sub.start, members.join(" "));
            }
        }
        if let Some(m) = &a.msvc {
            for t in m.vbtables.values() {
                let e: Vec<String> = t.entries.iter().map(|v| format!("{v:#x}")).collect();
                let _ = writeln!(s, "VB-Table {} entries {}", t.base, e.join(" "));
            }
        }
        s
    }

    pub fn edges(a: &Analysis) -> String {
        let h = &a.hierarchy;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} classes, {} edges, {} virtual-inheritance trees",
            h.nodes.len(),
            h.edges().len(),
            h.trees.len()
        );
        for e in h.edges() {
            let flag = if e.flagged_cycle { " (cycle)" } else if e.stand_in { " (stand-in)" } else { "" };
            let _ = writeln!(s, "  {} -> {} {:?}{flag}", h.name(e.derived), h.name(e.base), e.kind);
        }
        s
    }

    pub fn scan(a: &Analysis) -> String {
        let mut s = String::new();
        let cons = a.vtables().groups().iter().filter(|g| g.is_construction).count();
        let _ = writeln!(s, "abi {}", a.config.abi);
        let _ = writeln!(s, "vtable groups: {} ({} construction)", a.vtables().len(), cons);
        let _ = writeln!(s, "VTTs: {}", a.vtts().len());
        if let Some(m) = &a.msvc {
            let _ = writeln!(s, "VB-Tables: {}", m.vbtables.len());
        }
        let _ = writeln!(s, "constructors: {}", a.ctors.len());
        s.push_str(&edges(a));
        s
    }
}
