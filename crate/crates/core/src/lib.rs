//! Recovery of C++ virtual inheritance from stripped x86-64 binaries.
//!
//! The pipeline runs in dependency order over an immutable [`BinaryImage`]:
//!
//! ```text
//! image ──► disasm ──► itanium::find_vtables ──► find_vtts ──► group_subvtts
//!                         │                                      │
//!                         │              extract_vbase_offsets ◄─┘
//!                         ▼                        │
//!                  ctor::summarize ──► map_construction_to_regular
//!                         │                        │
//!                         └──────► recovery ◄──────┘ ──► surface / eval
//! ```
//!
//! Itanium binaries (GCC, Clang) go through VTables, VTTs, sub-VTTs and
//! vbase-offsets; MSVC binaries go through VB-Tables instead (see [`msvc`]).
//! [`pipeline::analyze`] runs everything and produces a [`pipeline::Report`].
//!
//! ```no_run
//! use virtscan::{config::AnalysisConfig, image::BinaryImage, pipeline};
//!
//! let cfg = AnalysisConfig::default();
//! let img = BinaryImage::load("fixtures/running/bin/running", cfg.abi, cfg.word_size).unwrap();
//! let analysis = pipeline::analyze(&img, &cfg, None).unwrap();
//! for edge in analysis.hierarchy.edges() {
//!     println!("{} -> {} ({:?})", edge.derived, edge.base, edge.kind);
//! }
//! ```

pub mod addr;
pub mod config;
pub mod craft;
pub mod ctor;
pub mod disasm;
pub mod eval;
pub mod image;
pub mod itanium;
pub mod msvc;
pub mod pipeline;
pub mod recovery;
pub mod surface;

pub use addr::Va;
pub use image::{Abi, BinaryImage, Section, SectionKind};
