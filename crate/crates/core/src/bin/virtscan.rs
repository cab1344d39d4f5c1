use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use virtscan::config::{AnalysisConfig, OutputFormat};
use virtscan::disasm::DisasmMode;
use virtscan::eval::{parse_gt, parse_name_map, score};
use virtscan::image::BinaryImage;
use virtscan::pipeline::{analyze, tables, Analysis};
use virtscan::{Abi, Va};

/// Recover C++ virtual inheritance from stripped x86-64 binaries.
///
/// Exit status: 0 success (detect: virtual inheritance found), 1 detect
/// found none, 2 load, parse or usage error.
#[derive(Parser)]
#[command(name = "virtscan", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// ABI of the binary [default: from the file format]
    #[arg(long, global = true)]
    abi: Option<Abi>,
    /// Pointer size in bytes (8 or 4)
    #[arg(long, global = true, value_parser = ["8", "4"])]
    word_size: Option<String>,
    /// `builtin` or `text:<file>` (pre-disassembled listing)
    #[arg(long, global = true)]
    disasm: Option<DisasmMode>,
    /// key=value config file; command-line flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output format: json, dot or table
    #[arg(long, global = true)]
    out: Option<OutputFormat>,
    /// JSON map from address point to class name
    #[arg(long, global = true)]
    map: Option<PathBuf>,
    /// More logging (-v, -vv)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Cmd {
    /// One-line verdict: does the binary use virtual inheritance?
    Detect { binary: PathBuf },
    /// Full JSON report
    Scan {
        binary: PathBuf,
        /// Include every function's constructor summary
        #[arg(long)]
        dump_summaries: bool,
    },
    /// VTable groups
    Vtables { binary: PathBuf },
    /// VTTs and sub-VTTs (VB-Tables for MSVC)
    Vtts { binary: PathBuf },
    /// Class hierarchy as Graphviz DOT
    Tree { binary: PathBuf },
    /// Construction-VTable counts and offset distributions
    Surface {
        binary: PathBuf,
        /// Also write a gnuplot two-column data file
        #[arg(long)]
        gnuplot: Option<PathBuf>,
    },
    /// Score the recovered hierarchy against ground truth
    DiffGt {
        binary: PathBuf,
        /// Canonical GT JSON or a GCC class-hierarchy dump
        #[arg(long)]
        gt: PathBuf,
    },
}

impl Cmd {
    fn binary(&self) -> &Path {
        match self {
            Cmd::Detect { binary }
            | Cmd::Scan { binary, .. }
            | Cmd::Vtables { binary }
            | Cmd::Vtts { binary }
            | Cmd::Tree { binary }
            | Cmd::Surface { binary, .. }
            | Cmd::DiffGt { binary, .. } => binary,
        }
    }
}

type Fallible<T> = Result<T, Box<dyn std::error::Error>>;

fn effective_config(cli: &Cli, data: &[u8]) -> Fallible<AnalysisConfig> {
    let (mut cfg, keys) = match &cli.config {
        Some(p) => {
            let parsed = AnalysisConfig::from_file(p).map_err(|e| format!("{}: {e}", p.display()))?;
            (parsed.config, parsed.keys)
        }
        None => (AnalysisConfig::default(), Default::default()),
    };
    cfg.abi = match cli.abi {
        Some(a) => a,
        None if keys.contains("abi") => cfg.abi,
        None => BinaryImage::sniff_abi(data).unwrap_or(cfg.abi),
    };
    if let Some(w) = &cli.word_size {
        cfg.word_size = w.parse()?;
    }
    if let Some(d) = &cli.disasm {
        cfg.disasm = d.clone();
    }
    if let Some(o) = cli.out {
        cfg.output = Some(o);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_map(path: &Option<PathBuf>) -> Fallible<Option<BTreeMap<Va, String>>> {
    path.as_ref()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            parse_name_map(&text).map_err(|e| format!("{}: {e}", p.display()).into())
        })
        .transpose()
}

fn json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Write to stdout; a closed pipe (`virtscan scan x | head`) is not an
/// error.
fn emit(text: &str) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => r,
    }
}

fn run(cli: &Cli) -> Fallible<ExitCode> {
    let path = cli.cmd.binary();
    let data = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let cfg = effective_config(cli, &data)?;
    let names = read_map(&cli.map)?;
    let img = BinaryImage::from_bytes(&data, cfg.abi, cfg.word_size)?;
    let a: Analysis = analyze(&img, &cfg, names.as_ref())?;
    let out = cfg.output;

    let text = match &cli.cmd {
        Cmd::Detect { .. } => {
            let d = a.detect();
            match out {
                Some(OutputFormat::Json) => emit(&json(&d))?,
                _ => emit(&format!("{d}\n"))?,
            }
            return Ok(if d.virtual_inheritance { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
        Cmd::Scan { dump_summaries, .. } => match out {
            Some(OutputFormat::Table) => tables::scan(&a),
            Some(OutputFormat::Dot) => a.hierarchy.to_dot(),
            _ => a.report(&img, *dump_summaries).to_json(),
        },
        Cmd::Vtables { .. } => match out {
            Some(OutputFormat::Table) => tables::vtables(&a),
            _ => json(a.vtables()),
        },
        Cmd::Vtts { .. } => match out {
            Some(OutputFormat::Table) => tables::vtts(&a),
            _ => match &a.msvc {
                Some(m) => json(&m.vbtables.values().collect::<Vec<_>>()),
                None => json(&a.vtts()),
            },
        },
        Cmd::Tree { .. } => match out {
            Some(OutputFormat::Json) => json(&a.hierarchy),
            Some(OutputFormat::Table) => tables::edges(&a),
            _ => a.hierarchy.to_dot(),
        },
        Cmd::Surface { gnuplot, .. } => {
            if let Some(p) = gnuplot {
                std::fs::write(p, a.surface.gnuplot()).map_err(|e| format!("{}: {e}", p.display()))?;
            }
            match out {
                Some(OutputFormat::Table) => a.surface.table(),
                _ => json(&a.surface),
            }
        }
        Cmd::DiffGt { gt, .. } => {
            let names = names.ok_or("diff-gt needs --map to name recovered classes")?;
            let text = std::fs::read_to_string(gt).map_err(|e| format!("{}: {e}", gt.display()))?;
            let gt = parse_gt(&text).map_err(|e| format!("{}: {e}", gt.display()))?;
            let card = score(&a.hierarchy, &gt, &names);
            match out {
                Some(OutputFormat::Table) => card.table(),
                _ => json(&card),
            }
        }
    };
    emit(&text)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("virtscan: {e}");
            ExitCode::from(2)
        }
    }
}
