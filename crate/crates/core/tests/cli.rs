//! The `virtscan` binary: exit codes, output formats, config precedence
//! and schema conformance.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{binary, fixtures};
use serde_json::Value;

fn virtscan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_virtscan")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn validate(schema: &str, doc: &Value) {
    let schema: Value =
        serde_json::from_str(&std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(schema)).unwrap())
            .unwrap();
    let v = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = v.iter_errors(doc).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{schema}: {errors:#?}");
}

#[test]
fn detect_exit_codes() {
    let o = virtscan(&["detect", path(&binary("running"))]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("virtual inheritance: yes ("));
    let o = virtscan(&["detect", path(&binary("purec"))]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stdout(&o), "virtual inheritance: no\n");
    assert_eq!(virtscan(&["detect", "/nonexistent/binary"]).status.code(), Some(2));
    assert_eq!(virtscan(&["detect", path(&fixtures().join("running/gt.json"))]).status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2() {
    let run = path(&binary("running")).to_string();
    assert_eq!(virtscan(&["frobnicate", &run]).status.code(), Some(2));
    assert_eq!(virtscan(&["scan", "--word-size", "3", &run]).status.code(), Some(2));
    assert_eq!(virtscan(&["scan", "--out", "yaml", &run]).status.code(), Some(2));
    assert_eq!(virtscan(&["scan", "--disasm", "objdump", &run]).status.code(), Some(2));
    // diff-gt cannot name classes without a map
    let gt = fixtures().join("running/gt.json");
    assert_eq!(virtscan(&["diff-gt", "--gt", path(&gt), &run]).status.code(), Some(2));
}

#[test]
fn scan_reports_match_schema() {
    for name in ["running", "chain2", "mixed", "eliminated", "purec"] {
        let map = fixtures().join(name).join("map.json");
        let bin = binary(name);
        let mut args = vec!["scan", "--dump-summaries", path(&bin)];
        let map_s;
        if map.exists() {
            map_s = path(&map).to_string();
            args.extend(["--map", &map_s]);
        }
        let o = virtscan(&args);
        assert_eq!(o.status.code(), Some(0), "{name}");
        let doc: Value = serde_json::from_str(&stdout(&o)).unwrap();
        validate("report.schema.json", &doc);
        assert!(doc.get("summaries").is_some());
    }
}

#[test]
fn msvc_report_and_abi_sniffing() {
    let dir = tempfile::tempdir().unwrap();
    let pe = dir.path().join("diamond.exe");
    std::fs::write(&pe, virtscan::craft::msvc_diamond().bytes).unwrap();
    // No --abi: the MZ header selects MSVC.
    let o = virtscan(&["detect", path(&pe)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("VB-Tables"), "{}", stdout(&o));
    let o = virtscan(&["scan", path(&pe)]);
    let doc: Value = serde_json::from_str(&stdout(&o)).unwrap();
    validate("report.schema.json", &doc);
    assert_eq!(doc["abi"], "msvc");
    assert_eq!(doc["vbtables"].as_array().unwrap().len(), 4);
    assert!(!doc["notes"].as_array().unwrap().is_empty());
}

#[test]
fn diff_gt_scorecard() {
    let f = |n: &str| fixtures().join("running").join(n);
    let o = virtscan(&[
        "diff-gt",
        "--gt",
        path(&f("gt.json")),
        "--map",
        path(&f("map.json")),
        path(&binary("running")),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let doc: Value = serde_json::from_str(&stdout(&o)).unwrap();
    validate("scorecard.schema.json", &doc);
    assert_eq!(doc["n_classes_with_virt"], 3);
    assert_eq!(doc["vbases_matching"], 3);
    assert_eq!(doc["ibases_matching"], 3);

    // A GCC class-hierarchy dump is accepted as ground truth too.
    let o = virtscan(&[
        "diff-gt",
        "--out",
        "table",
        "--gt",
        path(&f("class.dump")),
        "--map",
        path(&f("map.json")),
        path(&binary("running")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("classes with virtual bases: 3"));
}

#[test]
fn tree_formats() {
    let run = path(&binary("running")).to_string();
    let dot = stdout(&virtscan(&["tree", &run]));
    graphviz_rust::parse(&dot).unwrap();
    let json: Value = serde_json::from_str(&stdout(&virtscan(&["tree", "--out", "json", &run]))).unwrap();
    assert_eq!(json["edges"].as_array().unwrap().len(), 5);
    let table = stdout(&virtscan(&["tree", "--out", "table", &run]));
    assert!(table.starts_with("4 classes, 5 edges, 1 virtual-inheritance trees"));
}

#[test]
fn vtables_and_vtts_outputs() {
    let run = path(&binary("running")).to_string();
    let v: Value = serde_json::from_str(&stdout(&virtscan(&["vtables", &run]))).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 6);
    let t: Value = serde_json::from_str(&stdout(&virtscan(&["vtts", &run]))).unwrap();
    assert_eq!(t[0]["owner_vptr"], "0x3b60");
    assert!(stdout(&virtscan(&["vtts", "--out", "table", &run])).contains("VTT 0x3bb0 owner 0x3b60"));
    assert!(stdout(&virtscan(&["vtables", "--out", "table", &run])).contains("cons"));
}

#[test]
fn surface_gnuplot_file() {
    let dir = tempfile::tempdir().unwrap();
    let dat = dir.path().join("offsets.dat");
    let o = virtscan(&["surface", "--gnuplot", path(&dat), path(&binary("chain2"))]);
    assert_eq!(o.status.code(), Some(0));
    let doc: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["n_construction_vtables"], 5);
    let data = std::fs::read_to_string(&dat).unwrap();
    assert!(data.starts_with("# vbase-offset count\n"));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("virtscan.conf");
    std::fs::write(&conf, "abi = msvc\noutput = table\n").unwrap();
    let run = path(&binary("running")).to_string();

    // Config alone: MSVC analysis of an ELF finds no VB-Tables.
    let o = virtscan(&["detect", "--config", path(&conf), &run]);
    assert_eq!(o.status.code(), Some(1));
    // The flag wins.
    let o = virtscan(&["detect", "--config", path(&conf), "--abi", "itanium", &run]);
    assert_eq!(o.status.code(), Some(0));
    // Config output format applies when --out is absent.
    let o = virtscan(&["surface", "--config", path(&conf), "--abi", "itanium", &run]);
    assert!(stdout(&o).starts_with("construction vtables: 2"));
    let o = virtscan(&["surface", "--config", path(&conf), "--abi", "itanium", "--out", "json", &run]);
    assert!(serde_json::from_str::<Value>(&stdout(&o)).is_ok());

    std::fs::write(&conf, "abi = sparc\n").unwrap();
    let o = virtscan(&["detect", "--config", path(&conf), &run]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn text_listing_gives_same_hierarchy() {
    use virtscan::disasm::{decode_all, render_listing};
    let (img, _) = common::load("running");
    let dir = tempfile::tempdir().unwrap();
    let lst = dir.path().join("running.lst");
    std::fs::write(&lst, render_listing(&decode_all(&img))).unwrap();
    let run = path(&binary("running")).to_string();
    let mode = format!("text:{}", path(&lst));
    let builtin = stdout(&virtscan(&["tree", &run]));
    let text = stdout(&virtscan(&["tree", "--disasm", &mode, &run]));
    assert_eq!(builtin, text);
}

#[test]
fn scan_is_deterministic_across_processes() {
    let run = path(&binary("chain3")).to_string();
    let a = virtscan(&["scan", "--dump-summaries", &run]).stdout;
    let b = virtscan(&["scan", "--dump-summaries", &run]).stdout;
    assert_eq!(a, b);
}

#[test]
fn schema_rejects_malformed_reports() {
    let o = virtscan(&["scan", path(&binary("running"))]);
    let good: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let schema: Value = serde_json::from_str(include_str!("../schemas/report.schema.json")).unwrap();
    let v = jsonschema::validator_for(&schema).unwrap();
    assert!(v.is_valid(&good));
    let mut bad = good.clone();
    bad["vtts"][0]["base"] = Value::from("3bb0");
    assert!(!v.is_valid(&bad));
    let mut bad = good.clone();
    bad["hierarchy"]["edges"][0]["kind"] = Value::from("friend");
    assert!(!v.is_valid(&bad));
    let mut bad = good;
    bad.as_object_mut().unwrap().remove("surface");
    assert!(!v.is_valid(&bad));
}
