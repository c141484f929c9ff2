use conclab_core::pipeline::{run_suite, write_outputs};
use conclab_core::report::to_json_bytes;
use conclab_core::scenario::ScenarioConfig;
use conclab_core::verification::Status;
use sha2::{Digest, Sha256};
use std::path::Path;

fn run(name: &str) -> conclab_core::pipeline::RunOutcome {
    let cfg = ScenarioConfig::builtin(name).unwrap();
    run_suite(&cfg).unwrap_or_else(|e| panic!("{name}: {e:?}"))
}

fn sha_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn grid_refs(v: &serde_json::Value, out: &mut Vec<String>) {
    match v {
        serde_json::Value::String(s) if s.starts_with("grids/") => out.push(s.clone()),
        serde_json::Value::Array(a) => a.iter().for_each(|x| grid_refs(x, out)),
        serde_json::Value::Object(m) => m.values().for_each(|x| grid_refs(x, out)),
        _ => {}
    }
}

fn check_payloads(dir: &Path) -> usize {
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap();
    let mut refs = Vec::new();
    grid_refs(&report, &mut refs);
    for rel in &refs {
        let bytes = std::fs::read(dir.join(rel)).unwrap_or_else(|_| panic!("missing {rel}"));
        let stem = rel.trim_start_matches("grids/").trim_end_matches(".bin");
        assert_eq!(sha_hex(&bytes), stem, "{rel}");
    }
    refs.len()
}

#[test]
fn zero_sequence_writes_complete_outputs() {
    let out = run("zero_sequence");
    assert!(!out.has_failures(), "{:?}", out.verdicts);
    assert!(out.report.branches.is_empty());

    let tmp = tempfile::tempdir().unwrap();
    write_outputs(tmp.path(), &out).unwrap();
    for f in ["report.json", "verdicts.json", "remainder.csv", "separation.csv"] {
        assert!(tmp.path().join(f).is_file(), "{f}");
    }
    let csv = std::fs::read_to_string(tmp.path().join("remainder.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("k,value"));
    assert_eq!(csv.lines().count(), out.report.decomposition.k_schedule.len() + 1);
    check_payloads(tmp.path());
}

#[test]
fn fixed_bump_outputs_are_hashed_and_deterministic() {
    let a = run("flat_fixed_bump");
    let b = run("flat_fixed_bump");
    assert_eq!(to_json_bytes(&a.report), to_json_bytes(&b.report));
    assert_eq!(to_json_bytes(&a.verdicts), to_json_bytes(&b.verdicts));
    assert_eq!(a.payloads, b.payloads);
    assert!(!a.has_failures(), "{:?}", a.verdicts);
    assert!(a.report.branches.is_empty());
    assert!(!a.report.weak_limit_charts.is_empty());

    let tmp = tempfile::tempdir().unwrap();
    write_outputs(tmp.path(), &a).unwrap();
    assert!(!tmp.path().join("atlas_1.json").exists());
    assert_eq!(check_payloads(tmp.path()), a.report.weak_limit_charts.len());
    for (rel, bytes) in &a.payloads {
        assert_eq!(&std::fs::read(tmp.path().join(rel)).unwrap(), bytes);
    }
}

#[test]
fn oscillating_sequence_fails_remainder_decay() {
    let out = run("flat_oscillating");
    assert!(out.has_failures());
    let v = out.verdict("remainder_decay").expect("remainder verdict");
    assert_eq!(v.status, Status::Fail, "{v:?}");
}
