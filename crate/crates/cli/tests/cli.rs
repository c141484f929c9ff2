use std::path::Path;
use std::process::{Command, Output};

fn conclab(args: &[&str], cwd: &Path, env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_conclab"));
    cmd.args(args).current_dir(cwd).env_remove("CONCLAB_OUTPUT_DIR");
    if let Some(d) = env_out {
        cmd.env("CONCLAB_OUTPUT_DIR", d);
    }
    cmd.output().expect("spawn conclab")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

const ONE_BUMP: &str = r#"{"name":"tiny","manifold":{"catalog_id":"flat","dim":2},
 "region":{"box":{"min":[-3.0,-3.0],"max":[6.0,3.0]}},
 "sequence":{"family_id":"traveling_bump",
  "params":{"amplitude":1.0,"radius":1.0,"start":[0.0,0.0],"velocity":[0.75,0.0]}}}"#;

#[test]
fn list_and_validate_builtins() {
    let tmp = tempfile::tempdir().unwrap();
    let o = conclab(&["list-scenarios"], tmp.path(), None);
    assert_eq!(code(&o), 0);
    let listing = String::from_utf8(o.stdout).unwrap();
    for name in ["zero_sequence", "flat_one_bump", "hyperbolic_fixed_bump", "flat3_one_bump"] {
        assert!(listing.contains(name), "{name}");
        assert!(!listing.contains("invalid"));
    }
    let o = conclab(&["validate", "flat_two_bumps"], tmp.path(), None);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["name"], "flat_two_bumps");
}

#[test]
fn config_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let unknown = write(d, "unknown.json", &ONE_BUMP.replace("\"flat\"", "\"klein_bottle\""));
    let broken = write(d, "broken.json", "{\"name\": ");
    let bad_family = write(d, "fam.json", &ONE_BUMP.replace("traveling_bump", "nope"));
    let missing = d.join("absent.json");
    for cfg in [unknown.as_str(), broken.as_str(), bad_family.as_str(), missing.to_str().unwrap()] {
        assert_eq!(code(&conclab(&["validate", cfg], d, None)), 3, "{cfg}");
        assert_eq!(code(&conclab(&["run", cfg], d, None)), 3, "{cfg}");
    }
    assert!(!d.join("out").exists());
    assert_eq!(code(&conclab(&["run"], d, None)), 3);
    assert_eq!(code(&conclab(&["run", "zero_sequence", "--kmax", "x"], d, None)), 3);
    assert_eq!(code(&conclab(&["run", "zero_sequence", "--kmax", "0"], d, None)), 3);
}

#[test]
fn run_writes_outputs_with_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();

    let o = conclab(&["run", "zero_sequence", "--quiet"], d, None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    assert!(d.join("out/zero_sequence/report.json").is_file());

    let env_dir = d.join("from_env");
    let o = conclab(&["run", "zero_sequence"], d, Some(&env_dir));
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().contains("remainder_decay"));
    assert!(env_dir.join("verdicts.json").is_file());

    let flag_dir = d.join("from_flag");
    let o = conclab(&["run", "zero_sequence", "--out", flag_dir.to_str().unwrap()], d, Some(&env_dir));
    assert_eq!(code(&o), 0);
    assert!(flag_dir.join("report.json").is_file());
    assert_eq!(
        std::fs::read(flag_dir.join("report.json")).unwrap(),
        std::fs::read(env_dir.join("report.json")).unwrap()
    );
}

#[test]
fn traveling_bump_run_and_disabled_extraction() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = write(d, "tiny.json", ONE_BUMP);

    let o = conclab(&["run", &cfg, "--kmax", "4", "--out", "ok"], d, None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("ok/report.json")).unwrap()).unwrap();
    assert_eq!(report["decomposition"]["k_schedule"], serde_json::json!([1, 2, 4]));
    assert_eq!(report["branches"].as_array().unwrap().len(), 1);
    assert!(d.join("ok/atlas_1.json").is_file());
    for f in ["remainder.csv", "separation.csv", "verdicts.json"] {
        assert!(d.join("ok").join(f).is_file(), "{f}");
    }
    let profile = report["branches"][0]["profile"].as_array().unwrap();
    assert!(!profile.is_empty());
    for g in profile {
        assert!(d.join("ok").join(g.as_str().unwrap()).is_file());
    }

    let disabled = write(d, "none.json", &ONE_BUMP.replacen('{', r#"{"n_max":0,"#, 1));
    let o = conclab(&["run", &disabled, "--kmax", "4", "--out", "none"], d, None);
    assert_eq!(code(&o), 1);
    let verdicts: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("none/verdicts.json")).unwrap()).unwrap();
    let rem = verdicts.as_array().unwrap().iter().find(|v| v["name"] == "remainder_decay").unwrap();
    assert_eq!(rem["status"], "fail");
}
