use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn parea(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parea"))
        .args(args)
        .arg("--output-dir")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

const SMALL: &str = r#"name = "small"
description = "8x8 square with a rotational drift"

[grid]
nx = 8
ny = 8
h = 0.125
mask = "full"

[fields]
drift = "heisenberg"

[boundary]
kind = "dirichlet"
data = "constant:0"
"#;

#[test]
fn certify_trivial_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = parea(&["certify", "--scenario", "trivial"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(dir.path());
    assert_eq!(m["command"], "certify");
    assert_eq!(m["checks_failed"], serde_json::json!([]));
}

#[test]
fn threshold_on_unbounded_step() {
    let dir = tempfile::tempdir().unwrap();
    let o = parea(&["threshold", "--scenario", "step-c3"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let t: Value = serde_json::from_slice(&fs::read(dir.path().join("threshold.json")).unwrap()).unwrap();
    assert_eq!(t["boundedness"]["class"], "unbounded");
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, SMALL.replace("[fields]", "[fields]\ncolour = \"red\"")).unwrap();
    let o = parea(&["solve-dirichlet", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("colour") && err.contains("line 11"), "{err}");

    let o = parea(&["solve-neumann", "--config", dir.path().join("missing.toml").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    // the boundary kind must match the subcommand
    let o = parea(&["solve-neumann", "--scenario", "heisenberg-disk-16"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_regression_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    let text = format!("{SMALL}\n[expected]\nprimal = 100.0\ntolerance = 1e-6\norigin = \"regression\"\n");
    fs::write(&cfg, text).unwrap();
    let o = parea(&["solve-dirichlet", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let failed = manifest(&dir.path().join("out"))["checks_failed"].clone();
    assert!(!failed.as_array().unwrap().is_empty(), "{failed}");
}

#[test]
fn manifest_hashes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("out");
    let o = parea(&["solve-dirichlet", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    let listed: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|a| a["path"].as_str().unwrap()).collect();
    for a in m["artifacts"].as_array().unwrap() {
        let bytes = fs::read(out.join(a["path"].as_str().unwrap())).unwrap();
        assert_eq!(a["sha256"], hex::encode(Sha256::digest(&bytes)));
        assert_eq!(a["bytes"], bytes.len());
    }
    for name in ["u.csv", "u.meta.json", "n.csv", "flux.csv", "trace.csv", "certificate.json"] {
        assert!(listed.contains(&name), "{name} missing from {listed:?}");
    }
    let on_disk = fs::read_dir(&out).unwrap().count();
    assert_eq!(on_disk, listed.len() + 1);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str, args: &[&str]| {
        let out = dir.path().join(sub);
        let mut all = args.to_vec();
        all.extend(["--seed", "4"]);
        let o = parea(&all, &out);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let mut m = manifest(&out);
        m.as_object_mut().unwrap().remove("wall_time_seconds");
        m
    };
    for args in [
        &["solve-dirichlet", "--scenario", "heisenberg-disk-16"][..],
        &["levelset", "--scenario", "trivial", "--format", "json"][..],
        &["barrier-probe", "--scenario", "barrier-notch"][..],
    ] {
        assert_eq!(run("a", args), run("b", args), "{args:?}");
    }
}

#[test]
fn list_scenarios_names_the_builtins() {
    let o = Command::new(env!("CARGO_BIN_EXE_parea")).arg("list-scenarios").output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for name in ["trivial", "heisenberg-disk-64", "barrier-notch", "dirichlet-detach"] {
        assert!(text.contains(name), "{text}");
    }
}
