//! End-to-end behavior of the binary on small configurations.

use punctum::config::{key_spec, KEYS};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(sub: &str, config: &str, dir: &Path, extra: &[&str]) -> Output {
    let cfg = dir.join("input.conf");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_punctum"))
        .arg(sub)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: &str = "experiment = verify-bubble\nsamples = 400\ndimensions = 3,4\n";

#[test]
fn keys_subcommand_lists_every_key() {
    let out = Command::new(env!("CARGO_BIN_EXE_punctum")).arg("keys").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let listed: Vec<&str> = text.lines().filter_map(|l| l.split_whitespace().next()).collect();
    assert_eq!(listed.len(), KEYS.len());
    for k in KEYS {
        assert!(listed.contains(&k.name), "{} missing from the key listing", k.name);
        assert!(!k.help.is_empty());
    }
}

#[test]
fn design_tunables_are_configurable() {
    let tunables = [
        "h", "h_min_factor", "growth", "min_hole_cells", "eps_max_fraction", "mg_coarse_size", "mg_sweeps", "linear_tol", "quad_tol",
        "correction_method", "correction_tol", "correction_max_iter", "richardson_order", "newton_tol", "newton_max_iter", "newton_start",
        "remainder_step", "collar_cells", "samples", "fd_steps", "pairs", "transfer_samples", "hopf_scale", "fd_step", "margin", "k_max",
        "scan_points", "write_fields", "record_timings", "seed", "mirror", "meridian", "group",
    ];
    for t in tunables {
        assert!(key_spec(t).is_some(), "{t} is not a configuration key");
    }
    assert!(KEYS.iter().filter(|k| k.name.starts_with("tol_")).count() >= 12);
}

#[test]
fn small_run_writes_checked_outputs() {
    let dir = scratch("small");
    let out = run("verify-bubble", SMALL, &dir, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.join("out");
    let rows = |f: &str| fs::read_to_string(o.join(f)).unwrap().lines().count();
    assert_eq!(rows("identities.csv"), 1 + 2);
    assert_eq!(rows("newtonian.csv"), 1 + 2 * 3);
    assert_eq!(rows("fd_laplacian.csv"), 1 + 2 * 3);
    let manifest = json(&o.join("manifest.json"));
    assert_eq!(manifest["pass"], Value::Bool(true));
    let files = manifest["files"].as_array().unwrap();
    assert!(files.len() >= 5);
    for f in files {
        let bytes = fs::read(o.join(f["name"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"].as_u64().unwrap() as usize, bytes.len());
        assert_eq!(f["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
    }
    let summary = json(&o.join("summary.json"));
    assert!(summary["checks"].as_array().unwrap().iter().all(|c| c["status"] == "pass"));
}

#[test]
fn reruns_are_byte_identical_and_seed_matters() {
    let a = scratch("rerun_a");
    let b = scratch("rerun_b");
    let c = scratch("rerun_c");
    assert!(run("verify-bubble", SMALL, &a, &[]).status.success());
    assert!(run("verify-bubble", SMALL, &b, &["--threads", "4"]).status.success());
    assert!(run("verify-bubble", SMALL, &c, &["--seed", "7"]).status.success());
    let m = |d: &Path| fs::read(d.join("out/manifest.json")).unwrap();
    assert_eq!(m(&a), m(&b));
    assert_ne!(json(&a.join("out/manifest.json"))["config_hash"], json(&c.join("out/manifest.json"))["config_hash"]);
    assert_eq!(json(&c.join("out/manifest.json"))["seed"], 7);
}

#[test]
fn written_config_reproduces_the_run() {
    let a = scratch("replay_a");
    assert!(run("verify-bubble", SMALL, &a, &[]).status.success());
    let written = fs::read_to_string(a.join("out/config.txt")).unwrap();
    let b = scratch("replay_b");
    assert!(run("verify-bubble", &written, &b, &[]).status.success());
    assert_eq!(fs::read(a.join("out/manifest.json")).unwrap(), fs::read(b.join("out/manifest.json")).unwrap());
}

#[test]
fn unknown_key_is_a_config_error_with_suggestion() {
    let dir = scratch("typo");
    let out = run("verify-bubble", "experiment = verify-bubble\nsampels = 10\n", &dir, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("did you mean 'samples'"));
    assert!(!dir.join("out/manifest.json").exists());
}

#[test]
fn mismatched_subcommand_is_rejected() {
    let dir = scratch("mismatch");
    let out = run("greens", SMALL, &dir, &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_checks_exit_one_with_manifest() {
    let dir = scratch("strict");
    let out = run("verify-bubble", &format!("{SMALL}tol_identity = 1e-30\n"), &dir, &[]);
    assert_eq!(out.status.code(), Some(1));
    let manifest = json(&dir.join("out/manifest.json"));
    assert_eq!(manifest["pass"], Value::Bool(false));
    let summary = json(&dir.join("out/summary.json"));
    assert!(summary["checks"].as_array().unwrap().iter().any(|c| c["status"] == "fail"));
}

#[test]
fn runtime_error_leaves_failure_marker() {
    let dir = scratch("marker");
    let out = run("greens", "experiment = greens\nmirror = 0\npole = 0.2,0,0\nh = 1/8\n", &dir, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(dir.join("out/FAILED").exists());
    assert!(!dir.join("out/manifest.json").exists());
}

#[test]
fn missing_config_file_is_reported() {
    let out = Command::new(env!("CARGO_BIN_EXE_punctum"))
        .args(["hopf-check", "--config", "/nonexistent/x.conf", "--out"])
        .arg(scratch("missing").join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
