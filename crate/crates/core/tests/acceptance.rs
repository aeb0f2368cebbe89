//! Runs every configuration in `acceptance/` through the binary and prints one
//! line per criterion. Exits nonzero when any criterion fails.

use serde_json::Value;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

struct Run {
    name: &'static str,
    command: &'static str,
    criteria: &'static [u32],
}

const RUNS: &[Run] = &[
    Run { name: "verify-bubble", command: "verify-bubble", criteria: &[1, 2, 4] },
    Run { name: "greens-center", command: "greens", criteria: &[3] },
    Run { name: "greens-offcenter", command: "greens", criteria: &[3] },
    Run { name: "correction-meridian", command: "correction-sweep", criteria: &[5] },
    Run { name: "correction-octant", command: "correction-sweep", criteria: &[5] },
    Run { name: "energy-constant", command: "reduced-energy-sweep", criteria: &[6] },
    Run { name: "energy-tilt", command: "reduced-energy-sweep", criteria: &[6] },
    Run { name: "critical-n3", command: "critical-point", criteria: &[7] },
    Run { name: "critical-n5", command: "critical-point", criteria: &[7] },
    Run { name: "newton", command: "newton-continuation", criteria: &[8] },
    Run { name: "hopf", command: "hopf-check", criteria: &[9] },
    Run { name: "meridian", command: "meridian-check", criteria: &[10] },
];

const TITLES: [&str; 11] = [
    "bubble identities and discrete-Laplacian order",
    "kernel identity",
    "Green's regular part on the unit ball",
    "Newtonian identity",
    "correction scaling, meridian and 3D",
    "reduced-energy expansion",
    "critical point of the limit profile",
    "Newton concentration",
    "Hopf identities",
    "meridian necessity",
    "determinism across thread counts",
];

struct Outcome {
    exit: Option<i32>,
    summary: Option<Value>,
    config: String,
    dir: PathBuf,
}

fn execute(run: &Run, threads: usize, root: &Path) -> Outcome {
    let dir = root.join(format!("t{threads}")).join(run.name);
    let _ = fs::remove_dir_all(&dir);
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("acceptance").join(format!("{}.conf", run.name));
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_punctum"))
        .arg(run.command)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&dir)
        .arg("--threads")
        .arg(threads.to_string())
        .output()
        .expect("cannot start the binary");
    eprintln!("  {} (threads {threads}): exit {:?} in {:.1}s", run.name, status.status.code(), start.elapsed().as_secs_f64());
    let summary = fs::read_to_string(dir.join("summary.json")).ok().and_then(|s| serde_json::from_str(&s).ok());
    let config = fs::read_to_string(dir.join("config.txt")).unwrap_or_default();
    Outcome { exit: status.status.code(), summary, config, dir }
}

fn checks(o: &Outcome) -> Vec<(String, String)> {
    o.summary
        .as_ref()
        .and_then(|s| s["checks"].as_array())
        .map(|a| a.iter().map(|c| (c["name"].as_str().unwrap_or("").to_string(), c["status"].as_str().unwrap_or("").to_string())).collect())
        .unwrap_or_default()
}

fn config_value<'a>(o: &'a Outcome, key: &str) -> Option<&'a str> {
    o.config.lines().find_map(|l| l.split_once(" = ").filter(|(k, _)| k.trim() == key).map(|(_, v)| v.trim()))
}

fn parse_real(s: &str) -> Option<f64> {
    match s.split_once('/') {
        Some((a, b)) => Some(a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?),
        None => s.parse().ok(),
    }
}

/// Checks of a run that count towards a criterion.
fn selected(criterion: u32, name: &str) -> bool {
    match criterion {
        1 => ["bubble_residual_", "rescaled_residual_", "fd_order_deviation_"].iter().any(|p| name.starts_with(p)),
        2 => name.starts_with("kernel_residual_"),
        4 => name.starts_with("newtonian_"),
        _ => true,
    }
}

fn has(names: &[(String, String)], prefix: &str) -> bool {
    names.iter().any(|(n, _)| n.starts_with(prefix))
}

/// Criterion-specific requirements beyond "every selected check passed".
fn extra(criterion: u32, outcomes: &[&Outcome]) -> Result<(), String> {
    let all: Vec<(String, String)> = outcomes.iter().flat_map(|o| checks(o)).collect();
    match criterion {
        1 => {
            for n in 3..=6 {
                for p in ["bubble_residual_n", "fd_order_deviation_n"] {
                    if !has(&all, &format!("{p}{n}")) {
                        return Err(format!("missing {p}{n}"));
                    }
                }
            }
        }
        3 => {
            if outcomes.iter().filter(|o| has(&checks(o), "robin_error")).count() != outcomes.len() {
                return Err("a run lacks the Robin check".into());
            }
        }
        4 => {
            for n in 3..=5 {
                for k in 0..=2 {
                    if !has(&all, &format!("newtonian_n{n}_eta{k}")) {
                        return Err(format!("missing newtonian_n{n}_eta{k}"));
                    }
                }
            }
        }
        5 => {
            if outcomes.iter().any(|o| !has(&checks(o), "slope_rel_error")) {
                return Err("a sweep lacks its slope check".into());
            }
            let octant = outcomes.iter().any(|o| config_value(o, "h").and_then(parse_real).is_some_and(|h| (h - 1.0 / 64.0).abs() < 1e-12) && config_value(o, "meridian") == Some("false"));
            let meridian = outcomes.iter().any(|o| config_value(o, "meridian") == Some("true"));
            if !octant || !meridian {
                return Err("need one meridian sweep and one 3D sweep at h = 1/64".into());
            }
        }
        6 => {
            let mut points = Vec::new();
            let mut drifted_nonconstant = false;
            for o in outcomes {
                let Some(exps) = o.summary.as_ref().and_then(|s| s["details"]["expansions"].as_array()) else {
                    return Err("missing expansion details".into());
                };
                let nonconstant = config_value(o, "q") != Some("constant");
                for e in exps {
                    let d = e["d"].as_f64().unwrap_or(f64::NAN);
                    let eta: Vec<f64> = e["eta"].as_array().map(|a| a.iter().filter_map(Value::as_f64).collect()).unwrap_or_default();
                    if nonconstant && eta.iter().any(|v| *v != 0.0) {
                        drifted_nonconstant = true;
                    }
                    let key = format!("{d:?}{eta:?}");
                    if !points.contains(&key) {
                        points.push(key);
                    }
                }
            }
            if points.len() < 3 {
                return Err(format!("only {} distinct (d, eta) points", points.len()));
            }
            if !drifted_nonconstant {
                return Err("no point with eta != 0 and nonconstant Q".into());
            }
        }
        7 => {
            let dims: Vec<&str> = outcomes.iter().filter_map(|o| config_value(o, "n")).collect();
            if !(dims.contains(&"3") && dims.contains(&"5")) {
                return Err("need n = 3 and n = 5".into());
            }
        }
        8 => {
            if !has(&all, "peak_slope_rel_error") || !has(&all, "peak_distance_eps") {
                return Err("missing peak checks".into());
            }
        }
        9 => {
            for k in [1, 2, 4, 8] {
                for p in ["norm_multiplicativity", "component_laplacian", "dilation", "transfer_residual", "transfer_residual_unit_scale"] {
                    if !has(&all, &format!("{p}_k{k}")) {
                        return Err(format!("missing {p}_k{k}"));
                    }
                }
            }
        }
        10 => {
            let count = all.iter().filter(|(n, _)| n.starts_with("residual_k")).count();
            if count < 27 {
                return Err(format!("only {count} meridian residual checks"));
            }
        }
        _ => {}
    }
    Ok(())
}

fn evaluate(criterion: u32, outcomes: &[&Outcome]) -> Result<String, String> {
    if outcomes.is_empty() {
        return Err("no runs".into());
    }
    let mut evaluated = 0;
    for o in outcomes {
        let run = o.dir.file_name().and_then(|s| s.to_str()).unwrap_or("?");
        let Some(summary) = &o.summary else {
            return Err(format!("{run}: no summary (exit {:?})", o.exit));
        };
        if summary["skipped"].as_array().is_some_and(|a| !a.is_empty()) {
            return Err(format!("{run}: epsilon values skipped"));
        }
        for (name, status) in checks(o).into_iter().filter(|(n, _)| selected(criterion, n)) {
            if status != "pass" {
                return Err(format!("{run}: {name} is {status}"));
            }
            evaluated += 1;
        }
        if o.exit != Some(0) && criterion != 1 && criterion != 2 && criterion != 4 {
            return Err(format!("{run}: exit {:?}", o.exit));
        }
    }
    if evaluated == 0 {
        return Err("no checks evaluated".into());
    }
    extra(criterion, outcomes)?;
    Ok(format!("{evaluated} checks"))
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    if let Ok(entries) = fs::read_dir(dir) {
        for e in entries.flatten() {
            if let Ok(bytes) = fs::read(e.path()) {
                out.insert(e.file_name().to_string_lossy().into_owned(), bytes);
            }
        }
    }
    out
}

fn main() {
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    eprintln!("acceptance runs in {}", root.display());
    let single: Vec<Outcome> = RUNS.iter().map(|r| execute(r, 1, &root)).collect();
    let multi: Vec<Outcome> = RUNS.iter().map(|r| execute(r, 8, &root)).collect();

    let mut failed = 0;
    for criterion in 1..=11u32 {
        let result = if criterion == 11 {
            let mut diffs = Vec::new();
            let mut count = 0;
            for (a, b) in single.iter().zip(&multi) {
                let (fa, fb) = (files(&a.dir), files(&b.dir));
                count += fa.len();
                if fa.is_empty() || fa != fb {
                    diffs.push(a.dir.file_name().unwrap().to_string_lossy().into_owned());
                }
            }
            if diffs.is_empty() {
                Ok(format!("{count} files identical"))
            } else {
                Err(format!("differing outputs: {}", diffs.join(", ")))
            }
        } else {
            let runs: Vec<&Outcome> = RUNS.iter().zip(&single).filter(|(r, _)| r.criteria.contains(&criterion)).map(|(_, o)| o).collect();
            evaluate(criterion, &runs)
        };
        let title = TITLES[criterion as usize - 1];
        match result {
            Ok(msg) => println!("criterion {criterion:>2} PASS  {title} ({msg})"),
            Err(msg) => {
                failed += 1;
                println!("criterion {criterion:>2} FAIL  {title} ({msg})");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
