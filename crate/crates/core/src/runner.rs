//! Experiment pipelines: each run writes CSV/JSON outputs, a summary with
//! pass/fail checks and a manifest of checksums into one output directory.

use crate::bubbles::{alpha_n, rescaled_bubble, BubbleParams, Exponent};
use crate::config::{ExperimentConfig, ExperimentKind, ShapeSpec, StartSpec};
use crate::fv::{fmt17, FvSystem, GridField};
use crate::geometry::{puncture, Domain, Grid, GridSpec, MaskSelector, PuncturedDomain, Refinement};
use crate::hopf::{hopf_check, meridian_residual, test_function, MeridianProblem};
use crate::landscape::{
    compute_coefficients, critical_point, expansion_validation, flip_check, landscape_scan, ReducedCoefficients,
};
use crate::multigrid::MultigridOptions;
use crate::potential::{ball_regular_part, greens_regular_part, newtonian_identity_check, project, remainder_report};
use crate::reduction::{elementary_inequality_test, newton_solve, reduced_energy, solve_correction, ReductionConfig};
use crate::rng::{stream, uniform, unit_vector};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const FAILURE_MARKER: &str = "FAILED";
pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// `"<="` or `">="`.
    pub relation: &'static str,
    pub bound: f64,
    pub status: Status,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub note: String,
}

impl Check {
    pub fn le(name: impl Into<String>, value: f64, bound: f64) -> Check {
        let ok = value <= bound;
        Check { name: name.into(), value, relation: "<=", bound, status: if ok { Status::Pass } else { Status::Fail }, note: String::new() }
    }

    pub fn ge(name: impl Into<String>, value: f64, bound: f64) -> Check {
        let ok = value >= bound;
        Check { name: name.into(), value, relation: ">=", bound, status: if ok { Status::Pass } else { Status::Fail }, note: String::new() }
    }

    pub fn skipped(name: impl Into<String>, note: impl Into<String>) -> Check {
        Check { name: name.into(), value: f64::NAN, relation: "", bound: f64::NAN, status: Status::Skipped, note: note.into() }
    }

    fn with_note(mut self, note: impl Into<String>) -> Check {
        self.note = note.into();
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub experiment: ExperimentKind,
    pub pass: bool,
    pub checks: Vec<Check>,
    /// Parameter values left out, with the reason.
    pub skipped: Vec<String>,
    pub details: serde_json::Value,
}

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Timing {
    pub step: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub experiment: ExperimentKind,
    pub version: String,
    /// SHA-256 of the canonical config text.
    pub config_hash: String,
    pub seed: u64,
    pub pass: bool,
    pub files: Vec<FileEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<Vec<Timing>>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    sha256_hex(cfg.canonical.as_bytes())
}

struct Output {
    dir: PathBuf,
    files: Vec<String>,
    timings: Option<Vec<Timing>>,
    write_fields: bool,
    progress: bool,
}

impl Output {
    fn path(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.dir.join(name)
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut s = header.join(",");
        s.push('\n');
        for r in rows {
            debug_assert_eq!(r.len(), header.len());
            s.push_str(&r.join(","));
            s.push('\n');
        }
        fs::write(self.path(name), s)?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        fs::write(self.path(name), s)?;
        Ok(())
    }

    fn field(&mut self, stem: &str, field: &GridField) -> Result<()> {
        if self.write_fields {
            field.write_csv(&self.path(&format!("{stem}.csv")))?;
            field.write_binary(&self.path(&format!("{stem}.bin")))?;
        }
        Ok(())
    }

    fn time<T>(&mut self, step: impl Into<String>, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let step = step.into();
        if self.progress {
            eprintln!("  {step}");
        }
        match self.timings.is_some() {
            true => {
                let t = Instant::now();
                let v = f(self)?;
                let seconds = t.elapsed().as_secs_f64();
                self.timings.as_mut().unwrap().push(Timing { step, seconds });
                Ok(v)
            }
            false => f(self),
        }
    }
}

fn r(x: f64) -> String {
    fmt17(x)
}

fn u(x: usize) -> String {
    x.to_string()
}

fn b(x: bool) -> String {
    x.to_string()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Run an experiment, writing everything into `out`. Checks that fail make
/// `pass` false; module errors leave partial outputs and a failure marker.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    run_with(cfg, out, false)
}

/// As [`run`], optionally naming each step on stderr as it starts.
pub fn run_with(cfg: &ExperimentConfig, out: &Path, progress: bool) -> Result<RunManifest> {
    fs::create_dir_all(out)?;
    for stale in [FAILURE_MARKER, MANIFEST, SUMMARY] {
        let p = out.join(stale);
        if p.exists() {
            fs::remove_file(p)?;
        }
    }
    let mut o = Output {
        dir: out.to_path_buf(),
        files: Vec::new(),
        timings: cfg.record_timings.then(Vec::new),
        write_fields: cfg.write_fields,
        progress,
    };
    fs::write(o.path("config.txt"), &cfg.canonical)?;
    let result = match cfg.kind {
        ExperimentKind::VerifyBubble => verify_bubble(cfg, &mut o),
        ExperimentKind::Greens => greens(cfg, &mut o),
        ExperimentKind::Project => project_sweep(cfg, &mut o),
        ExperimentKind::CorrectionSweep => correction_sweep(cfg, &mut o),
        ExperimentKind::ReducedEnergySweep => reduced_energy_sweep(cfg, &mut o),
        ExperimentKind::Landscape => landscape(cfg, &mut o),
        ExperimentKind::CriticalPoint => critical(cfg, &mut o),
        ExperimentKind::NewtonContinuation => newton_continuation(cfg, &mut o),
        ExperimentKind::HopfCheck => hopf(cfg, &mut o),
        ExperimentKind::MeridianCheck => meridian(cfg, &mut o),
    };
    let (checks, skipped, details) = match result {
        Ok(v) => v,
        Err(e) => {
            fs::write(out.join(FAILURE_MARKER), format!("{e}\n"))?;
            return Err(e);
        }
    };
    let pass = checks.iter().all(|c| c.status != Status::Fail);
    let summary = Summary { experiment: cfg.kind, pass, checks, skipped, details };
    o.json(SUMMARY, &summary)?;
    let mut files = Vec::new();
    let mut names = o.files.clone();
    names.sort();
    for name in names {
        let bytes = fs::read(out.join(&name))?;
        files.push(FileEntry { bytes: bytes.len() as u64, sha256: sha256_hex(&bytes), name });
    }
    let manifest = RunManifest {
        experiment: cfg.kind,
        version: VERSION.to_string(),
        config_hash: config_hash(cfg),
        seed: cfg.seed,
        pass,
        files,
        timings: o.timings.take(),
    };
    let mut s = serde_json::to_string_pretty(&manifest)?;
    s.push('\n');
    fs::write(out.join(MANIFEST), s)?;
    Ok(manifest)
}

type Outcome = Result<(Vec<Check>, Vec<String>, serde_json::Value)>;

fn verify_bubble(cfg: &ExperimentConfig, o: &mut Output) -> Outcome {
    let dims = &cfg.dimensions;
    let mut checks = Vec::new();
    // Closed-form identities on random (n, δ, ξ, x, Q(ξ₀)).
    let per_sample: Vec<(usize, f64, f64, f64)> = o.time("identities", |_| {
        (0..cfg.samples)
            .into_par_iter()
            .map(|i| {
                let mut g = stream(cfg.seed, i as u64);
                let n = dims[i % dims.len()];
                let delta = 10f64.powf(uniform(&mut g, -1.0, 1.0));
                let xi: Vec<f64> = (0..n).map(|_| uniform(&mut g, -1.0, 1.0)).collect();
                let rad = delta * 10f64.powf(uniform(&mut g, -2.0, 2.0));
                let x: Vec<f64> = unit_vector(&mut g, n).iter().zip(&xi).map(|(d, c)| c + rad * d).collect();
                let q0 = 10f64.powf(uniform(&mut g, -1.0, 1.0));
                let bp = BubbleParams::new(n, delta, xi)?;
                let p = bp.p();
                let uval = bp.eval(&x);
                let bubble = (-bp.laplacian(&x) - uval.powf(p)).abs() / bp.laplacian_scale(&x);
                let mut kernel: f64 = 0.0;
                for j in 0..=n {
                    let lhs = -bp.psi_laplacian(j, &x)?;
                    let rhs = p * uval.powf(p - 1.0) * bp.psi(j, &x)?;
                    let scale = bp.psi_laplacian_scale(j, &x)?;
                    if scale > 0.0 {
                        kernel = kernel.max((lhs - rhs).abs() / scale);
                    }
                }
                let w = rescaled_bubble(&bp, q0)?;
                let wscale = w.gamma0 * bp.laplacian_scale(&x) + q0 * w.eval(&x).powf(p);
                let rescaled = w.residual(&x).abs() / wscale;
                Ok((n, bubble, kernel, rescaled))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut rows = Vec::new();
    for &n in dims {
        let mut acc = (0usize, 0.0f64, 0.0f64, 0.0f64);
        for s in per_sample.iter().filter(|s| s.0 == n) {
            acc = (acc.0 + 1, acc.1.max(s.1), acc.2.max(s.2), acc.3.max(s.3));
        }
        rows.push(vec![u(n), u(acc.0), r(acc.1), r(acc.2), r(acc.3)]);
        checks.push(Check::le(format!("bubble_residual_n{n}"), acc.1, cfg.tol.identity));
        checks.push(Check::le(format!("kernel_residual_n{n}"), acc.2, cfg.tol.identity));
        checks.push(Check::le(format!("rescaled_residual_n{n}"), acc.3, cfg.tol.identity));
    }
    o.csv("identities.csv", &["n", "samples", "bubble_residual", "kernel_residual", "rescaled_residual"], &rows)?;

    // Convergence order of the second-order difference Laplacian.
    let mut fd_rows = Vec::new();
    let mut orders = Vec::new();
    for &n in dims {
        let bp = BubbleParams::centered(n, 1.0);
        let x: Vec<f64> = (0..n).map(|k| 0.7 * (k as f64 + 1.0) / n as f64).collect();
        let exact = bp.laplacian(&x);
        let mut lh = Vec::new();
        let mut le = Vec::new();
        for &h in &cfg.fd_steps {
            let mut lap = 0.0;
            let mut y = x.clone();
            for k in 0..n {
                y[k] = x[k] + h;
                let up = bp.eval(&y);
                y[k] = x[k] - h;
                let dn = bp.eval(&y);
                y[k] = x[k];
                lap += (up - 2.0 * bp.eval(&x) + dn) / (h * h);
            }
            let err = (lap - exact).abs();
            fd_rows.push(vec![u(n), r(h), r(lap), r(exact), r(err)]);
            lh.push(h.ln());
            le.push(err.ln());
        }
        let (order, _) = fit_line(&lh, &le);
        orders.push(json!({ "n": n, "order": order }));
        checks.push(Check::le(format!("fd_order_deviation_n{n}"), (order - 2.0).abs(), cfg.tol.order));
    }
    o.csv("fd_laplacian.csv", &["n", "h", "fd_laplacian", "exact", "abs_error"], &fd_rows)?;

    // Newtonian identity by adaptive quadrature.
    let mut nw_rows = Vec::new();
    o.time("newtonian", |_| {
        for &n in dims {
            for &e in &cfg.eta_norms {
                let mut eta = vec![0.0; n];
                eta[0] = e;
                let rep = newtonian_identity_check(n, &eta, cfg.quad_tol)?;
                nw_rows.push(vec![u(n), r(e), r(rep.g_quadrature), r(rep.g_closed), r(rep.abs_error), r(rep.error_estimate)]);
                checks.push(Check::le(format!("newtonian_n{n}_eta{e}"), rep.abs_error, cfg.tol.newtonian));
            }
        }
        Ok(())
    })?;
    o.csv("newtonian.csv", &["n", "eta_norm", "g_quadrature", "g_closed", "abs_error", "error_estimate"], &nw_rows)?;

    let q_max = dims.iter().map(|&n| Exponent::critical(n).value()).fold(1.0, f64::max);
    let ineq = elementary_inequality_test(cfg.samples, q_max, cfg.seed);
    checks.push(Check::le("inequality_ratio_q_ge_1", ineq.max_ratio_q_ge_1, 1.0));
    checks.push(Check::le("inequality_ratio_q_lt_1", ineq.max_ratio_q_lt_1, 1.0));
    let details = json!({ "fd_orders": orders, "inequality": ineq, "alpha_n": dims.iter().map(|&n| alpha_n(n)).collect::<Vec<_>>() });
    Ok((checks, Vec::new(), details))
}

/// Discretized domain, hole center and mirror flags shared by grid experiments.
struct Setup {
    domain: Domain,
    xi0: Vec<f64>,
    mirror: Vec<bool>,
    mg: MultigridOptions,
}

impl Setup {
    fn new(cfg: &ExperimentConfig, center_ambient: &[f64]) -> Result<Setup> {
        let domain = cfg.base_domain()?;
        let xi0 = domain.to_reduced(center_ambient);
        let mut mirror = vec![false; domain.dim()];
        for &a in &cfg.mirror {
            if a >= domain.dim() {
                return Err(Error::InvalidArgument(format!("mirror axis {a} exceeds the grid dimension {}", domain.dim())));
            }
            if xi0[a] != 0.0 {
                return Err(Error::InvalidArgument(format!("mirror axis {a} needs the center on the plane x_{a} = 0")));
            }
            mirror[a] = true;
        }
        let mg = MultigridOptions { coarse_size: cfg.mg_coarse_size, smoothing_sweeps: cfg.mg_sweeps };
        Ok(Setup { domain, xi0, mirror, mg })
    }

    fn hole_spacing(&self, cfg: &ExperimentConfig, eps: f64) -> f64 {
        if cfg.h_min_factor > 0.0 {
            (cfg.h_min_factor * eps).min(cfg.h)
        } else {
            cfg.h
        }
    }

    fn spec(&self, cfg: &ExperimentConfig, eps: Option<f64>) -> GridSpec {
        let refinement = eps.filter(|_| cfg.h_min_factor > 0.0).map(|e| Refinement {
            center: self.xi0.clone(),
            h_min: self.hole_spacing(cfg, e),
            growth: cfg.growth,
        });
        GridSpec { h: cfg.h, refinement, mirror: self.mirror.clone() }
    }

    /// Values of ε inside the asymptotic regime, in input order, and the
    /// reasons for the others.
    fn regime(&self, cfg: &ExperimentConfig) -> (Vec<f64>, Vec<String>) {
        let clearance = self.domain.dist_to_boundary(&self.xi0);
        let mut keep = Vec::new();
        let mut skip = Vec::new();
        for &eps in &cfg.epsilon {
            let hs = self.hole_spacing(cfg, eps);
            if eps < cfg.min_hole_cells * hs * (1.0 - 1e-12) {
                skip.push(format!("epsilon {eps}: spans fewer than {} cells of size {hs}", cfg.min_hole_cells));
            } else if eps > cfg.eps_max_fraction * clearance {
                skip.push(format!("epsilon {eps}: above {} of dist(xi0, boundary) = {clearance}", cfg.eps_max_fraction));
            } else {
                keep.push(eps);
            }
        }
        (keep, skip)
    }

    fn punctured(&self, cfg: &ExperimentConfig, eps: f64) -> Result<(PuncturedDomain, FvSystem)> {
        let pd = puncture(&self.domain, self.xi0.clone(), eps)?;
        let grid = std::sync::Arc::new(Grid::build(&self.domain, Some(&pd), &self.spec(cfg, Some(eps)))?);
        let sys = FvSystem::assemble_with(grid, MaskSelector::Punctured, self.mg)?;
        Ok((pd, sys))
    }

    fn base(&self, cfg: &ExperimentConfig) -> Result<FvSystem> {
        let grid = std::sync::Arc::new(Grid::build(&self.domain, None, &self.spec(cfg, None))?);
        FvSystem::assemble_with(grid, MaskSelector::Base, self.mg)
    }

    fn reduction(&self, cfg: &ExperimentConfig, pd: PuncturedDomain, d: f64, eta: &[f64]) -> Result<ReductionConfig> {
        let mut rc = ReductionConfig::new(pd, cfg.coefficient_field(), cfg.group, d, eta.to_vec())?;
        rc.linear_tol = cfg.linear_tol;
        rc.method = cfg.correction_method;
        Ok(rc)
    }
}

fn greens(cfg: &ExperimentConfig, o: &mut Output) -> Outcome {
    let s = Setup::new(cfg, &cfg.pole)?;
    if !s.domain.contains(&s.xi0) {
        return Err(Error::InvalidArgument(format!("pole {:?} is not inside the domain", cfg.pole)));
    }
    let (sys, rp) = o.time("greens", |_| {
        let sys = s.base(cfg)?;
        let rp = greens_regular_part(&sys, &s.xi0, cfg.linear_tol)?;
        Ok((sys, rp))
    })?;
    o.field("regular_part", &rp.field)?;
    let mut checks = Vec::new();
    let grid = &sys.grid;
    let mut details = json!({ "unknowns": sys.len(), "robin": rp.robin, "grid_dims": grid.dims });
    if cfg.shape == ShapeSpec::Ball {
        let n = cfg.n as f64;
        let rad = cfg.radius;
        let unit = |x: &[f64]| -> Vec<f64> { x.iter().zip(&cfg.center).map(|(a, c)| (a - c) / rad).collect() };
        let y = unit(&cfg.pole);
        let exact = |x: &[f64]| rad.powf(2.0 - n) * ball_regular_part(&unit(x), &y);
        let mut sup: f64 = 0.0;
        let mut x = vec![0.0; grid.dim()];
        let mut rows = Vec::new();
        for i in 0..sys.len() {
            sys.point(i, &mut x);
            let xa = grid.ambient(&x);
            let e = (rp.field.values[sys.nodes[i]] - exact(&xa)).abs();
            sup = sup.max(e);
            if cfg.write_fields {
                let mut row: Vec<String> = x.iter().map(|v| r(*v)).collect();
                row.push(r(e));
                rows.push(row);
            }
        }
        if cfg.write_fields {
            let mut header: Vec<String> = (0..grid.dim()).map(|k| format!("x{k}")).collect();
            header.push("abs_error".into());
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            o.csv("regular_part_error.csv", &header, &rows)?;
        }
        let robin_exact = exact(&cfg.pole);
        checks.push(Check::le("sup_error", sup, cfg.tol.green));
        checks.push(Check::le("robin_error", (rp.robin - robin_exact).abs(), cfg.tol.green));
        details["sup_error"] = json!(sup);
        details["robin_exact"] = json!(robin_exact);
    } else {
        checks.push(Check::skipped("sup_error", "closed-form regular part is available on balls only"));
    }
    Ok((checks, Vec::new(), details))
}

fn project_sweep(cfg: &ExperimentConfig, o: &mut Output) -> Outcome {
    let s = Setup::new(cfg, &cfg.xi0)?;
    let (eps_list, skipped) = s.regime(cfg);
    let eta_grid = s.domain.to_reduced(&cfg.eta);
    let nf = cfg.n as f64;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (k, &eps) in eps_list.iter().enumerate() {
        let (pd, punct) = s.punctured(cfg, eps)?;
        let base = FvSystem::assemble_with(punct.grid.clone(), MaskSelector::Base, s.mg)?;
        let delta = cfg.d * eps.powf((nf - 2.0) / (nf - 1.0));
        let xi: Vec<f64> = cfg.xi0.iter().zip(&cfg.eta).map(|(a, e)| a + delta * e).collect();
        let params = BubbleParams::new(cfg.n, delta, xi)?;
        let (v, rep) = o.time(format!("project eps={eps}"), |_| {
            let v = project(&punct, &params, cfg.linear_tol)?;
            let rep = remainder_report(&punct, &base, &pd, cfg.d, &eta_grid, cfg.remainder_step, cfg.collar_cells, cfg.linear_tol)?;
            Ok((v, rep))
        })?;
        o.field(&format!("projection_{k}"), &punct.to_field(&v))?;
        let dxi = rep.ratio_dxi.iter().copied().fold(0.0, f64::max);
        rows.push(vec![
            r(eps),
            r(delta),
            u(punct.len()),
            r(v.iter().copied().fold(0.0, f64::max)),
            r(rep.ratio),
            r(rep.ratio_ddelta),
            r(dxi),
            r(dxi * delta),
            b(rep.regime_ok),
        ]);
        let finite = rep.ratio.is_finite() && rep.ratio_ddelta.is_finite() && dxi.is_finite();
        checks.push(Check::le(format!("remainder_ratios_finite_eps{eps}"), if finite { 0.0 } else { 1.0 }, 0.0));
    }
    o.csv(
        "projection.csv",
        &["eps", "delta", "unknowns", "max_projection", "remainder_ratio", "ratio_ddelta", "ratio_dxi", "ratio_dxi_scaled", "regime_ok"],
        &rows,
    )?;
    if eps_list.is_empty() {
        checks.push(Check::skipped("remainder_ratios", "no epsilon in the asymptotic regime"));
    }
    Ok((checks, skipped, json!({ "evaluated": eps_list })))
}

fn correction_sweep(cfg: &ExperimentConfig, o: &mut Output) -> Outcome {
    let s = Setup::new(cfg, &cfg.xi0)?;
    let (eps_list, skipped) = s.regime(cfg);
    let mut rows = Vec::new();
    let mut pts = Vec::new();
    for &eps in &eps_list {
        let (pd, sys) = s.punctured(cfg, eps)?;
        let rc = s.reduction(cfg, pd, cfg.d, &cfg.eta)?;
        let red = o.time(format!("correction eps={eps}"), |_| {
            solve_correction(&rc, &sys, cfg.correction_tol, cfg.correction_max_iter)
        })?;
        let c = &red.correction;
        rows.push(vec![
            r(eps),
            r(rc.delta()),
            u(sys.len()),
            r(c.phi_norm),
            r(c.v_norm),
            u(c.iterations),
            u(c.inner_iterations),
            r(c.kappa),
            r(c.orthogonality),
            r(c.orthogonal_residual),
            r(c.gram_condition),
        ]);
        pts.push((eps, c.phi_norm));
    }
    o.csv(
        "correction.csv",
        &[
            "eps",
            "delta",
            "unknowns",
            "phi_norm",
            "v_norm",
            "iterations",
            "inner_iterations",
            "kappa",
            "orthogonality",
            "orthogonal_residual",
            "gram_condition",
        ],
        &rows,
    )?;
    let target = (cfg.n as f64 - 2.0) / (cfg.n as f64 - 1.0);
    let mut checks = Vec::new();
    let mut details = json!({ "target_slope": target, "evaluated": eps_list });
    if pts.len() >= 4 {
        let lx: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
        let ly: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
        let (slope, intercept) = fit_line(&lx, &ly);
        let span = pts.iter().map(|p| p.0).fold(0.0, f64::max) / pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        checks.push(Check::ge("eps_span", span, 10.0 * (1.0 - 1e-9)));
        checks.push(Check::le("slope_rel_error", (slope - target).abs() / target, cfg.tol.slope));
        details["slope"] = json!(slope);
        details["intercept"] = json!(intercept);
        details["eps_span"] = json!(span);
    } else {
        checks.push(Check::skipped("slope_rel_error", format!("{} epsilon values in the regime, need 4", pts.len())));
    }
    Ok((checks, skipped, details))
}

/// Coefficients of the limit profile; for `n = 3` the Robin value is taken
/// from the config or solved on the unpunctured grid.
fn coefficients(cfg: &ExperimentConfig, o: &mut Output) -> Result<ReducedCoefficients> {
    let q = cfg.coefficient_field();
    let robin = match (cfg.n, cfg.robin) {
        (3, None) => {
            let s = Setup::new(cfg, &cfg.xi0)?;
            let sys = s.base(cfg)?;
            Some(o.time("robin", |_| greens_regular_part(&sys, &s.xi0, cfg.linear_tol.min(1e-10)))?.robin)
        }
        (3, r) => r,
        _ => None,
    };
    let c = compute_coefficients(cfg.n, &q, &cfg.xi0, robin, cfg.quad_tol)?;
    o.json("coefficients.json", &c)?;
    Ok(c)
}

fn reduced_energy_sweep(cfg: &ExperimentConfig, o: &mut Output) -> Outcome {
    let s = Setup::new(cfg, &cfg.xi0)?;
    let (eps_list, skipped) = s.regime(cfg);
    let c = coefficients(cfg, o)?;
    let mut points = vec![cfg.eta.clone()];
    if cfg.flip {
        points.push(cfg.eta.iter().map(|v| -v).collect());
    }
    let mut sweeps: Vec<Vec<(f64, f64)>> = vec![Vec::new(); points.len()];
    let mut rows = Vec::new();
    for &eps in &eps_list {
        let (pd, sys) = s.punctured(cfg, eps)?;
        for (k, eta) in points.iter().enumerate() {
            let rc = s.reduction(cfg, pd.clone(), cfg.d, eta)?;
            let (re, _) = o.time(format!("energy point={k} eps={eps}"), |_| {
                reduced_energy(&rc, &sys, cfg.correction_tol, cfg.correction_max_iter)
            })?;
            let scaled = (re.value - c.c0) / eps.powf(c.exponent());
            rows.push(vec![
                u(k),
                r(cfg.d),
                r(norm(eta) * eta.iter().copied().find(|v| *v != 0.0).map_or(1.0, f64::signum)),
                r(eps),
                r(re.delta),
                u(sys.len()),
                r(re.value),
                r(scaled),
                r(re.correction.phi_norm),
                u(re.correction.iterations),
            ]);
            sweeps[k].push((eps, re.value));
        }
    }
    o.csv(
        "energy.csv",
        &["point", "d", "eta_signed_norm", "eps", "delta", "unknowns", "energy", "scaled", "phi_norm", "iterations"],
        &rows,
    )?;
    let need = 4.max(cfg.richardson_order + 1);
    let mut checks = Vec::new();
    let mut reports = Vec::new();
    if eps_list.len() < need {
        checks.push(Check::skipped("expansion_rel_error", format!("{} epsilon values in the regime, need {need}", eps_list.len())));
        return Ok((checks, skipped, json!({ "coefficients": c })));
    }
    let mut ext_rows = Vec::new();
    for (k, eta) in points.iter().enumerate() {
        let rep = expansion_validation(&c, cfg.d, eta, &sweeps[k], cfg.richardson_order)?;
        for (order, v) in rep.extrapolants.iter().enumerate() {
            ext_rows.push(vec![u(k), u(order), r(*v), r(rep.target), r((v - rep.target).abs() / rep.target.abs())]);
        }
        checks.push(Check::le(format!("expansion_rel_error_point{k}"), rep.rel_error, cfg.tol.expansion));
        reports.push(rep);
    }
    o.csv("extrapolation.csv", &["point", "order", "extrapolant", "target", "rel_error"], &ext_rows)?;
    let mut details = json!({ "coefficients": c, "expansions": reports });
    if cfg.flip {
        let f = flip_check(&c, cfg.d, &cfg.eta, reports[0].limit, reports[1].limit)?;
        checks.push(Check::le("flip_even_rel_error", f.rel_error, cfg.tol.expansion));
        let odd = (f.odd_measured - f.odd_target).abs() / f.odd_target.abs().max(f.even_target.abs() * 1e-12);
        checks.push(Check::le("flip_odd_rel_error", odd, cfg.tol.expansion));
        details["flip"] = json!(f);
    }
    Ok((checks, skipped, details))
}

fn landscape(cfg: &ExperimentConfig, o: &mut Output) -> Outcome {
    let c = coefficients(cfg, o)?;
    let scan = o.time("scan", |_| landscape_scan(&c, cfg.d_range, cfg.eta_range, cfg.scan_points))?;
    let rows: Vec<Vec<String>> = scan.samples.iter().map(|p| vec![r(p.d), r(p.s), r(p.value)]).collect();
    o.csv("landscape.csv", &["d", "s", "value"], &rows)?;
    let mut checks = Vec::new();
    let mut details = json!({ "scan_extremum": { "d": scan.d, "eta": scan.eta, "value": scan.value, "kind": scan.kind, "resolution": scan.resolution } });
    match critical_point(&c) {
        Ok(cp) => {
            let d_res = (cfg.d_range.1 - cfg.d_range.0) / (cfg.scan_points - 1) as f64;
            checks.push(Check::le("scan_eta_offset", dist(&scan.eta, &cp.eta0), 2.0 * scan.resolution));
            checks.push(Check::le("scan_d_offset", (scan.d - cp.d0).abs(), 2.0 * d_res));
            details["critical_point"] = json!(cp);
        }
        Err(e) => checks.push(Check::skipped("scan_locates_critical_point", e.to_string())),
    }
    Ok((checks, Vec::new(), details))
}

fn critical(cfg: &ExperimentConfig, o: &mut Output) -> Outcome {
    let c = coefficients(cfg, o)?;
    let cp = critical_point(&c)?;
    let mut rows = vec![vec!["d".to_string(), r(cp.d0)]];
    for (k, e) in cp.eta0.iter().enumerate() {
        rows.push(vec![format!("eta{k}"), r(*e)]);
    }
    o.csv("critical_point.csv", &["coordinate", "value"], &rows)?;
    let min_eig = cp.hessian_eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let checks = vec![
        Check::le("gradient_norm", cp.grad_norm, cfg.tol.gradient),
        Check::le("gradient_norm_fd", cp.grad_norm_fd, cfg.tol.gradient_fd),
        Check::ge("min_abs_hessian_eigenvalue", min_eig, cfg.tol.hessian),
    ];
    Ok((checks, Vec::new(), json!({ "coefficients": c, "critical_point": cp })))
}

fn newton_continuation(cfg: &ExperimentConfig, o: &mut Output) -> Outcome {
    let s = Setup::new(cfg, &cfg.xi0)?;
    let (eps_list, skipped) = s.regime(cfg);
    let (d0, eta0, coeffs) = match cfg.newton_start {
        StartSpec::Critical => {
            let c = coefficients(cfg, o)?;
            let cp = critical_point(&c)?;
            (cp.d0, cp.eta0.clone(), Some(c))
        }
        StartSpec::Given => (cfg.d, cfg.eta.clone(), None),
    };
    let nf = cfg.n as f64;
    let p = Exponent::critical(cfg.n).value();
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    let mut pts = Vec::new();
    for (k, &eps) in eps_list.iter().enumerate() {
        let (pd, sys) = s.punctured(cfg, eps)?;
        let rc = s.reduction(cfg, pd, d0, &eta0)?;
        let delta = rc.delta();
        let result = o.time(format!("newton eps={eps}"), |_| {
            let red = solve_correction(&rc, &sys, cfg.correction_tol, cfg.correction_max_iter)?;
            let u0: Vec<f64> = red.correction.v.iter().zip(&red.correction.phi).map(|(a, b)| a + b).collect();
            match newton_solve(&sys, &red.q, &u0, p, cfg.newton_tol, cfg.newton_max_iter) {
                Ok(nr) => Ok(Ok(nr)),
                Err(e @ (Error::NoConvergence { .. } | Error::BasinEscape(_))) => Ok(Err(e)),
                Err(e) => Err(e),
            }
        })?;
        match result {
            Ok(nr) => {
                let peak_dist = dist(&nr.peak_at, &s.xi0);
                let bound = 2.0 * delta * norm(&eta0) + sys.grid.local_spacing(&nr.peak_at);
                checks.push(Check::le(format!("newton_residual_eps{eps}"), nr.residual, cfg.newton_tol));
                checks.push(Check::le(format!("peak_distance_eps{eps}"), peak_dist, bound));
                checks.push(Check::le(format!("positive_eps{eps}"), if nr.positive { 0.0 } else { 1.0 }, 0.0));
                let mut row = vec![r(eps), r(delta), u(sys.len()), u(nr.iterations), r(nr.residual), b(nr.positive), r(nr.peak), r(peak_dist), r(bound)];
                row.push(nr.history.iter().map(|h| fmt17(*h)).collect::<Vec<_>>().join(" "));
                rows.push(row);
                pts.push((delta, nr.peak));
                o.field(&format!("solution_{k}"), &sys.to_field(&nr.u))?;
            }
            Err(e) => {
                checks.push(Check::le(format!("newton_residual_eps{eps}"), f64::INFINITY, cfg.newton_tol).with_note(e.to_string()));
                rows.push(vec![r(eps), r(delta), u(sys.len()), u(0), r(f64::NAN), b(false), r(f64::NAN), r(f64::NAN), r(f64::NAN), String::new()]);
            }
        }
    }
    o.csv(
        "newton.csv",
        &["eps", "delta", "unknowns", "iterations", "residual", "positive", "peak", "peak_distance", "distance_bound", "history"],
        &rows,
    )?;
    let target = -(nf - 2.0) / 2.0;
    let mut details = json!({ "d0": d0, "eta0": eta0, "target_slope": target, "coefficients": coeffs });
    if pts.len() >= 3 {
        let lx: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
        let ly: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
        let (slope, _) = fit_line(&lx, &ly);
        checks.push(Check::le("peak_slope_rel_error", (slope - target).abs() / target.abs(), cfg.tol.slope));
        details["peak_slope"] = json!(slope);
    } else {
        checks.push(Check::skipped("peak_slope_rel_error", format!("{} converged epsilon values, need 3", pts.len())));
    }
    Ok((checks, skipped, details))
}

fn hopf(cfg: &ExperimentConfig, o: &mut Output) -> Outcome {
    let rep = o.time("hopf", |_| hopf_check(&cfg.algebras, cfg.pairs, cfg.transfer_samples, cfg.seed, cfg.hopf_scale, cfg.fd_step))?;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for a in &rep.algebras {
        let k = a.dim;
        rows.push(vec![
            u(k),
            u(a.pairs),
            r(a.norm_multiplicativity),
            r(a.conjugation),
            r(a.alternativity),
            r(a.associator),
            r(a.invariance),
            r(a.max_component_laplacian),
            r(a.dilation),
            r(a.transfer_half.residual),
            r(a.transfer_half.factor),
            r(a.transfer_one.residual),
            r(a.transfer_one.factor),
            r(a.transfer_half.chain_rule_error),
            r(a.transfer_half.power_mismatch.unwrap_or(f64::NAN)),
        ]);
        checks.push(Check::le(format!("norm_multiplicativity_k{k}"), a.norm_multiplicativity, cfg.tol.identity));
        checks.push(Check::le(format!("conjugation_k{k}"), a.conjugation, cfg.tol.identity));
        checks.push(Check::le(format!("alternativity_k{k}"), a.alternativity, cfg.tol.identity));
        checks.push(Check::le(format!("invariance_k{k}"), a.invariance, cfg.tol.identity));
        checks.push(Check::le(format!("component_laplacian_k{k}"), a.max_component_laplacian, 0.0));
        checks.push(Check::le(format!("dilation_k{k}"), a.dilation, cfg.tol.dilation));
        checks.push(Check::le(format!("transfer_residual_k{k}"), a.transfer_half.residual, cfg.tol.fd));
        checks.push(Check::le(format!("chain_rule_k{k}"), a.transfer_half.chain_rule_error, cfg.tol.fd));
        if let Some(pm) = a.transfer_half.power_mismatch {
            checks.push(Check::le(format!("power_transfer_k{k}"), pm, cfg.tol.fd));
        }
        checks.push(Check::ge(format!("transfer_residual_unit_scale_k{k}"), a.transfer_one.residual, cfg.tol.separation));
        let ratio = a.transfer_one.factor / a.transfer_half.factor;
        let expected = 1.0 / cfg.hopf_scale;
        checks.push(Check::le(format!("transfer_factor_ratio_k{k}"), (ratio - expected).abs() / expected, cfg.tol.slope));
    }
    checks.push(Check::le("exponents_agree", if rep.exponents_agree { 0.0 } else { 1.0 }, 0.0));
    o.csv(
        "hopf.csv",
        &[
            "dim",
            "pairs",
            "norm_multiplicativity",
            "conjugation",
            "alternativity",
            "associator",
            "invariance",
            "component_laplacian",
            "dilation",
            "transfer_residual",
            "transfer_factor",
            "transfer_residual_unit_scale",
            "transfer_factor_unit_scale",
            "chain_rule_error",
            "power_mismatch",
        ],
        &rows,
    )?;
    Ok((checks, Vec::new(), serde_json::to_value(&rep)?))
}

fn meridian(cfg: &ExperimentConfig, o: &mut Output) -> Outcome {
    let mut g = stream(cfg.seed, 0);
    let hi = 1.0;
    let zs: Vec<[f64; 2]> = (0..cfg.samples)
        .map(|_| [uniform(&mut g, cfg.margin, hi), uniform(&mut g, cfg.margin, hi)])
        .collect();
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let ks: Vec<usize> = (1..=cfg.k_max).collect();
    let mut idx = 1u64;
    for &k1 in &ks {
        for &k2 in &ks {
            for &m in &ks {
                let mp = MeridianProblem::new(k1, k2, m)?;
                let generic = test_function(cfg.seed, idx, 2);
                idx += 1;
                let mf = m as f64;
                let harmonic = move |x: &[f64]| x[0] * x[0] - x[1] * x[1] / mf;
                let rg = meridian_residual(&mp, &generic, &zs, cfg.margin, cfg.fd_step)?.max_residual;
                let rh = meridian_residual(&mp, &harmonic, &zs, cfg.margin, cfg.fd_step)?.max_residual;
                let matching = k1 == k2 && k2 == m;
                rows.push(vec![u(k1), u(k2), u(m), b(matching), r(rg), r(rh)]);
                let name = format!("k{k1}_{k2}_m{m}");
                if matching {
                    checks.push(Check::le(format!("residual_{name}"), rg, cfg.tol.fd));
                    checks.push(Check::le(format!("residual_linear_{name}"), rh, cfg.tol.fd));
                } else {
                    checks.push(Check::ge(format!("residual_{name}"), rg, cfg.tol.separation));
                    checks.push(Check::ge(format!("residual_linear_{name}"), rh, cfg.tol.separation));
                }
            }
        }
    }
    o.csv("meridian.csv", &["k1", "k2", "m", "matching", "residual", "residual_linear"], &rows)?;
    Ok((checks, Vec::new(), json!({ "samples": zs.len(), "margin": cfg.margin })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn tmp(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("punctum-runner-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        d
    }

    #[test]
    fn fit_line_recovers_slope() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v - 2.0).collect();
        let (s, c) = fit_line(&x, &y);
        assert!((s - 0.5).abs() < 1e-14 && (c + 2.0).abs() < 1e-14);
    }

    #[test]
    fn hopf_quaternions_pass() {
        let cfg = parse_config("experiment = hopf-check\nalgebras = 4\npairs = 2000\ntransfer_samples = 40\n").unwrap();
        let dir = tmp("hopf");
        let m = run(&cfg, &dir).unwrap();
        assert!(m.pass);
        assert!(m.timings.is_none());
        assert!(m.files.iter().any(|f| f.name == "hopf.csv"));
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn same_config_same_manifest() {
        let cfg = parse_config("experiment = critical-point\nn = 5\nq = tilt\nq_kappa = 2\n").unwrap();
        let a = tmp("det-a");
        let b = tmp("det-b");
        run(&cfg, &a).unwrap();
        run(&cfg, &b).unwrap();
        assert_eq!(fs::read(a.join(MANIFEST)).unwrap(), fs::read(b.join(MANIFEST)).unwrap());
        fs::remove_dir_all(a).unwrap();
        fs::remove_dir_all(b).unwrap();
    }

    #[test]
    fn failure_leaves_marker() {
        // The pole is off the mirror plane, which only the run detects.
        let cfg = parse_config("experiment = greens\nmirror = 0\npole = 0.2,0,0\nh = 1/8\n").unwrap();
        let dir = tmp("fail");
        assert!(run(&cfg, &dir).is_err());
        assert!(dir.join(FAILURE_MARKER).exists());
        fs::remove_dir_all(dir).unwrap();
    }
}
