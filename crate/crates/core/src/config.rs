//! Flat `key = value` experiment configuration with `#` comments.
//!
//! Every key has a documented default; parsing reports all problems at once,
//! and unknown keys are errors with a nearest-key suggestion.

use crate::bubbles::CoefficientField;
use crate::geometry::{symmetry_reduce, Domain, SymmetryGroup};
use crate::reduction::CorrectionMethod;
use crate::{Error, Result};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ExperimentKind {
    VerifyBubble,
    Greens,
    Project,
    CorrectionSweep,
    ReducedEnergySweep,
    Landscape,
    CriticalPoint,
    NewtonContinuation,
    HopfCheck,
    MeridianCheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 10] = [
        ExperimentKind::VerifyBubble,
        ExperimentKind::Greens,
        ExperimentKind::Project,
        ExperimentKind::CorrectionSweep,
        ExperimentKind::ReducedEnergySweep,
        ExperimentKind::Landscape,
        ExperimentKind::CriticalPoint,
        ExperimentKind::NewtonContinuation,
        ExperimentKind::HopfCheck,
        ExperimentKind::MeridianCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::VerifyBubble => "verify-bubble",
            ExperimentKind::Greens => "greens",
            ExperimentKind::Project => "project",
            ExperimentKind::CorrectionSweep => "correction-sweep",
            ExperimentKind::ReducedEnergySweep => "reduced-energy-sweep",
            ExperimentKind::Landscape => "landscape",
            ExperimentKind::CriticalPoint => "critical-point",
            ExperimentKind::NewtonContinuation => "newton-continuation",
            ExperimentKind::HopfCheck => "hopf-check",
            ExperimentKind::MeridianCheck => "meridian-check",
        }
    }

    /// Experiments that discretize a punctured domain.
    pub fn needs_puncture(self) -> bool {
        matches!(
            self,
            ExperimentKind::Project
                | ExperimentKind::CorrectionSweep
                | ExperimentKind::ReducedEnergySweep
                | ExperimentKind::NewtonContinuation
        )
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ExperimentKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown experiment '{s}'"))
    }
}

pub struct KeySpec {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

macro_rules! keys {
    ($(($name:literal, $default:literal, $help:literal)),* $(,)?) => {
        pub const KEYS: &[KeySpec] = &[$(KeySpec { name: $name, default: $default, help: $help }),*];
    };
}

keys! {
    ("experiment", "", "experiment kind: verify-bubble, greens, project, correction-sweep, reduced-energy-sweep, landscape, critical-point, newton-continuation, hopf-check, meridian-check"),
    ("seed", "0", "64-bit seed of all random sampling"),
    ("n", "3", "ambient dimension"),
    ("domain", "ball", "base domain: ball, box or annulus"),
    ("center", "", "center of ball or annulus (default: origin)"),
    ("radius", "1", "radius of the ball, outer radius of the annulus"),
    ("inner_radius", "0.5", "inner radius of the annulus"),
    ("lo", "", "lower corner of the box"),
    ("hi", "", "upper corner of the box"),
    ("group", "trivial", "symmetry group: trivial or O(m), rotating the last m coordinates"),
    ("meridian", "false", "discretize the O(m)-reduced meridian domain"),
    ("mirror", "", "grid axes (indices) that are mirror planes, e.g. 0,1,2"),
    ("q", "constant", "weight Q: constant, inverse-half-norm, affine or tilt"),
    ("q0", "1", "constant value of Q, or Q(xi0) for affine and tilt"),
    ("q_gradient", "", "gradient of the affine Q"),
    ("q_kappa", "0", "tilt rate: Q = q0 (1 + k t + k^2 t^2/2), t the first coordinate"),
    ("xi0", "", "center of the hole, ambient coordinates (default: origin)"),
    ("epsilon", "", "hole radii"),
    ("h", "1/32", "background grid spacing"),
    ("h_min_factor", "0.25", "finest spacing at the hole as a fraction of epsilon; 0 disables grading"),
    ("growth", "1.1", "geometric growth of graded spacing away from the hole"),
    ("min_hole_cells", "4", "regime: epsilon must span at least this many local cells"),
    ("eps_max_fraction", "0.1", "regime: epsilon at most this fraction of dist(xi0, boundary)"),
    ("mg_coarse_size", "600", "multigrid: unknowns on the coarsest level"),
    ("mg_sweeps", "1", "multigrid: symmetric Gauss-Seidel sweeps per level"),
    ("d", "1", "bubble scale parameter, delta = d epsilon^((n-2)/(n-1))"),
    ("eta", "", "bubble drift, ambient coordinates (default: zero)"),
    ("flip", "false", "also run with eta replaced by -eta"),
    ("correction_method", "newton", "correction iteration: newton or frozen"),
    ("linear_tol", "1e-11", "relative tolerance of linear solves"),
    ("correction_tol", "1e-10", "relative update tolerance of the correction iteration"),
    ("correction_max_iter", "50", "iteration budget of the correction"),
    ("richardson_order", "2", "number of correction terms eliminated by extrapolation"),
    ("newton_tol", "1e-9", "relative residual tolerance of Newton continuation"),
    ("newton_max_iter", "8", "Newton iteration budget per epsilon"),
    ("newton_start", "critical", "starting (d, eta): critical (closed form) or given"),
    ("quad_tol", "1e-10", "absolute tolerance of adaptive quadrature"),
    ("remainder_step", "1e-4", "relative step of parameter differences (times delta)"),
    ("collar_cells", "2", "cells excluded next to the boundary in remainder ratios"),
    ("samples", "10000", "random samples for pointwise identities"),
    ("dimensions", "3,4,5,6", "dimensions for bubble and Newtonian checks"),
    ("fd_steps", "0.02,0.01,0.005", "finite-difference steps of the discrete-Laplacian study"),
    ("eta_norms", "0,1,2", "values of |eta| for the Newtonian identity"),
    ("pole", "", "pole of the Green's function, ambient coordinates (default: origin)"),
    ("robin", "", "H(xi0, xi0) for n = 3; solved on the grid when absent"),
    ("d_range", "0.1,3", "landscape scan range of d"),
    ("eta_range", "-2,2", "landscape scan range of the eta coordinate"),
    ("scan_points", "201", "landscape scan points per axis"),
    ("algebras", "1,2,4,8", "algebra dimensions for hopf-check"),
    ("pairs", "100000", "random pairs per algebra"),
    ("transfer_samples", "200", "sample points of the transfer identity"),
    ("hopf_scale", "0.5", "scale s of the Hopf map s (|z1|^2 - |z2|^2, 2 conj(z1) z2)"),
    ("fd_step", "1e-4", "central-difference step of pointwise derivative checks (scaled by |x| in the transfer identity)"),
    ("margin", "0.1", "distance of meridian samples from the axes"),
    ("k_max", "3", "meridian-check block dimensions range over 1..k_max"),
    ("write_fields", "true", "write solution fields (CSV and binary)"),
    ("record_timings", "false", "record wall-clock timings in the manifest (breaks bitwise determinism)"),
    ("tol_identity", "1e-12", "threshold: relative closed-form identity residuals"),
    ("tol_order", "0.2", "threshold: deviation of observed convergence order from 2"),
    ("tol_green", "1e-3", "threshold: Green's regular part error"),
    ("tol_newtonian", "1e-6", "threshold: Newtonian identity error"),
    ("tol_slope", "0.1", "threshold: relative deviation of fitted slopes"),
    ("tol_expansion", "0.05", "threshold: relative error of the extrapolated expansion"),
    ("tol_gradient", "1e-10", "threshold: analytic gradient norm at the critical point"),
    ("tol_gradient_fd", "1e-6", "threshold: finite-difference gradient norm at the critical point"),
    ("tol_hessian", "1e-8", "threshold: smallest Hessian eigenvalue magnitude"),
    ("tol_dilation", "1e-10", "threshold: relative conformality error of the Hopf map"),
    ("tol_fd", "1e-5", "threshold: finite-difference identities"),
    ("tol_separation", "1e-3", "threshold: smallest residual that counts as failure of an identity"),
}

pub fn key_spec(name: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.name == name)
}

/// One line per key: name, default and description.
pub fn help_text() -> String {
    let mut s = String::new();
    for k in KEYS {
        let def = if k.default.is_empty() { "-" } else { k.default };
        s.push_str(&format!("{:<20} {:<16} {}\n", k.name, def, k.help));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum ShapeSpec {
    Ball,
    Box,
    Annulus,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum QSpec {
    Constant,
    InverseHalfNorm,
    Affine,
    Tilt,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum StartSpec {
    Critical,
    Given,
}

#[derive(Clone, Debug, Serialize)]
pub struct Thresholds {
    pub identity: f64,
    pub order: f64,
    pub green: f64,
    pub newtonian: f64,
    pub slope: f64,
    pub expansion: f64,
    pub gradient: f64,
    pub gradient_fd: f64,
    pub hessian: f64,
    pub dilation: f64,
    pub fd: f64,
    pub separation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub n: usize,
    pub shape: ShapeSpec,
    pub center: Vec<f64>,
    pub radius: f64,
    pub inner_radius: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub group: SymmetryGroup,
    pub meridian: bool,
    pub mirror: Vec<usize>,
    pub q: QSpec,
    pub q0: f64,
    pub q_gradient: Vec<f64>,
    pub q_kappa: f64,
    pub xi0: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub h: f64,
    pub h_min_factor: f64,
    pub growth: f64,
    pub min_hole_cells: f64,
    pub eps_max_fraction: f64,
    pub mg_coarse_size: usize,
    pub mg_sweeps: usize,
    pub d: f64,
    pub eta: Vec<f64>,
    pub flip: bool,
    pub correction_method: CorrectionMethod,
    pub linear_tol: f64,
    pub correction_tol: f64,
    pub correction_max_iter: usize,
    pub richardson_order: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub newton_start: StartSpec,
    pub quad_tol: f64,
    pub remainder_step: f64,
    pub collar_cells: f64,
    pub samples: usize,
    pub dimensions: Vec<usize>,
    pub fd_steps: Vec<f64>,
    pub eta_norms: Vec<f64>,
    pub pole: Vec<f64>,
    pub robin: Option<f64>,
    pub d_range: (f64, f64),
    pub eta_range: (f64, f64),
    pub scan_points: usize,
    pub algebras: Vec<usize>,
    pub pairs: usize,
    pub transfer_samples: usize,
    pub hopf_scale: f64,
    pub fd_step: f64,
    pub margin: f64,
    pub k_max: usize,
    pub write_fields: bool,
    pub record_timings: bool,
    pub tol: Thresholds,
    /// Effective settings, one `key = value` per line, sorted by key.
    pub canonical: String,
}

struct Reader {
    raw: BTreeMap<String, String>,
    errors: Vec<String>,
}

fn parse_scalar<T: FromStr>(s: &str) -> Option<T> {
    s.trim().parse().ok()
}

/// Reals also accept `a/b`.
fn parse_real(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        let (a, b): (f64, f64) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
        return (b != 0.0).then_some(a / b).filter(|v| v.is_finite());
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

impl Reader {
    fn value(&self, key: &str) -> &str {
        self.raw.get(key).map(String::as_str).unwrap_or_else(|| key_spec(key).map(|k| k.default).unwrap_or(""))
    }

    fn given(&self, key: &str) -> bool {
        self.raw.contains_key(key)
    }

    fn real(&mut self, key: &str) -> f64 {
        let v = self.value(key).to_string();
        parse_real(&v).unwrap_or_else(|| {
            self.errors.push(format!("{key}: '{v}' is not a real number"));
            f64::NAN
        })
    }

    fn positive(&mut self, key: &str) -> f64 {
        let v = self.real(key);
        if !(v > 0.0) && !v.is_nan() {
            self.errors.push(format!("{key}: {v} must be positive"));
        }
        v
    }

    fn uint(&mut self, key: &str) -> usize {
        let v = self.value(key).to_string();
        parse_scalar::<usize>(&v).unwrap_or_else(|| {
            self.errors.push(format!("{key}: '{v}' is not a nonnegative integer"));
            0
        })
    }

    fn boolean(&mut self, key: &str) -> bool {
        match self.value(key).trim() {
            "true" | "yes" | "1" => true,
            "false" | "no" | "0" => false,
            v => {
                let v = v.to_string();
                self.errors.push(format!("{key}: '{v}' is not a boolean"));
                false
            }
        }
    }

    fn reals(&mut self, key: &str) -> Vec<f64> {
        let v = self.value(key).to_string();
        if v.trim().is_empty() {
            return Vec::new();
        }
        v.split(',')
            .enumerate()
            .filter_map(|(i, s)| {
                let r = parse_real(s);
                if r.is_none() {
                    self.errors.push(format!("{key}: entry {} '{}' is not a real number", i + 1, s.trim()));
                }
                r
            })
            .collect()
    }

    fn uints(&mut self, key: &str) -> Vec<usize> {
        let v = self.value(key).to_string();
        if v.trim().is_empty() {
            return Vec::new();
        }
        v.split(',')
            .enumerate()
            .filter_map(|(i, s)| {
                let r = parse_scalar::<usize>(s);
                if r.is_none() {
                    self.errors.push(format!("{key}: entry {} '{}' is not a nonnegative integer", i + 1, s.trim()));
                }
                r
            })
            .collect()
    }

    fn pair(&mut self, key: &str) -> (f64, f64) {
        let v = self.reals(key);
        if v.len() != 2 {
            self.errors.push(format!("{key}: expected two values, got {}", v.len()));
            return (f64::NAN, f64::NAN);
        }
        if !(v[0] < v[1]) {
            self.errors.push(format!("{key}: range {} .. {} is empty", v[0], v[1]));
        }
        (v[0], v[1])
    }

    fn point(&mut self, key: &str, n: usize) -> Vec<f64> {
        let v = self.reals(key);
        if v.is_empty() && !self.given(key) {
            return vec![0.0; n];
        }
        if v.len() != n {
            self.errors.push(format!("{key}: expected {n} coordinates, got {}", v.len()));
            return vec![0.0; n];
        }
        v
    }
}

fn suggestion(key: &str) -> Option<&'static str> {
    KEYS.iter()
        .map(|k| (strsim::levenshtein(key, k.name), k.name))
        .filter(|(d, name)| *d <= 3.max(name.len() / 3))
        .min()
        .map(|(_, n)| n)
}

/// Parse and validate a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_for(text, None)
}

/// As [`parse_config`]; `kind`, when given, supplies a missing `experiment`
/// key and must agree with a present one.
pub fn parse_config_for(text: &str, kind: Option<ExperimentKind>) -> Result<ExperimentConfig> {
    let mut errors = Vec::new();
    let mut raw = BTreeMap::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            errors.push(format!("line {}: expected 'key = value'", ln + 1));
            continue;
        };
        let (k, v) = (k.trim(), v.trim());
        if key_spec(k).is_none() {
            match suggestion(k) {
                Some(s) => errors.push(format!("line {}: unknown key '{k}' (did you mean '{s}'?)", ln + 1)),
                None => errors.push(format!("line {}: unknown key '{k}'", ln + 1)),
            }
            continue;
        }
        // An empty value leaves the key at its default, as written for unset keys.
        if v.is_empty() {
            continue;
        }
        if raw.insert(k.to_string(), v.to_string()).is_some() {
            errors.push(format!("line {}: duplicate key '{k}'", ln + 1));
        }
    }
    let mut r = Reader { raw, errors };
    let requested = kind;
    let kind = if r.given("experiment") {
        match r.value("experiment").parse::<ExperimentKind>() {
            Ok(k) => {
                if let Some(want) = requested.filter(|w| *w != k) {
                    r.errors.push(format!("experiment: config is for {k}, but {want} was requested"));
                }
                Some(k)
            }
            Err(e) => {
                r.errors.push(format!("experiment: {e}"));
                None
            }
        }
    } else if let Some(k) = requested {
        r.raw.insert("experiment".into(), k.name().into());
        Some(k)
    } else {
        r.errors.push("experiment: required key missing".into());
        None
    };
    let seed = {
        let v = r.value("seed").to_string();
        parse_scalar::<u64>(&v).unwrap_or_else(|| {
            r.errors.push(format!("seed: '{v}' is not a 64-bit unsigned integer"));
            0
        })
    };
    let n = r.uint("n");
    if n < 2 {
        r.errors.push(format!("n: {n} must be at least 2"));
    }
    let shape = match r.value("domain").trim() {
        "ball" => ShapeSpec::Ball,
        "box" => ShapeSpec::Box,
        "annulus" => ShapeSpec::Annulus,
        v => {
            let v = v.to_string();
            r.errors.push(format!("domain: '{v}' is not ball, box or annulus"));
            ShapeSpec::Ball
        }
    };
    let center = r.point("center", n);
    let radius = r.positive("radius");
    let inner_radius = r.positive("inner_radius");
    let lo = r.reals("lo");
    let hi = r.reals("hi");
    if shape == ShapeSpec::Box && (lo.len() != n || hi.len() != n) {
        r.errors.push(format!("lo, hi: a box needs {n} coordinates in each corner"));
    }
    if shape == ShapeSpec::Annulus && !(inner_radius < radius) {
        r.errors.push(format!("inner_radius: {inner_radius} must be below radius {radius}"));
    }
    let group = {
        let v = r.value("group").trim().to_string();
        if v == "trivial" {
            SymmetryGroup::Trivial
        } else if let Some(m) = v.strip_prefix("O(").and_then(|s| s.strip_suffix(')')).and_then(|s| s.parse::<usize>().ok()) {
            if m < 2 || m > n {
                r.errors.push(format!("group: O({m}) needs 2 <= m <= n"));
            }
            SymmetryGroup::Orthogonal { m }
        } else {
            r.errors.push(format!("group: '{v}' is not trivial or O(m)"));
            SymmetryGroup::Trivial
        }
    };
    let meridian = r.boolean("meridian");
    if meridian && group == SymmetryGroup::Trivial {
        r.errors.push("meridian: the meridian reduction needs group = O(m)".into());
    }
    let mirror = r.uints("mirror");
    let q = match r.value("q").trim() {
        "constant" => QSpec::Constant,
        "inverse-half-norm" => QSpec::InverseHalfNorm,
        "affine" => QSpec::Affine,
        "tilt" => QSpec::Tilt,
        v => {
            let v = v.to_string();
            r.errors.push(format!("q: '{v}' is not constant, inverse-half-norm, affine or tilt"));
            QSpec::Constant
        }
    };
    let q0 = r.positive("q0");
    let q_gradient = r.reals("q_gradient");
    if q == QSpec::Affine && q_gradient.len() != n {
        r.errors.push(format!("q_gradient: affine Q needs {n} components, got {}", q_gradient.len()));
    }
    let q_kappa = r.real("q_kappa");
    let xi0 = r.point("xi0", n);
    let epsilon = r.reals("epsilon");
    for (i, e) in epsilon.iter().enumerate() {
        if !(*e > 0.0) {
            r.errors.push(format!("epsilon: entry {} ({e}) must be positive", i + 1));
        }
    }
    let h = r.positive("h");
    let h_min_factor = r.real("h_min_factor");
    if h_min_factor < 0.0 {
        r.errors.push(format!("h_min_factor: {h_min_factor} must be nonnegative"));
    }
    let growth = r.real("growth");
    if !(growth > 1.0) && !growth.is_nan() {
        r.errors.push(format!("growth: {growth} must exceed 1"));
    }
    let min_hole_cells = r.positive("min_hole_cells");
    let eps_max_fraction = r.positive("eps_max_fraction");
    let mg_coarse_size = r.uint("mg_coarse_size");
    if mg_coarse_size == 0 {
        r.errors.push("mg_coarse_size: must be positive".into());
    }
    let mg_sweeps = r.uint("mg_sweeps");
    if mg_sweeps == 0 {
        r.errors.push("mg_sweeps: must be positive".into());
    }
    let d = r.positive("d");
    let eta = r.point("eta", n);
    let flip = r.boolean("flip");
    let correction_method = match r.value("correction_method").trim() {
        "newton" => CorrectionMethod::Newton,
        "frozen" => CorrectionMethod::Frozen,
        v => {
            let v = v.to_string();
            r.errors.push(format!("correction_method: '{v}' is not newton or frozen"));
            CorrectionMethod::Newton
        }
    };
    let linear_tol = r.positive("linear_tol");
    let correction_tol = r.positive("correction_tol");
    let correction_max_iter = r.uint("correction_max_iter");
    let richardson_order = r.uint("richardson_order");
    let newton_tol = r.positive("newton_tol");
    let newton_max_iter = r.uint("newton_max_iter");
    let newton_start = match r.value("newton_start").trim() {
        "critical" => StartSpec::Critical,
        "given" => StartSpec::Given,
        v => {
            let v = v.to_string();
            r.errors.push(format!("newton_start: '{v}' is not critical or given"));
            StartSpec::Critical
        }
    };
    let quad_tol = r.positive("quad_tol");
    let remainder_step = r.positive("remainder_step");
    let collar_cells = r.positive("collar_cells");
    let samples = r.uint("samples");
    let dimensions = r.uints("dimensions");
    if dimensions.iter().any(|&k| k < 3) {
        r.errors.push("dimensions: every entry must be at least 3".into());
    }
    let fd_steps = r.reals("fd_steps");
    if fd_steps.iter().any(|&s| !(s > 0.0)) {
        r.errors.push("fd_steps: every entry must be positive".into());
    }
    let eta_norms = r.reals("eta_norms");
    if eta_norms.iter().any(|&s| s < 0.0) {
        r.errors.push("eta_norms: every entry must be nonnegative".into());
    }
    let pole = r.point("pole", n);
    let robin = if r.given("robin") { Some(r.positive("robin")) } else { None };
    let d_range = r.pair("d_range");
    if d_range.0 <= 0.0 {
        r.errors.push("d_range: lower end must be positive".into());
    }
    let eta_range = r.pair("eta_range");
    let scan_points = r.uint("scan_points");
    if scan_points < 3 {
        r.errors.push(format!("scan_points: {scan_points} must be at least 3"));
    }
    let algebras = r.uints("algebras");
    for a in &algebras {
        if ![1, 2, 4, 8].contains(a) {
            r.errors.push(format!("algebras: {a} is not 1, 2, 4 or 8"));
        }
    }
    let pairs = r.uint("pairs");
    let transfer_samples = r.uint("transfer_samples");
    let hopf_scale = r.positive("hopf_scale");
    let fd_step = r.positive("fd_step");
    let margin = r.positive("margin");
    let k_max = r.uint("k_max");
    if k_max < 2 {
        r.errors.push(format!("k_max: {k_max} must be at least 2"));
    }
    let write_fields = r.boolean("write_fields");
    let record_timings = r.boolean("record_timings");
    let tol = Thresholds {
        identity: r.positive("tol_identity"),
        order: r.positive("tol_order"),
        green: r.positive("tol_green"),
        newtonian: r.positive("tol_newtonian"),
        slope: r.positive("tol_slope"),
        expansion: r.positive("tol_expansion"),
        gradient: r.positive("tol_gradient"),
        gradient_fd: r.positive("tol_gradient_fd"),
        hessian: r.positive("tol_hessian"),
        dilation: r.positive("tol_dilation"),
        fd: r.positive("tol_fd"),
        separation: r.positive("tol_separation"),
    };
    if let Some(kind) = kind {
        if kind.needs_puncture() && epsilon.is_empty() {
            r.errors.push(format!("epsilon: required by {kind}"));
        }
        if matches!(kind, ExperimentKind::CorrectionSweep) && epsilon.len() < 4 {
            r.errors.push(format!("epsilon: {kind} needs at least 4 values, got {}", epsilon.len()));
        }
        if matches!(kind, ExperimentKind::ReducedEnergySweep) && epsilon.len() < 4.max(richardson_order + 1) {
            r.errors.push(format!("epsilon: {kind} needs at least {} values", 4.max(richardson_order + 1)));
        }
        if matches!(kind, ExperimentKind::VerifyBubble) && fd_steps.len() < 3 {
            r.errors.push("fd_steps: at least three steps are needed for a convergence order".into());
        }
        let pde = kind.needs_puncture() || kind == ExperimentKind::Greens;
        if pde && n < 3 {
            r.errors.push(format!("n: {kind} needs n >= 3"));
        }
        if matches!(kind, ExperimentKind::NewtonContinuation) && eta.iter().any(|&e| e != 0.0) && newton_start == StartSpec::Critical {
            r.errors.push("eta: ignored with newton_start = critical; remove it or set newton_start = given".into());
        }
        if kind == ExperimentKind::CriticalPoint && q == QSpec::Constant {
            r.errors.push("q: critical points need a nonconstant Q (grad Q(xi0) != 0)".into());
        }
        if kind == ExperimentKind::NewtonContinuation && newton_start == StartSpec::Critical && q == QSpec::Constant {
            r.errors.push("q: newton_start = critical needs a nonconstant Q".into());
        }
        if flip && eta.iter().all(|&e| e == 0.0) {
            r.errors.push("flip: needs a nonzero eta".into());
        }
        if mirror.iter().any(|&a| a >= n) {
            r.errors.push(format!("mirror: axis indices must be below {n}"));
        }
    }
    let mut cfg = ExperimentConfig {
        kind: kind.unwrap_or(ExperimentKind::VerifyBubble),
        seed,
        n,
        shape,
        center,
        radius,
        inner_radius,
        lo,
        hi,
        group,
        meridian,
        mirror,
        q,
        q0,
        q_gradient,
        q_kappa,
        xi0,
        epsilon,
        h,
        h_min_factor,
        growth,
        min_hole_cells,
        eps_max_fraction,
        mg_coarse_size,
        mg_sweeps,
        d,
        eta,
        flip,
        correction_method,
        linear_tol,
        correction_tol,
        correction_max_iter,
        richardson_order,
        newton_tol,
        newton_max_iter,
        newton_start,
        quad_tol,
        remainder_step,
        collar_cells,
        samples,
        dimensions,
        fd_steps,
        eta_norms,
        pole,
        robin,
        d_range,
        eta_range,
        scan_points,
        algebras,
        pairs,
        transfer_samples,
        hopf_scale,
        fd_step,
        margin,
        k_max,
        write_fields,
        record_timings,
        tol,
        canonical: String::new(),
    };
    if r.errors.is_empty() {
        match cfg.base_domain() {
            Ok(dom) => {
                if cfg.kind.needs_puncture() && !dom.contains(&dom.to_reduced(&cfg.xi0)) {
                    r.errors.push(format!("xi0: {:?} is not inside the domain", cfg.xi0));
                }
            }
            Err(e) => r.errors.push(format!("domain: {e}")),
        }
        if let Err(e) = cfg.coefficient_field().check_positive(&cfg.full_domain().unwrap_or_else(|_| Domain::unit_ball(n)), 512) {
            if cfg.kind.needs_puncture() || cfg.kind == ExperimentKind::CriticalPoint || cfg.kind == ExperimentKind::Landscape {
                r.errors.push(format!("q: {e}"));
            }
        }
    }
    if !r.errors.is_empty() {
        return Err(Error::Config(r.errors));
    }
    let mut lines: Vec<String> = KEYS.iter().map(|k| format!("{} = {}", k.name, r.value(k.name).trim())).collect();
    lines.sort();
    cfg.canonical = lines.join("\n") + "\n";
    Ok(cfg)
}

impl ExperimentConfig {
    /// Override the seed from the command line.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        let mut lines: Vec<String> = self
            .canonical
            .lines()
            .map(|l| if l.starts_with("seed = ") { format!("seed = {seed}") } else { l.to_string() })
            .collect();
        lines.sort();
        self.canonical = lines.join("\n") + "\n";
    }

    pub fn full_domain(&self) -> Result<Domain> {
        match self.shape {
            ShapeSpec::Ball => Domain::ball(self.center.clone(), self.radius),
            ShapeSpec::Box => Domain::cuboid(self.lo.clone(), self.hi.clone()),
            ShapeSpec::Annulus => Domain::annulus(self.center.clone(), self.inner_radius, self.radius),
        }
    }

    /// The domain that is discretized: the meridian domain when requested.
    pub fn base_domain(&self) -> Result<Domain> {
        let d = self.full_domain()?;
        if self.meridian {
            symmetry_reduce(&d, self.group)
        } else {
            Ok(d)
        }
    }

    pub fn coefficient_field(&self) -> CoefficientField {
        match self.q {
            QSpec::Constant => CoefficientField::Constant(self.q0),
            QSpec::InverseHalfNorm => CoefficientField::InverseHalfNorm,
            QSpec::Affine => {
                let c = self.q0 - self.q_gradient.iter().zip(&self.xi0).map(|(g, x)| g * x).sum::<f64>();
                CoefficientField::Affine { c, g: self.q_gradient.clone() }
            }
            QSpec::Tilt => {
                let mut f = CoefficientField::quadratic_tilt(self.n, self.q0, self.q_kappa);
                if let CoefficientField::Polynomial { terms } = &mut f {
                    // Recenter the tilt at the first coordinate of xi0.
                    let t0 = self.xi0[0];
                    let k = self.q_kappa;
                    let q0 = self.q0;
                    terms.clear();
                    let mono = |coef: f64, p: u32, n: usize| {
                        let mut powers = vec![0; n];
                        powers[0] = p;
                        crate::bubbles::Monomial { coef, powers }
                    };
                    terms.push(mono(q0 * (1.0 - k * t0 + 0.5 * k * k * t0 * t0), 0, self.n));
                    terms.push(mono(q0 * (k - k * k * t0), 1, self.n));
                    terms.push(mono(0.5 * q0 * k * k, 2, self.n));
                }
                f
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config("experiment = verify-bubble\n").unwrap();
        assert_eq!(c.kind, ExperimentKind::VerifyBubble);
        assert_eq!(c.n, 3);
        assert_eq!(c.samples, 10000);
        assert_eq!(c.dimensions, vec![3, 4, 5, 6]);
        assert!(c.canonical.contains("experiment = verify-bubble"));
    }

    #[test]
    fn comments_and_fractions() {
        let c = parse_config("# header\nexperiment = greens # trailing\nh = 1/64\n").unwrap();
        assert_eq!(c.h, 1.0 / 64.0);
    }

    #[test]
    fn nonpositive_epsilon_is_named() {
        let e = parse_config("experiment = correction-sweep\nepsilon = 1e-3, -2e-3, 5e-4, 0\n").unwrap_err();
        let Error::Config(v) = e else { panic!() };
        assert!(v.iter().any(|m| m.contains("entry 2")));
        assert!(v.iter().any(|m| m.contains("entry 4")));
    }

    #[test]
    fn unknown_key_suggests_nearest() {
        let e = parse_config("experiment = project\nepsilon_ = 1e-3\n").unwrap_err();
        let Error::Config(v) = e else { panic!() };
        assert!(v.iter().any(|m| m.contains("unknown key 'epsilon_'") && m.contains("did you mean 'epsilon'")), "{v:?}");
    }

    #[test]
    fn all_errors_are_reported() {
        let e = parse_config("experiment = nope\nn = x\ngrowth = 0.5\nfoo = 1\n").unwrap_err();
        let Error::Config(v) = e else { panic!() };
        assert!(v.len() >= 4, "{v:?}");
    }

    #[test]
    fn missing_experiment() {
        assert!(parse_config("n = 3\n").is_err());
        let c = parse_config_for("n = 4\n", Some(ExperimentKind::HopfCheck)).unwrap();
        assert_eq!(c.kind, ExperimentKind::HopfCheck);
        assert!(c.canonical.contains("experiment = hopf-check"));
        assert!(parse_config_for("experiment = greens\n", Some(ExperimentKind::HopfCheck)).is_err());
    }

    #[test]
    fn meridian_requires_group() {
        assert!(parse_config("experiment = greens\nmeridian = true\n").is_err());
        assert!(parse_config("experiment = greens\nmeridian = true\ngroup = O(2)\n").is_ok());
    }

    #[test]
    fn help_lists_every_key() {
        let h = help_text();
        for k in KEYS {
            assert!(h.lines().any(|l| l.starts_with(k.name)), "{}", k.name);
        }
    }

    #[test]
    fn canonical_text_ignores_layout() {
        let a = parse_config("experiment = hopf-check\npairs = 10\n").unwrap();
        let b = parse_config("# x\n  pairs=10\n\nexperiment   =hopf-check\n").unwrap();
        assert_eq!(a.canonical, b.canonical);
    }

    #[test]
    fn tilt_is_recentered() {
        let c = parse_config("experiment = critical-point\nq = tilt\nq_kappa = 2\nxi0 = 0.3,0,0\nrobin = 1\n").unwrap();
        let q = c.coefficient_field();
        assert!((q.eval(&[0.3, 0.0, 0.0]) - 1.0).abs() < 1e-14);
        assert!((q.grad(&[0.3, 0.0, 0.0])[0] - 2.0).abs() < 1e-14);
    }
}
