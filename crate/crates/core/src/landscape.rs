//! The closed-form reduced energy `F(d, η)`, its coefficients, its explicit
//! critical points, and validation of the small-hole energy expansion
//! `J̃_ε(d,η) = c₀ + γ₀² F(d,η) ε^{(n−2)/(n−1)} + o(ε^{(n−2)/(n−1)})`.

use crate::bubbles::{alpha_n, bubble_integrals, gamma0, CoefficientField, Exponent};
use crate::fv::FvSystem;
use crate::potential::greens_regular_part;
use crate::quadrature::{integrate, integrate_half_line, sphere_area, Tolerance};
use crate::{Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoefficientInputs {
    pub ip: f64,
    pub ip1: f64,
    pub alpha_n: f64,
    /// `H(ξ₀, ξ₀)`, used for `n = 3` only.
    pub robin: Option<f64>,
    pub gamma0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReducedCoefficients {
    pub n: usize,
    pub c0: f64,
    /// Present exactly when `n = 3`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub q0: f64,
    /// `ζ₀ = ∇Q(ξ₀)/Q(ξ₀)`.
    pub zeta0: Vec<f64>,
    pub inputs: CoefficientInputs,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Coefficients from the bubble integrals, `γ₀ = Q(ξ₀)^{−1/(p−1)}` and, for
/// `n = 3`, the Robin value `H(ξ₀, ξ₀)`. `xi0` is in ambient coordinates.
pub fn compute_coefficients(
    n: usize,
    q: &CoefficientField,
    xi0: &[f64],
    robin: Option<f64>,
    tol: f64,
) -> Result<ReducedCoefficients> {
    if n < 3 || xi0.len() != n {
        return Err(Error::InvalidArgument(format!("need n >= 3 and a point of R^{n}, got {}", xi0.len())));
    }
    let q0 = q.eval(xi0);
    if !(q0 > 0.0) {
        return Err(Error::InvalidArgument(format!("Q(xi0) = {q0} must be positive")));
    }
    let p = Exponent::critical(n).value();
    let ints = bubble_integrals(n, tol)?;
    let an = alpha_n(n);
    let g0 = gamma0(n, q0);
    let nf = n as f64;
    let alpha = if n == 3 {
        let h = robin.ok_or_else(|| Error::InvalidArgument("n = 3 needs the Robin value H(xi0, xi0)".into()))?;
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!("Robin value {h} must be positive")));
        }
        Some(0.5 * an * ints.ip * h)
    } else {
        None
    };
    let beta = 0.5 * an * an * (nf - 2.0) * sphere_area(n - 1);
    let gamma = ints.ip1 / (p + 1.0);
    let c0 = g0 * g0 * (p - 1.0) / (2.0 * (p + 1.0)) * ints.ip1;
    let zeta0 = q.grad(xi0).into_iter().map(|g| g / q0).collect();
    Ok(ReducedCoefficients {
        n,
        c0,
        alpha,
        beta,
        gamma,
        q0,
        zeta0,
        inputs: CoefficientInputs { ip: ints.ip, ip1: ints.ip1, alpha_n: an, robin: if n == 3 { robin } else { None }, gamma0: g0 },
    })
}

/// As [`compute_coefficients`], with the Robin value solved on `base`
/// (`xi0` in grid coordinates).
pub fn coefficients_on_grid(base: &FvSystem, q: &CoefficientField, xi0: &[f64], tol: f64) -> Result<ReducedCoefficients> {
    let n = base.grid.domain.ambient_dim();
    let robin = if n == 3 { Some(greens_regular_part(base, xi0, tol.min(1e-10))?.robin) } else { None };
    compute_coefficients(n, q, &base.grid.ambient(xi0), robin, tol)
}

impl ReducedCoefficients {
    pub fn gamma0(&self) -> f64 {
        self.inputs.gamma0
    }

    /// Leading coefficient `γ₀² F(d,η)` of the expansion.
    pub fn limit(&self, d: f64, eta: &[f64]) -> Result<f64> {
        Ok(self.gamma0().powi(2) * f_eval(self, d, eta)?)
    }

    /// `F` with the linear `γ` term removed: the even part in `η`.
    pub fn even_part(&self, d: f64, eta: &[f64]) -> Result<f64> {
        let minus: Vec<f64> = eta.iter().map(|v| -v).collect();
        Ok(0.5 * (f_eval(self, d, eta)? + f_eval(self, d, &minus)?))
    }

    pub fn exponent(&self) -> f64 {
        (self.n as f64 - 2.0) / (self.n as f64 - 1.0)
    }

    fn check(&self, d: f64, eta: &[f64]) -> Result<()> {
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::InvalidArgument(format!("d = {d} must be positive")));
        }
        if eta.len() != self.zeta0.len() {
            return Err(Error::InvalidArgument(format!("eta has {} components, expected {}", eta.len(), self.zeta0.len())));
        }
        Ok(())
    }
}

pub fn f_eval(c: &ReducedCoefficients, d: f64, eta: &[f64]) -> Result<f64> {
    c.check(d, eta)?;
    let e2 = dot(eta, eta);
    let lin = c.gamma * dot(&c.zeta0, eta) * d;
    Ok(match c.alpha {
        Some(a) => a * d + c.beta / ((1.0 + e2) * d) - lin,
        None => c.beta * ((1.0 + e2) * d).powi(-(c.n as i32 - 2)) - lin,
    })
}

/// `(∂F/∂d, ∇_η F)` as one vector of length `n + 1`.
pub fn f_grad(c: &ReducedCoefficients, d: f64, eta: &[f64]) -> Result<Vec<f64>> {
    c.check(d, eta)?;
    let e2 = dot(eta, eta);
    let s = 1.0 + e2;
    let zn = dot(&c.zeta0, eta);
    let mut g = Vec::with_capacity(eta.len() + 1);
    match c.alpha {
        Some(a) => {
            g.push(a - c.beta / (s * d * d) - c.gamma * zn);
            for (e, z) in eta.iter().zip(&c.zeta0) {
                g.push(-2.0 * c.beta * e / (s * s * d) - c.gamma * z * d);
            }
        }
        None => {
            let k = c.n as i32 - 2;
            let base = c.beta * (s * d).powi(-k);
            g.push(-(k as f64) * base / d - c.gamma * zn);
            for (e, z) in eta.iter().zip(&c.zeta0) {
                g.push(-(k as f64) * base * 2.0 * e / s - c.gamma * z * d);
            }
        }
    }
    Ok(g)
}

/// Central differences of [`f_eval`].
pub fn f_grad_fd(c: &ReducedCoefficients, d: f64, eta: &[f64], step: f64) -> Result<Vec<f64>> {
    let mut x: Vec<f64> = std::iter::once(d).chain(eta.iter().copied()).collect();
    let mut g = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let h = step * x[k].abs().max(1.0);
        let x0 = x[k];
        x[k] = x0 + h;
        let fp = f_eval(c, x[0], &x[1..])?;
        x[k] = x0 - h;
        let fm = f_eval(c, x[0], &x[1..])?;
        x[k] = x0;
        g.push((fp - fm) / (2.0 * h));
    }
    Ok(g)
}

/// Hessian by central differences of the analytic gradient, symmetrized.
pub fn f_hessian(c: &ReducedCoefficients, d: f64, eta: &[f64]) -> Result<DMatrix<f64>> {
    let m = eta.len() + 1;
    let mut x: Vec<f64> = std::iter::once(d).chain(eta.iter().copied()).collect();
    let mut h = DMatrix::zeros(m, m);
    for k in 0..m {
        let step = 1e-5 * x[k].abs().max(1.0).min(d.max(1e-3));
        let x0 = x[k];
        x[k] = x0 + step;
        let gp = f_grad(c, x[0], &x[1..])?;
        x[k] = x0 - step;
        let gm = f_grad(c, x[0], &x[1..])?;
        x[k] = x0;
        for i in 0..m {
            h[(i, k)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// For `n = 3`: the minimizer `d(η)` of `F(·, η)`, defined on the half-space
/// `α − γ⟨ζ₀, η⟩ > 0`.
pub fn d_of_eta(c: &ReducedCoefficients, eta: &[f64]) -> Option<f64> {
    let a = c.alpha?;
    let den = (1.0 + dot(eta, eta)) * (a - c.gamma * dot(&c.zeta0, eta));
    (den > 0.0).then(|| (c.beta / den).sqrt())
}

#[derive(Clone, Debug, Serialize)]
pub struct CriticalPoint {
    pub d0: f64,
    pub eta0: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub grad_norm_fd: f64,
    pub hessian_eigenvalues: Vec<f64>,
    pub nondegenerate: bool,
}

/// Closed-form critical point of `F`; rejects `∇Q(ξ₀) = 0`.
pub fn critical_point(c: &ReducedCoefficients) -> Result<CriticalPoint> {
    let zn = norm(&c.zeta0);
    if !(zn > 0.0) {
        return Err(Error::InvalidArgument("grad Q(xi0) = 0: F has no isolated critical point".into()));
    }
    let nf = c.n as f64;
    let (d0, eta0) = match c.alpha {
        Some(a) => {
            let t = (a - (a * a + c.gamma * c.gamma * zn * zn).sqrt()) / (c.gamma * zn * zn);
            let eta0: Vec<f64> = c.zeta0.iter().map(|z| t * z).collect();
            let d0 = d_of_eta(c, &eta0).ok_or_else(|| Error::InvalidArgument("eta0 left the admissible half-space".into()))?;
            (d0, eta0)
        }
        None => {
            let eta0: Vec<f64> = c.zeta0.iter().map(|z| -z / zn).collect();
            let d0 = ((nf - 2.0) * c.beta / (2f64.powf(nf - 2.0) * c.gamma * zn)).powf(1.0 / (nf - 1.0));
            (d0, eta0)
        }
    };
    let grad_norm = norm(&f_grad(c, d0, &eta0)?);
    let grad_norm_fd = norm(&f_grad_fd(c, d0, &eta0, 1e-5)?);
    let hess = f_hessian(c, d0, &eta0)?;
    let mut eig: Vec<f64> = SymmetricEigen::new(hess).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| a.total_cmp(b));
    let scale = eig.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let nondegenerate = eig.iter().all(|v| v.abs() >= 1e-8 * scale);
    Ok(CriticalPoint {
        value: f_eval(c, d0, &eta0)?,
        d0,
        eta0,
        grad_norm,
        grad_norm_fd,
        hessian_eigenvalues: eig,
        nondegenerate,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum ExtremumKind {
    Maximum,
    Minimum,
    Saddle,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanSample {
    pub d: f64,
    /// Coordinate of `η` along the scan direction.
    pub s: f64,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LandscapeScan {
    pub direction: Vec<f64>,
    pub samples: Vec<ScanSample>,
    pub d: f64,
    pub eta: Vec<f64>,
    pub value: f64,
    pub kind: ExtremumKind,
    /// Spacing of the `η` scan, the resolution of the located extremum.
    pub resolution: f64,
}

fn linspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1).max(1) as f64).collect()
}

/// Scan of the landscape along `η = s·u`, `u = ζ₀/|ζ₀|` (or `e₁` if `ζ₀ = 0`).
/// For `n = 3` the profile `F̃(s) = F(d(η), η)` is scanned and its maximum
/// refined by golden-section search; for `n ≥ 4` the `(d, s)` grid is scanned
/// and the point of smallest gradient is refined by Newton's method.
pub fn landscape_scan(
    c: &ReducedCoefficients,
    d_range: (f64, f64),
    eta_range: (f64, f64),
    points: usize,
) -> Result<LandscapeScan> {
    if !(d_range.0 > 0.0 && d_range.1 > d_range.0 && eta_range.1 > eta_range.0) || points < 3 {
        return Err(Error::InvalidArgument("scan ranges must be increasing, d positive, points >= 3".into()));
    }
    if !(d_range.1.is_finite() && eta_range.0.is_finite() && eta_range.1.is_finite()) {
        return Err(Error::InvalidArgument("scan ranges must be finite".into()));
    }
    let zn = norm(&c.zeta0);
    let dim = c.zeta0.len();
    let dir: Vec<f64> = if zn > 0.0 {
        c.zeta0.iter().map(|z| z / zn).collect()
    } else {
        (0..dim).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect()
    };
    let at = |s: f64| -> Vec<f64> { dir.iter().map(|u| s * u).collect() };
    let ss = linspace(eta_range.0, eta_range.1, points);
    let resolution = ss[1] - ss[0];
    if c.alpha.is_some() {
        let profile = |s: f64| d_of_eta(c, &at(s)).map(|d| (d, f_eval(c, d, &at(s)).unwrap_or(f64::NAN)));
        let samples: Vec<ScanSample> =
            ss.iter().filter_map(|&s| profile(s).map(|(d, value)| ScanSample { d, s, value })).collect();
        let best = samples
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.value.total_cmp(&b.1.value))
            .map(|(i, _)| i)
            .ok_or_else(|| Error::InvalidArgument("scan range misses the admissible half-space".into()))?;
        let lo = samples[best.saturating_sub(1)].s;
        let hi = samples[(best + 1).min(samples.len() - 1)].s;
        let f = |s: f64| profile(s).map(|v| v.1).unwrap_or(f64::NEG_INFINITY);
        let s = golden_max(f, lo, hi, 1e-12);
        let (d, value) = profile(s).expect("refined point is admissible");
        let eta = at(s);
        return Ok(LandscapeScan { direction: dir, samples, d, eta, value, kind: ExtremumKind::Maximum, resolution });
    }
    let ds = linspace(d_range.0, d_range.1, points);
    let mut samples = Vec::with_capacity(points * points);
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for &d in &ds {
        for &s in &ss {
            let value = f_eval(c, d, &at(s))?;
            let g = f_grad(c, d, &at(s))?;
            let gs = dot(&g[1..], &dir);
            let r = g[0].hypot(gs);
            if r < best.0 {
                best = (r, d, s);
            }
            samples.push(ScanSample { d, s, value });
        }
    }
    let (mut d, mut s) = (best.1, best.2);
    for _ in 0..50 {
        let g = f_grad(c, d, &at(s))?;
        let r = [g[0], dot(&g[1..], &dir)];
        let h = f_hessian(c, d, &at(s))?;
        let h00 = h[(0, 0)];
        let h01: f64 = (0..dim).map(|i| h[(0, i + 1)] * dir[i]).sum();
        let h11: f64 = (0..dim).map(|i| (0..dim).map(|j| dir[i] * h[(i + 1, j + 1)] * dir[j]).sum::<f64>()).sum();
        let det = h00 * h11 - h01 * h01;
        if det == 0.0 {
            break;
        }
        let dd = (h11 * r[0] - h01 * r[1]) / det;
        let dsv = (h00 * r[1] - h01 * r[0]) / det;
        d = (d - dd).max(0.5 * d);
        s -= dsv;
        if dd.abs().max(dsv.abs()) < 1e-14 * d.max(1.0) {
            break;
        }
    }
    let h = f_hessian(c, d, &at(s))?;
    let h00 = h[(0, 0)];
    let h01: f64 = (0..dim).map(|i| h[(0, i + 1)] * dir[i]).sum();
    let h11: f64 = (0..dim).map(|i| (0..dim).map(|j| dir[i] * h[(i + 1, j + 1)] * dir[j]).sum::<f64>()).sum();
    let det = h00 * h11 - h01 * h01;
    let kind = if det < 0.0 {
        ExtremumKind::Saddle
    } else if h00 > 0.0 {
        ExtremumKind::Minimum
    } else {
        ExtremumKind::Maximum
    };
    let eta = at(s);
    let value = f_eval(c, d, &eta)?;
    Ok(LandscapeScan { direction: dir, samples, d, eta, value, kind, resolution })
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > tol {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        }
    }
    0.5 * (a + b)
}

#[derive(Clone, Debug, Serialize)]
pub struct ExpansionRow {
    pub eps: f64,
    pub energy: f64,
    /// `(J̃_ε − c₀)/ε^{(n−2)/(n−1)}`.
    pub scaled: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExpansionReport {
    pub d: f64,
    pub eta: Vec<f64>,
    /// `γ₀² F(d, η)`.
    pub target: f64,
    pub rows: Vec<ExpansionRow>,
    /// Richardson extrapolants of increasing order; the last is reported.
    pub extrapolants: Vec<f64>,
    pub limit: f64,
    pub rel_error: f64,
}

/// Extrapolates the scaled energies to `ε → 0` assuming corrections in
/// integer powers of `t = ε^{1/(n−1)}`, eliminating `order` of them with the
/// `order + 1` smallest values of `ε`.
pub fn expansion_validation(
    c: &ReducedCoefficients,
    d: f64,
    eta: &[f64],
    sweep: &[(f64, f64)],
    order: usize,
) -> Result<ExpansionReport> {
    if sweep.len() < 4 {
        return Err(Error::InvalidArgument(format!("expansion sweep has {} values of eps, need >= 4", sweep.len())));
    }
    if order + 1 > sweep.len() {
        return Err(Error::InvalidArgument(format!("order {order} needs {} sweep values", order + 1)));
    }
    let s = c.exponent();
    let mut sorted = sweep.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    if sorted.windows(2).any(|w| !(w[0].0 < w[1].0)) || !(sorted[0].0 > 0.0) {
        return Err(Error::InvalidArgument("sweep values of eps must be positive and distinct".into()));
    }
    let rows: Vec<ExpansionRow> = sorted
        .iter()
        .map(|&(eps, energy)| ExpansionRow { eps, energy, scaled: (energy - c.c0) / eps.powf(s) })
        .collect();
    let t: Vec<f64> = rows.iter().map(|r| r.eps.powf(1.0 / (c.n as f64 - 1.0))).collect();
    let g: Vec<f64> = rows.iter().map(|r| r.scaled).collect();
    let extrapolants: Vec<f64> = (0..=order).map(|k| neville_at_zero(&t[..=k], &g[..=k])).collect();
    let limit = *extrapolants.last().unwrap();
    let target = c.limit(d, eta)?;
    Ok(ExpansionReport {
        d,
        eta: eta.to_vec(),
        target,
        rows,
        extrapolants,
        limit,
        rel_error: (limit - target).abs() / target.abs(),
    })
}

/// Value at `t = 0` of the interpolating polynomial through `(t_i, g_i)`.
pub fn neville_at_zero(t: &[f64], g: &[f64]) -> f64 {
    let mut p = g.to_vec();
    let m = t.len();
    for k in 1..m {
        for i in 0..m - k {
            p[i] = (t[i + k] * p[i] - t[i] * p[i + 1]) / (t[i + k] - t[i]);
        }
    }
    p[0]
}

#[derive(Clone, Debug, Serialize)]
pub struct FlipCheck {
    /// Even part of `γ₀² F` in `η`.
    pub even_target: f64,
    /// `(limit(η) + limit(−η))/2` from the two sweeps.
    pub mean: f64,
    pub rel_error: f64,
    /// `(limit(η) − limit(−η))/2` against `−γ₀² γ⟨ζ₀,η⟩d`.
    pub odd_measured: f64,
    pub odd_target: f64,
}

pub fn flip_check(c: &ReducedCoefficients, d: f64, eta: &[f64], limit_plus: f64, limit_minus: f64) -> Result<FlipCheck> {
    let g2 = c.gamma0().powi(2);
    let even_target = g2 * c.even_part(d, eta)?;
    let mean = 0.5 * (limit_plus + limit_minus);
    Ok(FlipCheck {
        even_target,
        mean,
        rel_error: (mean - even_target).abs() / even_target.abs(),
        odd_measured: 0.5 * (limit_plus - limit_minus),
        odd_target: -g2 * c.gamma * dot(&c.zeta0, eta) * d,
    })
}

/// `∫ ⟨g, y⟩ (1+|y|²)^{−n} dy` over `R^n` in spherical coordinates about the
/// axis of `g`; vanishes by oddness.
pub fn zero_moment(n: usize, g: &[f64], tol: f64) -> Result<f64> {
    if n < 2 || g.len() != n {
        return Err(Error::InvalidArgument("zero moment needs n >= 2 and g in R^n".into()));
    }
    let nf = n as f64;
    let radial = integrate_half_line(
        |r: f64| if r.is_finite() { r.powf(nf) * (1.0 + r * r).powf(-nf) } else { 0.0 },
        Tolerance { abs: tol, rel: 0.0, max_intervals: 4000 },
    )?;
    let polar = integrate(
        |phi: f64| phi.cos() * phi.sin().powf(nf - 2.0),
        0.0,
        std::f64::consts::PI,
        Tolerance { abs: tol, rel: 0.0, max_intervals: 4000 },
    )?;
    Ok(norm(g) * sphere_area(n - 2) * radial.value * polar.value)
}
