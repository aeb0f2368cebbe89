//! Poisson solves, the regular part of the Dirichlet Green's function, the
//! projection onto the punctured domain, and checks of the remainder
//! expansion and of the Newtonian-potential identity.

use crate::bubbles::{alpha_n, BubbleParams, Exponent};
use crate::fv::{FvSystem, GridField};
use crate::geometry::{AxisKind, Domain, Grid, MaskSelector, PuncturedDomain};
use crate::quadrature::{integrate, integrate_half_line, sphere_area, Tolerance};
use crate::{Error, Result};
use serde::Serialize;
use std::sync::Arc;

/// Dirichlet data on the boundary crossings, in ambient coordinates.
pub type BoundaryData = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

pub struct PoissonProblem {
    pub grid: Arc<Grid>,
    pub selector: MaskSelector,
    /// Source `f` of `−Δv = f`.
    pub rhs: GridField,
    pub boundary: Option<BoundaryData>,
}

/// `β_n = 1/((n−2)|S^{n−1}|)`, the normalization with `−ΔG = δ_y`.
pub fn beta_n(n: usize) -> f64 {
    1.0 / ((n as f64 - 2.0) * sphere_area(n - 1))
}

pub fn poisson_solve(problem: &PoissonProblem, tol: f64) -> Result<GridField> {
    let sys = FvSystem::assemble(problem.grid.clone(), problem.selector)?;
    let u = solve_on(&sys, &sys.restrict(&problem.rhs), problem.boundary.as_ref(), tol)?;
    Ok(sys.to_field(&u))
}

/// Solve `−Δv = f` (values at the unknowns) with optional boundary data.
pub fn solve_on(sys: &FvSystem, f: &[f64], boundary: Option<&BoundaryData>, tol: f64) -> Result<Vec<f64>> {
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("Poisson right-hand side is not finite".into()));
    }
    let mut b = sys.load(f);
    if let Some(g) = boundary {
        for (bi, gi) in b.iter_mut().zip(sys.boundary_rhs(|x| g(x))) {
            *bi += gi;
        }
    }
    Ok(sys.solve(&b, tol)?.0)
}

#[derive(Clone, Debug)]
pub struct RegularPart {
    pub domain: Domain,
    pub pole: Vec<f64>,
    pub field: GridField,
    /// `H(y, y)`.
    pub robin: f64,
}

/// Harmonic extension of `|x−y|^{2−n}` from `∂Ω`; `y` in grid coordinates.
pub fn greens_regular_part(sys: &FvSystem, y: &[f64], tol: f64) -> Result<RegularPart> {
    let grid = &sys.grid;
    let n = grid.domain.ambient_dim();
    if n < 3 {
        return Err(Error::InvalidArgument("the regular part needs ambient dimension >= 3".into()));
    }
    if !grid.domain.contains(y) {
        return Err(Error::InvalidArgument(format!("pole {y:?} is not interior")));
    }
    let clearance = grid.domain.dist_to_boundary(y);
    if clearance < 2.0 * grid.local_spacing(y) {
        return Err(Error::InvalidArgument(format!(
            "pole clearance {clearance:.3e} is below two grid cells"
        )));
    }
    let ya = grid.ambient(y);
    let expo = 2.0 - n as f64;
    let g: BoundaryData = Arc::new(move |x: &[f64]| {
        let r2: f64 = x.iter().zip(&ya).map(|(a, b)| (a - b) * (a - b)).sum();
        r2.sqrt().powf(expo)
    });
    let w = solve_on(sys, &vec![0.0; sys.len()], Some(&g), tol)?;
    let field = sys.to_field(&w);
    let robin = field.interpolate(y);
    Ok(RegularPart { domain: grid.domain.clone(), pole: y.to_vec(), field, robin })
}

/// Regular part of the unit ball by the method of images, ambient coordinates.
pub fn ball_regular_part(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let ny2: f64 = y.iter().map(|v| v * v).sum();
    if ny2 == 0.0 {
        return 1.0;
    }
    let ny = ny2.sqrt();
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b / ny2).powi(2)).sum();
    (ny * d2.sqrt()).powf(2.0 - n)
}

/// `P_ε U`: the solution of `−Δv = U^p` in `Ω_ε` with zero boundary values.
pub fn project(sys: &FvSystem, params: &BubbleParams, tol: f64) -> Result<Vec<f64>> {
    if sys.grid.domain.ambient_dim() != params.n {
        return Err(Error::InvalidArgument("bubble and domain dimensions differ".into()));
    }
    let p = params.p();
    let f = sys.sample(|x| params.eval(x).powf(p));
    solve_on(sys, &f, None, tol)
}

pub fn project_field(pd: &PuncturedDomain, grid: Arc<Grid>, params: &BubbleParams, tol: f64) -> Result<GridField> {
    if grid.punctured.as_ref() != Some(pd) {
        return Err(Error::InvalidArgument("grid was not built for this punctured domain".into()));
    }
    let sys = FvSystem::assemble(grid, MaskSelector::Punctured)?;
    let v = project(&sys, params, tol)?;
    Ok(sys.to_field(&v))
}

#[derive(Clone, Debug, Serialize)]
pub struct RemainderReport {
    pub delta: f64,
    pub eps: f64,
    pub eta: Vec<f64>,
    /// `ε/δ` and `δ`; the expansion is asymptotic in both.
    pub regime_ok: bool,
    pub ratio: f64,
    pub ratio_ddelta: f64,
    /// One entry per admissible direction of `ξ`.
    pub ratio_dxi: Vec<f64>,
}

struct RemainderPieces {
    r: Vec<f64>,
}

fn remainder_values(
    punct: &FvSystem,
    base: &FvSystem,
    xi0: &[f64],
    eps: f64,
    delta: f64,
    xi: &[f64],
    tol: f64,
) -> Result<RemainderPieces> {
    let grid = &punct.grid;
    let n = grid.domain.ambient_dim();
    let k = (n as f64 - 2.0) / 2.0;
    let xi_amb = grid.ambient(xi);
    let params = BubbleParams::new(n, delta, xi_amb.clone())?;
    let pu = project(punct, &params, tol)?;
    let h = greens_regular_part(base, xi, tol)?;
    let eta2: f64 = xi.iter().zip(xi0).map(|(a, b)| ((a - b) / delta).powi(2)).sum();
    let an = alpha_n(n);
    let xi0_amb = grid.ambient(xi0);
    let mut x = vec![0.0; grid.dim()];
    let r = (0..punct.len())
        .map(|i| {
            punct.point(i, &mut x);
            let xa = grid.ambient(&x);
            let hval = h.field.values[punct.nodes[i]];
            let dist: f64 = xa.iter().zip(&xi0_amb).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            pu[i] - params.eval(&xa)
                + an * delta.powf(k) * hval
                + an / (delta.powf(k) * (1.0 + eta2).powf(k)) * eps.powf(n as f64 - 2.0) * dist.powf(2.0 - n as f64)
        })
        .collect();
    Ok(RemainderPieces { r })
}

/// Empirical ratios of the remainder and its parameter derivatives to the
/// pointwise remainder bounds. Nodes within two local cells of `∂Ω_ε` are
/// excluded.
#[allow(clippy::too_many_arguments)]
pub fn remainder_report(
    punct: &FvSystem,
    base: &FvSystem,
    pd: &PuncturedDomain,
    d: f64,
    eta: &[f64],
    step: f64,
    collar_cells: f64,
    tol: f64,
) -> Result<RemainderReport> {
    let grid = punct.grid.clone();
    let n = grid.domain.ambient_dim();
    let nf = n as f64;
    let eps = pd.eps;
    let delta = d * eps.powf((nf - 2.0) / (nf - 1.0));
    let xi: Vec<f64> = pd.xi0.iter().zip(eta).map(|(a, e)| a + delta * e).collect();
    let regime_ok = eps / delta < 0.5 && delta < 0.5 * pd.clearance();
    let collar: Vec<bool> = {
        let mut x = vec![0.0; grid.dim()];
        (0..punct.len())
            .map(|i| {
                punct.point(i, &mut x);
                let hl = collar_cells * grid.local_spacing(&x);
                let dh: f64 = x.iter().zip(&pd.xi0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() - eps;
                grid.domain.dist_to_boundary(&x) > hl && dh > hl
            })
            .collect()
    };
    let dist: Vec<f64> = {
        let mut x = vec![0.0; grid.dim()];
        (0..punct.len())
            .map(|i| {
                punct.point(i, &mut x);
                x.iter().zip(&pd.xi0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            })
            .collect()
    };
    let bracket = |i: usize, hole_pow: f64, last: f64| {
        eps.powf(nf - 2.0) * (1.0 + eps * delta.powf(-hole_pow)) * dist[i].powf(2.0 - nf) + delta * delta + last
    };
    let sup_ratio = |vals: &[f64], scale: f64, hole_pow: f64, last: f64| {
        (0..vals.len())
            .filter(|&i| collar[i])
            .map(|i| vals[i].abs() / (scale * bracket(i, hole_pow, last)))
            .fold(0.0, f64::max)
    };
    let base_vals = remainder_values(punct, base, &pd.xi0, eps, delta, &xi, tol)?;
    let ratio = sup_ratio(&base_vals.r, delta.powf((nf - 2.0) / 2.0), nf - 1.0, (eps / delta).powf(nf - 2.0));
    let s = step * delta;
    let plus = remainder_values(punct, base, &pd.xi0, eps, delta + s, &xi, tol)?;
    let minus = remainder_values(punct, base, &pd.xi0, eps, delta - s, &xi, tol)?;
    let dd: Vec<f64> = plus.r.iter().zip(&minus.r).map(|(a, b)| (a - b) / (2.0 * s)).collect();
    let ratio_ddelta = sup_ratio(&dd, delta.powf((nf - 4.0) / 2.0), nf - 1.0, (eps / delta).powf(nf - 2.0));
    let mut ratio_dxi = Vec::new();
    for (k, axis) in grid.axes.iter().enumerate() {
        if axis.kind != AxisKind::Cartesian {
            continue;
        }
        let mut xp = xi.clone();
        let mut xm = xi.clone();
        xp[k] += s;
        xm[k] -= s;
        let plus = remainder_values(punct, base, &pd.xi0, eps, delta, &xp, tol)?;
        let minus = remainder_values(punct, base, &pd.xi0, eps, delta, &xm, tol)?;
        let dx: Vec<f64> = plus.r.iter().zip(&minus.r).map(|(a, b)| (a - b) / (2.0 * s)).collect();
        ratio_dxi.push(sup_ratio(&dx, delta.powf(nf / 2.0), nf, eps.powf(nf - 2.0) / delta.powf(nf - 1.0)));
    }
    Ok(RemainderReport { delta, eps, eta: eta.to_vec(), regime_ok, ratio, ratio_ddelta, ratio_dxi })
}

#[derive(Clone, Debug, Serialize)]
pub struct NewtonianReport {
    pub n: usize,
    pub eta_norm: f64,
    /// `g(η)` from quadrature of the Newtonian potential of `U^p`.
    pub g_quadrature: f64,
    /// `α_n (1+|η|²)^{−(n−2)}`.
    pub g_closed: f64,
    pub abs_error: f64,
    pub error_estimate: f64,
}

/// `c_n ∫ |y−η|^{2−n} U_{1,0}^p(y) dy`, `c_n = 1/((n−2)|S^{n−1}|)`, by nested
/// quadrature in spherical coordinates about the origin.
pub fn newtonian_potential(n: usize, eta_norm: f64, tol: f64) -> Result<(f64, f64)> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!("n={n} must be >= 3")));
    }
    let nf = n as f64;
    let p = Exponent::critical(n).value();
    let an = alpha_n(n);
    let e = eta_norm;
    let inner_tol = Tolerance { abs: 1e-3 * tol, rel: 1e-13, max_intervals: 4000 };
    // Angular mean of the kernel over the sphere of radius r.
    let shell = |r: f64| -> f64 {
        let kern = |phi: f64| {
            let d2 = (r * r + e * e - 2.0 * r * e * phi.cos()).max(0.0);
            if d2 == 0.0 {
                return 0.0;
            }
            d2.powf((2.0 - nf) / 2.0) * phi.sin().powf(nf - 2.0)
        };
        match integrate(kern, 0.0, std::f64::consts::PI, inner_tol) {
            Ok(q) => sphere_area(n - 2) * q.value,
            Err(_) => f64::NAN,
        }
    };
    let radial = |r: f64| {
        if !r.is_finite() || r == 0.0 {
            return 0.0;
        }
        let u = an * (1.0 + r * r).powf(-(nf - 2.0) / 2.0);
        u.powf(p) * r.powf(nf - 1.0) * shell(r)
    };
    let outer = Tolerance { abs: tol, rel: 0.0, max_intervals: 4000 };
    let (val, err) = if e > 0.0 {
        let a = integrate(radial, 0.0, e, outer)?;
        let b = crate::quadrature::integrate_tail(radial, e, outer)?;
        (a.value + b.value, a.error + b.error)
    } else {
        let a = integrate_half_line(radial, outer)?;
        (a.value, a.error)
    };
    if !val.is_finite() {
        return Err(Error::Quadrature { error: f64::INFINITY, tol });
    }
    let c = 1.0 / ((nf - 2.0) * sphere_area(n - 1));
    Ok((c * val, c * err))
}

pub fn newtonian_identity_check(n: usize, eta: &[f64], tol: f64) -> Result<NewtonianReport> {
    let e2: f64 = eta.iter().map(|v| v * v).sum();
    let (pot, err) = newtonian_potential(n, e2.sqrt(), tol)?;
    let nf = n as f64;
    let w = (1.0 + e2).powf(-(nf - 2.0) / 2.0);
    let g = pot * w;
    let g_closed = alpha_n(n) * (1.0 + e2).powf(-(nf - 2.0));
    Ok(NewtonianReport {
        n,
        eta_norm: e2.sqrt(),
        g_quadrature: g,
        g_closed,
        abs_error: (g - g_closed).abs(),
        error_estimate: err * w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, puncture, symmetry_reduce, GridSpec, Refinement, SymmetryGroup};

    fn sys(dom: &Domain, h: f64, sel: MaskSelector) -> FvSystem {
        FvSystem::assemble(Arc::new(build_grid(dom, h).unwrap()), sel).unwrap()
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let g = Arc::new(build_grid(&Domain::unit_ball(2), 0.1).unwrap());
        let prob = PoissonProblem { grid: g.clone(), selector: MaskSelector::Base, rhs: GridField::zeros(g), boundary: None };
        assert_eq!(poisson_solve(&prob, 1e-10).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn linear_in_rhs() {
        let s = sys(&Domain::unit_ball(2), 0.05, MaskSelector::Base);
        let f = s.sample(|x| 1.0 + x[0]);
        let g = s.sample(|x| (3.0 * x[1]).sin());
        let comb: Vec<f64> = f.iter().zip(&g).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let (uf, ug, uc) = (
            solve_on(&s, &f, None, 1e-12).unwrap(),
            solve_on(&s, &g, None, 1e-12).unwrap(),
            solve_on(&s, &comb, None, 1e-12).unwrap(),
        );
        let err = (0..s.len()).map(|i| (uc[i] - 2.0 * uf[i] + 0.5 * ug[i]).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9);
    }

    #[test]
    fn maximum_principle() {
        let s = sys(&Domain::annulus(vec![0.0, 0.0], 0.3, 1.0).unwrap(), 0.04, MaskSelector::Base);
        let f = s.sample(|x| (x[0] * 5.0).cos().max(0.0));
        let u = solve_on(&s, &f, None, 1e-12).unwrap();
        assert!(u.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn regular_part_center_is_one() {
        let d = symmetry_reduce(&Domain::unit_ball(3), SymmetryGroup::Orthogonal { m: 2 }).unwrap();
        let s = sys(&d, 1.0 / 64.0, MaskSelector::Base);
        let h = greens_regular_part(&s, &[0.0, 0.0], 1e-12).unwrap();
        assert!((h.robin - 1.0).abs() < 1e-3);
    }

    #[test]
    fn regular_part_matches_images_and_is_symmetric() {
        let d = symmetry_reduce(&Domain::unit_ball(3), SymmetryGroup::Orthogonal { m: 2 }).unwrap();
        let s = sys(&d, 1.0 / 64.0, MaskSelector::Base);
        let y = [0.5, 0.0];
        let h = greens_regular_part(&s, &y, 1e-12).unwrap();
        let mut x = [0.0; 2];
        let mut err: f64 = 0.0;
        for i in 0..s.len() {
            s.point(i, &mut x);
            let e = (h.field.values[s.nodes[i]] - ball_regular_part(&[x[0], x[1], 0.0], &[0.5, 0.0, 0.0])).abs();
            err = err.max(e);
        }
        assert!(err < 1e-3, "{err}");
        let z = [-0.25, 0.0];
        let hz = greens_regular_part(&s, &z, 1e-12).unwrap();
        assert!((h.field.interpolate(&z) - hz.field.interpolate(&y)).abs() < 1e-3);
    }

    #[test]
    fn projection_below_bubble_and_monotone_in_domain() {
        let params = BubbleParams::centered(3, 0.3);
        let mut last: Option<(f64, f64)> = None;
        for &l in &[1.0, 2.0] {
            let dom = Domain::cuboid(vec![-l; 3], vec![l; 3]).unwrap();
            let g = Arc::new(Grid::build(&dom, None, &GridSpec { h: 1.0 / 16.0, refinement: None, mirror: vec![true; 3] }).unwrap());
            let s = FvSystem::assemble(g, MaskSelector::Base).unwrap();
            let v = project(&s, &params, 1e-12).unwrap();
            let u = s.sample(|x| params.eval(x));
            assert!(v.iter().zip(&u).all(|(a, b)| *a <= b + 1e-9 && *a >= -1e-12));
            let probe = s.to_field(&v).interpolate(&[0.25, 0.25, 0.25]);
            if let Some((_, prev)) = last {
                assert!(probe > prev);
            }
            last = Some((l, probe));
        }
    }

    #[test]
    fn newtonian_examples() {
        let r = newtonian_identity_check(3, &[0.0, 0.0, 0.0], 1e-10).unwrap();
        assert!((r.g_quadrature - 1.316_074_012_952_492_5).abs() < 1e-7, "{r:?}");
        let r = newtonian_identity_check(4, &[1.0, 0.0, 0.0, 0.0], 1e-10).unwrap();
        assert!((r.g_quadrature - 8f64.sqrt() / 4.0).abs() < 1e-7, "{r:?}");
    }

    #[test]
    fn remainder_ratio_is_finite() {
        let d = symmetry_reduce(&Domain::unit_ball(3), SymmetryGroup::Orthogonal { m: 2 }).unwrap();
        let pd = puncture(&d, vec![0.0, 0.0], 0.02).unwrap();
        let spec = GridSpec { h: 1.0 / 32.0, refinement: Some(Refinement { center: vec![0.0, 0.0], h_min: 0.005, growth: 1.1 }), mirror: vec![] };
        let g = Arc::new(Grid::build(&d, Some(&pd), &spec).unwrap());
        let punct = FvSystem::assemble(g.clone(), MaskSelector::Punctured).unwrap();
        let base = FvSystem::assemble(g, MaskSelector::Base).unwrap();
        let r = remainder_report(&punct, &base, &pd, 1.0, &[0.0, 0.0], 1e-4, 2.0, 1e-12).unwrap();
        assert!(r.ratio.is_finite() && r.ratio > 0.0);
        assert!(r.ratio_ddelta.is_finite() && r.ratio_dxi.len() == 1);
    }
}
