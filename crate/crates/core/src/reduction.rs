//! The finite-dimensional reduction on a punctured domain.
//!
//! With `δ = d ε^{(n−2)/(n−1)}`, `ξ = ξ₀ + δη` and `V = γ₀ P_ε U_{δ,ξ}`, the
//! correction `φ ⊥ span{P_ε ψ^j}` solves
//! `K(V+φ) − M Q f(V+φ) = Σ_j λ_j C_j`, where `C_j = M p U^{p−1} ψ^j` so that
//! `P_ε ψ^j = K⁻¹ C_j` and orthogonality in `H¹₀` reads `C_jᵀ φ = 0`.

use crate::bubbles::{gamma0, BubbleParams, CoefficientField, Exponent};
use crate::fv::FvSystem;
use crate::geometry::{is_fixed_point, AxisKind, MaskSelector, PuncturedDomain, SymmetryGroup};
use crate::krylov::{minres, FnOperator, Operator, SolveOptions};
use crate::potential::project;
use crate::rng;
use crate::sparse::{axpy, dot, norm2};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

#[derive(Clone, Debug)]
pub struct ReductionConfig {
    pub pd: PuncturedDomain,
    pub q: CoefficientField,
    pub group: SymmetryGroup,
    pub d: f64,
    /// Drift in ambient coordinates of `R^n`.
    pub eta: Vec<f64>,
    /// Relative tolerance of inner linear solves.
    pub linear_tol: f64,
    pub method: CorrectionMethod,
}

/// Linearization point of the correction map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum CorrectionMethod {
    /// Linearize once at `V`: the contraction `T` of the reduction argument.
    Frozen,
    /// Relinearize at `V + φ_k` each step; same fixed point, quadratic convergence.
    Newton,
}

impl ReductionConfig {
    pub fn new(pd: PuncturedDomain, q: CoefficientField, group: SymmetryGroup, d: f64, eta: Vec<f64>) -> Result<Self> {
        let n = pd.base.ambient_dim();
        if eta.len() != n {
            return Err(Error::InvalidArgument(format!("eta has {} coordinates, expected {n}", eta.len())));
        }
        if !(d > 0.0) {
            return Err(Error::InvalidArgument(format!("d={d} must be positive")));
        }
        if !is_fixed_point(group, &eta) {
            return Err(Error::InvalidArgument(format!("eta {eta:?} is not fixed by the symmetry group")));
        }
        if let Some(m) = pd.base.meridian {
            if group != (SymmetryGroup::Orthogonal { m }) {
                return Err(Error::InvalidArgument(format!("a meridian domain carries the group O({m})")));
            }
        }
        Ok(ReductionConfig { pd, q, group, d, eta, linear_tol: 1e-11, method: CorrectionMethod::Newton })
    }

    pub fn n(&self) -> usize {
        self.pd.base.ambient_dim()
    }

    pub fn p(&self) -> f64 {
        Exponent::critical(self.n()).value()
    }

    pub fn delta(&self) -> f64 {
        let n = self.n() as f64;
        self.d * self.pd.eps.powf((n - 2.0) / (n - 1.0))
    }

    pub fn xi0(&self) -> Vec<f64> {
        self.pd.base.to_ambient(&self.pd.xi0)
    }

    pub fn xi(&self) -> Vec<f64> {
        let delta = self.delta();
        self.xi0().iter().zip(&self.eta).map(|(a, e)| a + delta * e).collect()
    }

    pub fn bubble(&self) -> BubbleParams {
        BubbleParams::new(self.n(), self.delta(), self.xi()).expect("validated configuration")
    }

    pub fn q0(&self) -> f64 {
        self.q.eval(&self.xi0())
    }

    pub fn gamma0(&self) -> f64 {
        gamma0(self.n(), self.q0())
    }
}

/// Check that the grid respects the configuration: mirrored axes need a zero
/// drift component and an on-plane center.
fn check_grid(cfg: &ReductionConfig, sys: &FvSystem) -> Result<()> {
    if sys.selector != MaskSelector::Punctured || sys.grid.punctured.as_ref() != Some(&cfg.pd) {
        return Err(Error::InvalidArgument("system must be assembled on the punctured mask of this domain".into()));
    }
    for (k, a) in sys.grid.axes.iter().enumerate() {
        if a.kind == (AxisKind::Radial { m: 1 }) && cfg.eta[k] != 0.0 {
            return Err(Error::InvalidArgument(format!("eta must vanish on the mirrored axis {k}")));
        }
    }
    Ok(())
}

/// Kernel directions representable on the grid: `0` and every Cartesian axis.
pub fn admissible_directions(sys: &FvSystem) -> Vec<usize> {
    std::iter::once(0)
        .chain(sys.grid.axes.iter().enumerate().filter(|(_, a)| a.kind == AxisKind::Cartesian).map(|(k, _)| k + 1))
        .collect()
}

/// Lattice symmetries of `O(m)` on the last `m` coordinates of a full grid:
/// coordinate sign flips and permutations, applied as maps on unknowns.
pub struct LatticeGroup {
    maps: Vec<Vec<usize>>,
}

impl LatticeGroup {
    pub fn new(sys: &FvSystem, group: SymmetryGroup) -> Result<LatticeGroup> {
        let m = match group {
            SymmetryGroup::Trivial => return Ok(LatticeGroup { maps: vec![(0..sys.len()).collect()] }),
            SymmetryGroup::Orthogonal { m } => m,
        };
        let g = &sys.grid;
        let d = g.dim();
        if g.domain.meridian.is_some() {
            // The meridian reduction is exact; no lattice averaging is needed.
            return Ok(LatticeGroup { maps: vec![(0..sys.len()).collect()] });
        }
        let first = d - m;
        let ax0 = &g.axes[first].coords;
        for k in first..d {
            if g.axes[k].kind != AxisKind::Cartesian || g.axes[k].coords != *ax0 {
                return Err(Error::InvalidArgument("O(m) averaging needs identical Cartesian axes".into()));
            }
        }
        let neg: Vec<usize> = ax0
            .iter()
            .map(|&c| {
                let scale = 1e-9 * (1.0 + c.abs());
                ax0.iter().position(|&v| (v + c).abs() <= scale)
            })
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::InvalidArgument("grid is not symmetric about the fixed plane".into()))?;
        let mut perms: Vec<Vec<usize>> = vec![vec![]];
        for _ in 0..m {
            let mut next = Vec::new();
            for p in &perms {
                for k in 0..m {
                    if !p.contains(&k) {
                        let mut q = p.clone();
                        q.push(k);
                        next.push(q);
                    }
                }
            }
            perms = next;
        }
        let mut maps = Vec::new();
        for perm in &perms {
            for signs in 0..(1usize << m) {
                let map: Vec<usize> = sys
                    .nodes
                    .iter()
                    .map(|&flat| {
                        let idx = g.multi_index(flat);
                        let mut out = idx.clone();
                        for (slot, &src) in perm.iter().enumerate() {
                            let v = idx[first + src];
                            out[first + slot] = if (signs >> slot) & 1 == 1 { neg[v] } else { v };
                        }
                        sys.index[g.flat(&out)]
                    })
                    .collect();
                if map.contains(&usize::MAX) {
                    return Err(Error::InvalidDomain("interior mask is not invariant under the group".into()));
                }
                maps.push(map);
            }
        }
        Ok(LatticeGroup { maps })
    }

    pub fn order(&self) -> usize {
        self.maps.len()
    }

    pub fn symmetrize(&self, u: &[f64]) -> Vec<f64> {
        let w = 1.0 / self.maps.len() as f64;
        let mut out = vec![0.0; u.len()];
        for map in &self.maps {
            for (o, &j) in out.iter_mut().zip(map) {
                *o += w * u[j];
            }
        }
        out
    }

    /// Largest deviation `|u(gx) − u(x)|` over the group.
    pub fn asymmetry(&self, u: &[f64]) -> f64 {
        self.maps
            .iter()
            .map(|map| map.iter().enumerate().map(|(i, &j)| (u[j] - u[i]).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct KernelBasis {
    /// Indices `j` of the retained kernel functions.
    pub js: Vec<usize>,
    /// `C_j = M p U^{p−1} ψ^j`.
    pub c: Vec<Vec<f64>>,
    /// `P_ε ψ^j = K⁻¹ C_j`.
    pub z: Vec<Vec<f64>>,
    pub gram: DMatrix<f64>,
    gram_inv: DMatrix<f64>,
    pub condition: f64,
    /// Directions removed by symmetrization, with their relative norms.
    pub dropped: Vec<(usize, f64)>,
}

pub fn kernel_basis(cfg: &ReductionConfig, sys: &FvSystem) -> Result<KernelBasis> {
    check_grid(cfg, sys)?;
    let bubble = cfg.bubble();
    let p = cfg.p();
    let sym = LatticeGroup::new(sys, cfg.group)?;
    let mut cand = Vec::new();
    for j in admissible_directions(sys) {
        let w = sys.sample(|x| p * bubble.eval(x).powf(p - 1.0) * bubble.psi(j, x).unwrap_or(0.0));
        let c = sym.symmetrize(&sys.load(&w));
        let z = sys.solve(&c, cfg.linear_tol)?.0;
        let norm = dot(&z, &c).max(0.0).sqrt();
        cand.push((j, c, z, norm));
    }
    let top = cand.iter().map(|e| e.3).fold(0.0, f64::max);
    if top == 0.0 {
        return Err(Error::Singular("all kernel functions vanish on the grid".into()));
    }
    let mut basis = KernelBasis {
        js: vec![],
        c: vec![],
        z: vec![],
        gram: DMatrix::zeros(0, 0),
        gram_inv: DMatrix::zeros(0, 0),
        condition: 1.0,
        dropped: vec![],
    };
    for (j, c, z, norm) in cand {
        if norm <= 1e-8 * top {
            basis.dropped.push((j, norm / top));
        } else {
            basis.js.push(j);
            basis.c.push(c);
            basis.z.push(z);
        }
    }
    let k = basis.js.len();
    let mut g = DMatrix::from_fn(k, k, |a, b| dot(&basis.c[a], &basis.z[b]));
    g = (&g + g.transpose()) * 0.5;
    let eig = g.clone().symmetric_eigen();
    let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    if !(lo > 0.0) {
        return Err(Error::Singular(format!("Gram matrix has eigenvalue {lo:.3e}")));
    }
    basis.condition = hi / lo;
    basis.gram_inv = g.clone().try_inverse().ok_or_else(|| Error::Singular("Gram matrix".into()))?;
    basis.gram = g;
    Ok(basis)
}

impl KernelBasis {
    pub fn len(&self) -> usize {
        self.js.len()
    }

    pub fn is_empty(&self) -> bool {
        self.js.is_empty()
    }

    /// `H¹₀` inner products `(u, P_ε ψ^j)`.
    pub fn moments(&self, u: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.c.iter().map(|c| dot(c, u)))
    }

    pub fn project_orthogonal(&self, u: &[f64]) -> Vec<f64> {
        let coef = &self.gram_inv * self.moments(u);
        let mut out = u.to_vec();
        for (a, z) in self.z.iter().enumerate() {
            for (o, zi) in out.iter_mut().zip(z) {
                *o -= coef[a] * zi;
            }
        }
        out
    }

    pub fn gram_inverse(&self) -> &DMatrix<f64> {
        &self.gram_inv
    }
}

fn f_pos(s: f64, p: f64) -> f64 {
    if s > 0.0 {
        s.powf(p)
    } else {
        0.0
    }
}

fn df_pos(s: f64, p: f64) -> f64 {
    if s > 0.0 {
        p * s.powf(p - 1.0)
    } else {
        0.0
    }
}

/// Solve the saddle-point system `[A −C; −Cᵀ 0][x; λ] = [r; r₂]` by MINRES
/// preconditioned with `diag(MG(K), G⁻¹)`.
fn bordered_solve(
    sys: &FvSystem,
    shift: &[f64],
    basis: &KernelBasis,
    r: &[f64],
    r2: &[f64],
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let n = sys.len();
    let k = basis.len();
    let a = FnOperator {
        n: n + k,
        f: |z: &[f64], y: &mut [f64]| {
            sys.stiffness.matvec_into(&z[..n], &mut y[..n]);
            for i in 0..n {
                y[i] -= shift[i] * z[i];
            }
            for (b, c) in basis.c.iter().enumerate() {
                let lam = z[n + b];
                for i in 0..n {
                    y[i] -= lam * c[i];
                }
                y[n + b] = -dot(c, &z[..n]);
            }
        },
    };
    let mg = sys.preconditioner();
    let ginv = basis.gram_inverse();
    let m = FnOperator {
        n: n + k,
        f: |z: &[f64], y: &mut [f64]| {
            mg.apply(&z[..n], &mut y[..n]);
            let t = ginv * DVector::from_column_slice(&z[n..]);
            y[n..].copy_from_slice(t.as_slice());
        },
    };
    let mut rhs = r.to_vec();
    rhs.extend_from_slice(r2);
    let (x, st) = minres(&a, &m, &rhs, SolveOptions { tol, max_iter: 3000 })?;
    Ok((x[..n].to_vec(), x[n..].to_vec(), st.iterations))
}

#[derive(Clone, Debug, Serialize)]
pub struct CorrectionResult {
    #[serde(skip)]
    pub phi: Vec<f64>,
    #[serde(skip)]
    pub v: Vec<f64>,
    pub lambda: Vec<f64>,
    pub iterations: usize,
    pub inner_iterations: usize,
    /// Contraction factor estimated from successive updates.
    pub kappa: f64,
    pub phi_norm: f64,
    pub v_norm: f64,
    /// `max_j |(φ, P_εψ^j)| / (‖φ‖ ‖P_εψ^j‖)`.
    pub orthogonality: f64,
    /// `‖Π^⊥[V+φ − i*(Q f(V+φ))]‖ / ‖V‖`.
    pub orthogonal_residual: f64,
    pub gram_condition: f64,
}

/// Everything a correction solve produces and later stages reuse.
pub struct Reduction {
    pub basis: KernelBasis,
    pub q: Vec<f64>,
    pub correction: CorrectionResult,
}

/// Fixed-point iteration `φ ↦ T(φ)` with `T` built from the linearization at `V`.
pub fn solve_correction(cfg: &ReductionConfig, sys: &FvSystem, tol: f64, max_iter: usize) -> Result<Reduction> {
    let basis = kernel_basis(cfg, sys)?;
    let p = cfg.p();
    let q = sys.sample(|x| cfg.q.eval(x));
    let gamma0 = cfg.gamma0();
    let v: Vec<f64> = project(sys, &cfg.bubble(), cfg.linear_tol)?.into_iter().map(|x| gamma0 * x).collect();
    let mq: Vec<f64> = sys.mass.iter().zip(&q).map(|(m, q)| m * q).collect();
    let frozen: Vec<f64> = v.iter().zip(&mq).map(|(&vi, &w)| w * df_pos(vi, p)).collect();
    let kv = sys.stiffness.matvec(&v);
    let v_norm = dot(&v, &kv).max(0.0).sqrt();
    let n = sys.len();
    let mut phi = vec![0.0; n];
    let mut lambda = vec![0.0; basis.len()];
    let mut diffs: Vec<f64> = Vec::new();
    let mut inner = 0usize;
    let mut kappa = 0.0;
    let mut iterations = 0;
    let minres_tol = 1e-8;
    for it in 1..=max_iter {
        iterations = it;
        // (K − M Q f'(w)) φ_{k+1} − C λ = M Q (f(V+φ_k) − f'(w) φ_k) − K V,
        // solved for the update against the current residual.
        let newton: Vec<f64>;
        let shift: &[f64] = match cfg.method {
            CorrectionMethod::Frozen => &frozen,
            CorrectionMethod::Newton => {
                newton = (0..n).map(|i| mq[i] * df_pos(v[i] + phi[i], p)).collect();
                &newton
            }
        };
        let kphi = sys.stiffness.matvec(&phi);
        let mut r: Vec<f64> = (0..n).map(|i| mq[i] * f_pos(v[i] + phi[i], p) - kv[i] - kphi[i]).collect();
        for (c, l) in basis.c.iter().zip(&lambda) {
            axpy(*l, c, &mut r);
        }
        let r2: Vec<f64> = basis.c.iter().map(|c| dot(c, &phi)).collect();
        let (diff, dlam, its) = bordered_solve(sys, shift, &basis, &r, &r2, minres_tol)?;
        inner += its;
        let dn = sys.h1_norm(&diff);
        axpy(1.0, &diff, &mut phi);
        for (l, d) in lambda.iter_mut().zip(&dlam) {
            *l += d;
        }
        if let Some(&prev) = diffs.last() {
            if prev > 0.0 {
                kappa = dn / prev;
            }
        }
        diffs.push(dn);
        let scale = sys.h1_norm(&phi).max(1e-300);
        if dn <= tol * scale || dn <= 1e-14 * v_norm {
            break;
        }
        if it >= 3 && kappa >= 1.0 {
            return Err(Error::Divergence(kappa));
        }
    }
    let last = diffs.last().copied().unwrap_or(0.0);
    if last > tol * sys.h1_norm(&phi).max(1e-300) && last > 1e-14 * v_norm {
        return Err(Error::NoConvergence { solver: "correction map", iterations, residual: last });
    }
    let phi_norm = sys.h1_norm(&phi);
    let orthogonality = basis
        .c
        .iter()
        .zip(&basis.z)
        .map(|(c, z)| dot(c, &phi).abs() / (phi_norm * dot(c, z).sqrt()).max(1e-300))
        .fold(0.0, f64::max);
    let u: Vec<f64> = v.iter().zip(&phi).map(|(a, b)| a + b).collect();
    let fp = fixed_point_defect(sys, &q, &u, p, cfg.linear_tol)?;
    let orthogonal_residual = sys.h1_norm(&basis.project_orthogonal(&fp)) / v_norm.max(1e-300);
    Ok(Reduction {
        correction: CorrectionResult {
            phi,
            v,
            lambda,
            iterations,
            inner_iterations: inner,
            kappa,
            phi_norm,
            v_norm,
            orthogonality,
            orthogonal_residual,
            gram_condition: basis.condition,
        },
        basis,
        q,
    })
}

/// `i*_ε[w]`: solve `−Δv = w` on the punctured mask.
pub fn istar(sys: &FvSystem, w: &[f64], tol: f64) -> Result<Vec<f64>> {
    Ok(sys.solve(&sys.load(w), tol)?.0)
}

/// `u − i*_ε[Q f(u)]`.
pub fn fixed_point_defect(sys: &FvSystem, q: &[f64], u: &[f64], p: f64, tol: f64) -> Result<Vec<f64>> {
    let w: Vec<f64> = u.iter().zip(q).map(|(&a, &b)| b * f_pos(a, p)).collect();
    let v = istar(sys, &w, tol)?;
    Ok(u.iter().zip(&v).map(|(a, b)| a - b).collect())
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EnergyValue {
    pub value: f64,
    /// `‖u − i*_ε[Q f(u)]‖` in the discrete `H¹₀` norm.
    pub gradient_norm: f64,
}

/// `J_ε(u) = ½∫|∇u|² − 1/(p+1) ∫ Q|u|^{p+1}` on the grid.
pub fn energy_value(sys: &FvSystem, q: &[f64], u: &[f64], p: f64) -> f64 {
    let kin = 0.5 * sys.inner(u, u);
    let pot: f64 = (0..u.len()).map(|i| sys.mass[i] * q[i] * u[i].abs().powf(p + 1.0)).sum();
    kin - pot / (p + 1.0)
}

pub fn energy(sys: &FvSystem, q: &[f64], u: &[f64], p: f64, tol: f64) -> Result<EnergyValue> {
    let value = energy_value(sys, q, u, p);
    let d = fixed_point_defect(sys, q, u, p, tol)?;
    Ok(EnergyValue { value, gradient_norm: sys.h1_norm(&d) })
}

#[derive(Clone, Debug, Serialize)]
pub struct ReducedEnergy {
    pub eps: f64,
    pub delta: f64,
    pub d: f64,
    pub eta: Vec<f64>,
    pub value: f64,
    pub correction: CorrectionResult,
}

/// `J̃_ε(d,η) = J_ε(V + φ)`.
pub fn reduced_energy(cfg: &ReductionConfig, sys: &FvSystem, tol: f64, max_iter: usize) -> Result<(ReducedEnergy, Reduction)> {
    let red = solve_correction(cfg, sys, tol, max_iter)?;
    let u: Vec<f64> = red.correction.v.iter().zip(&red.correction.phi).map(|(a, b)| a + b).collect();
    let value = energy_value(sys, &red.q, &u, cfg.p());
    Ok((
        ReducedEnergy {
            eps: cfg.pd.eps,
            delta: cfg.delta(),
            d: cfg.d,
            eta: cfg.eta.clone(),
            value,
            correction: red.correction.clone(),
        },
        red,
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct NewtonResult {
    #[serde(skip)]
    pub u: Vec<f64>,
    pub iterations: usize,
    pub inner_iterations: usize,
    /// `‖K u − M Q f(u)‖ / ‖M Q f(u)‖`.
    pub residual: f64,
    pub history: Vec<f64>,
    pub positive: bool,
    pub peak: f64,
    /// Peak location in grid coordinates.
    pub peak_at: Vec<f64>,
}

/// Newton's method for `K u = M Q f(u)` with MINRES inner solves.
pub fn newton_solve(sys: &FvSystem, q: &[f64], u0: &[f64], p: f64, tol: f64, max_iter: usize) -> Result<NewtonResult> {
    let n = sys.len();
    let mq: Vec<f64> = sys.mass.iter().zip(q).map(|(m, q)| m * q).collect();
    let mut u = u0.to_vec();
    let u0_norm = sys.h1_norm(u0);
    let mut history = Vec::new();
    let mut inner = 0usize;
    let mg = sys.preconditioner();
    let mut iterations = 0;
    let residual_of = |u: &[f64]| -> (Vec<f64>, f64) {
        let ku = sys.stiffness.matvec(u);
        let src: Vec<f64> = (0..n).map(|i| mq[i] * f_pos(u[i], p)).collect();
        let r: Vec<f64> = ku.iter().zip(&src).map(|(a, b)| a - b).collect();
        let scale = norm2(&src);
        let rn = norm2(&r);
        (r, if scale > 0.0 { rn / scale } else { rn })
    };
    let (mut r, mut rel) = residual_of(&u);
    history.push(rel);
    while rel > tol {
        if iterations == max_iter {
            return Err(Error::NoConvergence { solver: "Newton", iterations, residual: rel });
        }
        iterations += 1;
        let shift: Vec<f64> = (0..n).map(|i| mq[i] * df_pos(u[i], p)).collect();
        let jac = FnOperator {
            n,
            f: |x: &[f64], y: &mut [f64]| {
                sys.stiffness.matvec_into(x, y);
                for i in 0..n {
                    y[i] -= shift[i] * x[i];
                }
            },
        };
        let (du, st) = minres(&jac, mg, &r, SolveOptions { tol: 1e-8, max_iter: 4000 })?;
        inner += st.iterations;
        for (ui, di) in u.iter_mut().zip(&du) {
            *ui -= di;
        }
        let next = residual_of(&u);
        r = next.0;
        rel = next.1;
        history.push(rel);
        if u0_norm > 0.0 && sys.h1_norm(&u) < 1e-6 * u0_norm {
            return Err(Error::BasinEscape(sys.h1_norm(&u)));
        }
    }
    let (imax, peak) = u.iter().enumerate().fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    let min = u.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut peak_at = vec![0.0; sys.grid.dim()];
    sys.point(imax, &mut peak_at);
    Ok(NewtonResult {
        positive: min >= -1e-8 * peak.abs().max(1e-300),
        u,
        iterations,
        inner_iterations: inner,
        residual: rel,
        history,
        peak,
        peak_at,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct InequalityReport {
    pub samples: usize,
    /// Largest observed `||a+b|^q − a^q| / (c (a^{q−1}|b| + |b|^q))` for `q ≥ 1`.
    pub max_ratio_q_ge_1: f64,
    /// Largest observed `||a+b|^q − a^q| / (2 min{|b|^q, a^{q−1}|b|})` for `0 < q < 1`.
    pub max_ratio_q_lt_1: f64,
}

pub fn inequality_constant(q: f64) -> f64 {
    if q >= 1.0 {
        q * 2f64.powf(q - 1.0) + 1.0
    } else {
        2.0
    }
}

/// Ratio of the left side to the right side of the elementary inequality.
pub fn inequality_ratio(a: f64, b: f64, q: f64) -> f64 {
    let lhs = ((a + b).abs().powf(q) - a.powf(q)).abs();
    if lhs == 0.0 {
        return 0.0;
    }
    let c = inequality_constant(q);
    let rhs = if q >= 1.0 {
        c * (a.powf(q - 1.0) * b.abs() + b.abs().powf(q))
    } else {
        let t = if a > 0.0 { a.powf(q - 1.0) * b.abs() } else { f64::INFINITY };
        c * b.abs().powf(q).min(t)
    };
    lhs / rhs
}

/// Randomized check of the elementary inequalities with `q ∈ (0, q_max]`.
pub fn elementary_inequality_test(samples: usize, q_max: f64, seed: u64) -> InequalityReport {
    let mut hi: f64 = 0.0;
    let mut lo: f64 = 0.0;
    let mut r = rng::stream(seed, 0);
    for s in 0..samples {
        let q = if s % 2 == 0 { rng::uniform(&mut r, 1.0, q_max.max(1.0)) } else { rng::uniform(&mut r, 1e-3, 1.0) };
        let a = 10f64.powf(rng::uniform(&mut r, -4.0, 3.0));
        let a = if s % 97 == 0 { 0.0 } else { a };
        let sign = if rng::uniform(&mut r, 0.0, 1.0) < 0.5 { -1.0 } else { 1.0 };
        let b = sign * 10f64.powf(rng::uniform(&mut r, -4.0, 3.0));
        let ratio = inequality_ratio(a, b, q);
        if q >= 1.0 {
            hi = hi.max(ratio);
        } else {
            lo = lo.max(ratio);
        }
    }
    InequalityReport { samples, max_ratio_q_ge_1: hi, max_ratio_q_lt_1: lo }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{puncture, symmetry_reduce, Domain, Grid, GridSpec, Refinement};
    use std::sync::Arc;

    fn meridian_system(eps: f64) -> (PuncturedDomain, FvSystem) {
        let d = symmetry_reduce(&Domain::unit_ball(3), SymmetryGroup::Orthogonal { m: 2 }).unwrap();
        let pd = puncture(&d, vec![0.0, 0.0], eps).unwrap();
        let spec = GridSpec {
            h: 1.0 / 32.0,
            refinement: Some(Refinement { center: vec![0.0, 0.0], h_min: eps / 4.0, growth: 1.1 }),
            mirror: vec![],
        };
        let g = Arc::new(Grid::build(&d, Some(&pd), &spec).unwrap());
        (pd, FvSystem::assemble(g, MaskSelector::Punctured).unwrap())
    }

    fn config(pd: &PuncturedDomain, q: CoefficientField, eta: f64) -> ReductionConfig {
        ReductionConfig::new(pd.clone(), q, SymmetryGroup::Orthogonal { m: 2 }, 1.0, vec![eta, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn projection_properties() {
        let (pd, sys) = meridian_system(1e-3);
        let cfg = config(&pd, CoefficientField::Constant(1.0), 0.3);
        let b = kernel_basis(&cfg, &sys).unwrap();
        assert_eq!(b.js, vec![0, 1]);
        let u = sys.sample(|x| (1.0 - x.iter().map(|v| v * v).sum::<f64>()).max(0.0) * (1.0 + x[0]));
        let pu = b.project_orthogonal(&u);
        let ppu = b.project_orthogonal(&pu);
        let nu = sys.h1_norm(&u);
        assert!(b.moments(&pu).amax() < 1e-10 * nu * nu);
        assert!(ppu.iter().zip(&pu).all(|(a, c)| (a - c).abs() < 1e-9 * nu));
        let par: Vec<f64> = u.iter().zip(&pu).map(|(a, c)| a - c).collect();
        let pyth = sys.h1_norm(&pu).powi(2) + sys.h1_norm(&par).powi(2);
        assert!((pyth - nu * nu).abs() < 1e-9 * nu * nu);
        let zb = b.project_orthogonal(&b.z[1]);
        assert!(sys.h1_norm(&zb) < 1e-8 * sys.h1_norm(&b.z[1]));
    }

    #[test]
    fn correction_is_small_and_orthogonal() {
        let (pd, sys) = meridian_system(1e-3);
        let cfg = config(&pd, CoefficientField::quadratic_tilt(3, 1.0, 2.0), 0.2);
        let red = solve_correction(&cfg, &sys, 1e-9, 30).unwrap();
        let c = &red.correction;
        assert!(c.kappa < 1.0);
        assert!(c.orthogonality < 1e-8, "{}", c.orthogonality);
        assert!(c.phi_norm < 0.2 * c.v_norm);
        assert!(c.orthogonal_residual < 1e-6, "{}", c.orthogonal_residual);
    }

    #[test]
    fn frozen_map_contracts_to_same_fixed_point() {
        let (pd, sys) = meridian_system(1e-5);
        let mut cfg = config(&pd, CoefficientField::Constant(1.0), 0.0);
        let newton = solve_correction(&cfg, &sys, 1e-9, 30).unwrap().correction;
        cfg.method = CorrectionMethod::Frozen;
        let frozen = solve_correction(&cfg, &sys, 1e-9, 200).unwrap().correction;
        assert!(frozen.kappa < 1.0);
        let diff: Vec<f64> = newton.phi.iter().zip(&frozen.phi).map(|(a, b)| a - b).collect();
        assert!(sys.h1_norm(&diff) < 1e-6 * newton.phi_norm, "{} {}", sys.h1_norm(&diff), newton.phi_norm);
    }

    #[test]
    fn energy_scan_matches_closed_form_maximum() {
        let (_, sys) = meridian_system(1e-2);
        let q = vec![1.0; sys.len()];
        let u0 = sys.sample(|x| (1.0 - x.iter().map(|v| v * v).sum::<f64>()).max(0.0));
        let p = 5.0;
        let a = 0.5 * sys.inner(&u0, &u0);
        let b: f64 = (0..u0.len()).map(|i| sys.mass[i] * u0[i].powf(p + 1.0)).sum::<f64>() / (p + 1.0);
        let tstar = (2.0 * a / ((p + 1.0) * b)).powf(1.0 / (p - 1.0));
        let mut best = (0.0, f64::NEG_INFINITY);
        for k in 1..4000 {
            let t = k as f64 * 1e-3;
            let u: Vec<f64> = u0.iter().map(|v| t * v).collect();
            let j = energy_value(&sys, &q, &u, p);
            if j > best.1 {
                best = (t, j);
            }
        }
        assert!((best.0 - tstar).abs() <= 1e-3, "{} vs {tstar}", best.0);
        assert_eq!(energy_value(&sys, &q, &vec![0.0; sys.len()], p), 0.0);
    }

    #[test]
    fn istar_is_linear_and_zero_preserving() {
        let (_, sys) = meridian_system(1e-2);
        assert!(istar(&sys, &vec![0.0; sys.len()], 1e-10).unwrap().iter().all(|&v| v == 0.0));
        let f = sys.sample(|x| 1.0 + x[0]);
        let g: Vec<f64> = f.iter().map(|v| 3.0 * v).collect();
        let (a, b) = (istar(&sys, &f, 1e-12).unwrap(), istar(&sys, &g, 1e-12).unwrap());
        assert!(a.iter().zip(&b).all(|(x, y)| (3.0 * x - y).abs() < 1e-9 * y.abs().max(1e-3)));
    }

    #[test]
    fn newton_from_zero_stays_trivial() {
        let (_, sys) = meridian_system(1e-2);
        let q = vec![1.0; sys.len()];
        let r = newton_solve(&sys, &q, &vec![0.0; sys.len()], 5.0, 1e-10, 5).unwrap();
        assert_eq!(r.iterations, 0);
        assert!(r.u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inequality_examples() {
        assert_eq!(inequality_ratio(1.0, 0.0, 2.5), 0.0);
        assert!(inequality_ratio(2.0, -0.7, 1.0) <= 1.0);
        let rep = elementary_inequality_test(20_000, 6.0, 3);
        assert!(rep.max_ratio_q_ge_1 <= 1.0 && rep.max_ratio_q_lt_1 <= 1.0);
    }
}
