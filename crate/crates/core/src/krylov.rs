//! Preconditioned conjugate gradients and preconditioned MINRES.

use crate::sparse::{axpy, dot, norm2, Csr};
use crate::{Error, Result};

pub trait Operator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl Operator for Csr {
    fn dim(&self) -> usize {
        self.nrows
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec_into(x, y)
    }
}

pub struct Identity(pub usize);

impl Operator for Identity {
    fn dim(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x)
    }
}

/// Operator given by a closure.
pub struct FnOperator<F: Fn(&[f64], &mut [f64])> {
    pub n: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64])> Operator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.f)(x, y)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-10, max_iter: 500 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Relative residual at exit, in the norm the method monitors.
    pub residual: f64,
}

/// PCG for SPD `a`; stops when `‖b − a x‖₂ ≤ tol ‖b‖₂`.
pub fn pcg(
    a: &dyn Operator,
    m: &dyn Operator,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: SolveOptions,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], SolveStats { iterations: 0, residual: 0.0 }));
    }
    let mut r = vec![0.0; n];
    a.apply(&x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z = vec![0.0; n];
    m.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rel = norm2(&r) / bnorm;
    for it in 0..opts.max_iter {
        if rel <= opts.tol {
            return Ok((x, SolveStats { iterations: it, residual: rel }));
        }
        a.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Singular(format!("PCG curvature {pap:e} is not positive")));
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        rel = norm2(&r) / bnorm;
        m.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    if rel <= opts.tol {
        return Ok((x, SolveStats { iterations: opts.max_iter, residual: rel }));
    }
    Err(Error::NoConvergence { solver: "PCG", iterations: opts.max_iter, residual: rel })
}

/// MINRES for symmetric (possibly indefinite) `a` with SPD preconditioner `m`.
/// Stops when the preconditioned residual norm drops below `tol` times its
/// initial value.
pub fn minres(a: &dyn Operator, m: &dyn Operator, b: &[f64], opts: SolveOptions) -> Result<(Vec<f64>, SolveStats)> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r1 = b.to_vec();
    let mut y = vec![0.0; n];
    m.apply(&r1, &mut y);
    let beta1 = dot(&r1, &y);
    if beta1 < 0.0 {
        return Err(Error::Singular("MINRES preconditioner is not positive definite".into()));
    }
    let beta1 = beta1.sqrt();
    if beta1 == 0.0 {
        return Ok((x, SolveStats { iterations: 0, residual: 0.0 }));
    }
    let (mut beta, mut oldb) = (beta1, 0.0);
    let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0, 0.0);
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut r2 = r1.clone();
    let mut v = vec![0.0; n];
    for it in 1..=opts.max_iter {
        for (vi, yi) in v.iter_mut().zip(&y) {
            *vi = yi / beta;
        }
        a.apply(&v, &mut y);
        if it >= 2 {
            axpy(-beta / oldb, &r1, &mut y);
        }
        let alfa = dot(&v, &y);
        axpy(-alfa / beta, &r2, &mut y);
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        m.apply(&r2, &mut y);
        oldb = beta;
        let bb = dot(&r2, &y);
        if bb < 0.0 {
            return Err(Error::Singular("MINRES preconditioner is not positive definite".into()));
        }
        beta = bb.sqrt();
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(1e-300);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        for i in 0..n {
            let w1 = w2[i];
            w2[i] = w[i];
            w[i] = (v[i] - oldeps * w1 - delta * w2[i]) / gamma;
            x[i] += phi * w[i];
        }
        if phibar < opts.tol * beta1 {
            return Ok((x, SolveStats { iterations: it, residual: phibar / beta1 }));
        }
        if beta == 0.0 {
            return Ok((x, SolveStats { iterations: it, residual: phibar / beta1 }));
        }
    }
    Err(Error::NoConvergence { solver: "MINRES", iterations: opts.max_iter, residual: phibar / beta1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize, shift: f64) -> Csr {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 - shift));
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i - 1, i, -1.0));
            }
        }
        Csr::from_triplets(n, n, &t)
    }

    #[test]
    fn cg_solves_spd() {
        let a = tridiag(50, 0.0);
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let (x, st) = pcg(&a, &Identity(50), &b, None, SolveOptions { tol: 1e-12, max_iter: 100 }).unwrap();
        let r = a.matvec(&x);
        let err: f64 = r.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10 && st.iterations <= 50);
    }

    #[test]
    fn minres_solves_indefinite() {
        let a = tridiag(60, 1.3);
        let b: Vec<f64> = (0..60).map(|i| 1.0 + (i % 3) as f64).collect();
        let (x, _) = minres(&a, &Identity(60), &b, SolveOptions { tol: 1e-12, max_iter: 500 }).unwrap();
        let r = a.matvec(&x);
        let err = norm2(&r.iter().zip(&b).map(|(u, v)| u - v).collect::<Vec<_>>()) / norm2(&b);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn budget_exhaustion_reports() {
        let a = tridiag(100, 0.0);
        let b = vec![1.0; 100];
        let e = pcg(&a, &Identity(100), &b, None, SolveOptions { tol: 1e-14, max_iter: 3 }).unwrap_err();
        assert!(matches!(e, Error::NoConvergence { iterations: 3, .. }));
    }
}
