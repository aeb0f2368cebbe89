//! Standard bubbles `U_{δ,ξ}`, their parameter derivatives, the coefficient
//! field `Q`, and the radial bubble integrals.
//!
//! Every radial quantity is written as a function of `t = |x-ξ|²`, so its
//! Laplacian follows from `Δ F(t) = 4t F'' + 2n F'` with hand-written
//! derivatives; the PDE identities are then checked rather than assumed.

use crate::geometry::Domain;
use crate::quadrature::{integrate_half_line, sphere_area, Tolerance};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// The critical exponent `p = (n+2)/(n-2)` kept as a reduced fraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exponent {
    pub num: u64,
    pub den: u64,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Exponent {
    pub fn new(num: u64, den: u64) -> Self {
        let g = gcd(num, den).max(1);
        Exponent { num: num / g, den: den / g }
    }

    pub fn critical(n: usize) -> Self {
        assert!(n >= 3, "critical exponent needs n >= 3");
        Exponent::new(n as u64 + 2, n as u64 - 2)
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// `α_n = [n(n-2)]^{(n-2)/4}`.
pub fn alpha_n(n: usize) -> f64 {
    let nf = n as f64;
    (nf * (nf - 2.0)).powf((nf - 2.0) / 4.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BubbleParams {
    pub n: usize,
    pub delta: f64,
    pub xi: Vec<f64>,
}

impl BubbleParams {
    pub fn new(n: usize, delta: f64, xi: Vec<f64>) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidArgument(format!("bubble dimension n={n} must be >= 3")));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidArgument(format!("bubble scale delta={delta} must be positive")));
        }
        if xi.len() != n {
            return Err(Error::InvalidArgument(format!(
                "bubble center has {} coordinates, expected {n}",
                xi.len()
            )));
        }
        Ok(BubbleParams { n, delta, xi })
    }

    pub fn centered(n: usize, delta: f64) -> Self {
        BubbleParams::new(n, delta, vec![0.0; n]).expect("valid centered bubble")
    }

    pub fn p(&self) -> f64 {
        Exponent::critical(self.n).value()
    }

    fn t(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.xi).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    fn k(&self) -> f64 {
        (self.n as f64 - 2.0) / 2.0
    }

    /// Prefactor `α_n δ^{(n-2)/2}`.
    fn amp(&self) -> f64 {
        alpha_n(self.n) * self.delta.powf(self.k())
    }

    /// `(U, U'(t), U''(t))` as functions of `t = |x-ξ|²`.
    fn radial(&self, t: f64) -> (f64, f64, f64) {
        let k = self.k();
        let a = self.amp();
        let s = self.delta * self.delta + t;
        let u = a * s.powf(-k);
        (u, -k * u / s, k * (k + 1.0) * u / (s * s))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.radial(self.t(x)).0
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let (_, d1, _) = self.radial(self.t(x));
        x.iter().zip(&self.xi).map(|(a, b)| 2.0 * d1 * (a - b)).collect()
    }

    /// Closed-form Laplacian, from the radial derivatives.
    pub fn laplacian(&self, x: &[f64]) -> f64 {
        let t = self.t(x);
        let (_, d1, d2) = self.radial(t);
        4.0 * t * d2 + 2.0 * self.n as f64 * d1
    }

    /// Scale of the terms entering [`Self::laplacian`], for relative checks.
    pub fn laplacian_scale(&self, x: &[f64]) -> f64 {
        let t = self.t(x);
        let (u, d1, d2) = self.radial(t);
        (4.0 * t * d2).abs() + (2.0 * self.n as f64 * d1).abs() + u.powf(self.p())
    }

    /// Kernel functions: `j = 0` is `∂U/∂δ`, `j ≥ 1` is `∂U/∂ξ_j`.
    pub fn psi(&self, j: usize, x: &[f64]) -> Result<f64> {
        self.check_index(j)?;
        let t = self.t(x);
        Ok(if j == 0 {
            self.psi0_radial(t).0
        } else {
            (x[j - 1] - self.xi[j - 1]) * self.psi_j_radial(t).0
        })
    }

    /// Closed-form Laplacian of `ψ^j`.
    pub fn psi_laplacian(&self, j: usize, x: &[f64]) -> Result<f64> {
        self.check_index(j)?;
        let t = self.t(x);
        let n = self.n as f64;
        Ok(if j == 0 {
            let (_, d1, d2) = self.psi0_radial(t);
            4.0 * t * d2 + 2.0 * n * d1
        } else {
            let (_, d1, d2) = self.psi_j_radial(t);
            (x[j - 1] - self.xi[j - 1]) * (4.0 * t * d2 + (2.0 * n + 4.0) * d1)
        })
    }

    /// Sum of the magnitudes of the terms entering [`Self::psi_laplacian`]
    /// and `pU^{p-1}ψ^j`, for relative checks.
    pub fn psi_laplacian_scale(&self, j: usize, x: &[f64]) -> Result<f64> {
        self.check_index(j)?;
        let t = self.t(x);
        let n = self.n as f64;
        let p = self.p();
        let rhs = (p * self.eval(x).powf(p - 1.0) * self.psi(j, x)?).abs();
        Ok(rhs
            + if j == 0 {
                let k = self.k();
                let m = n / 2.0;
                let d2 = self.delta * self.delta;
                let c = (alpha_n(self.n) * k * self.delta.powf(k - 1.0)).abs();
                let s = d2 + t;
                let sm = s.powf(-m);
                let w = (t - d2).abs();
                4.0 * t * c * (2.0 * m * sm / s + m * (m + 1.0) * w * sm / (s * s)) + 2.0 * n * c * (sm + m * w * sm / s)
            } else {
                let (_, d1, d2) = self.psi_j_radial(t);
                (x[j - 1] - self.xi[j - 1]).abs() * (4.0 * t * d2.abs() + (2.0 * n + 4.0) * d1.abs())
            })
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j > self.n {
            return Err(Error::InvalidArgument(format!(
                "kernel index j={j} out of range 0..={}",
                self.n
            )));
        }
        Ok(())
    }

    // ψ⁰ = c (t - δ²) s^{-n/2}, c = α_n k δ^{k-1}.
    fn psi0_radial(&self, t: f64) -> (f64, f64, f64) {
        let k = self.k();
        let m = self.n as f64 / 2.0;
        let d2 = self.delta * self.delta;
        let c = alpha_n(self.n) * k * self.delta.powf(k - 1.0);
        let s = d2 + t;
        let sm = s.powf(-m);
        let w = t - d2;
        (
            c * w * sm,
            c * (sm - m * w * sm / s),
            c * (-2.0 * m * sm / s + m * (m + 1.0) * w * sm / (s * s)),
        )
    }

    // ψ^j = (x_j - ξ_j) B(t), B = 2kA s^{-n/2}.
    fn psi_j_radial(&self, t: f64) -> (f64, f64, f64) {
        let k = self.k();
        let m = self.n as f64 / 2.0;
        let s = self.delta * self.delta + t;
        let b = 2.0 * k * self.amp() * s.powf(-m);
        (b, -m * b / s, m * (m + 1.0) * b / (s * s))
    }
}

/// `W = γ₀ U` with `γ₀ = Q(ξ₀)^{-1/(p-1)}`, so that `-ΔW = Q(ξ₀) W^p`.
#[derive(Clone, Debug, PartialEq)]
pub struct RescaledBubble {
    pub params: BubbleParams,
    pub q0: f64,
    pub gamma0: f64,
}

pub fn gamma0(n: usize, q0: f64) -> f64 {
    q0.powf(-1.0 / (Exponent::critical(n).value() - 1.0))
}

pub fn rescaled_bubble(params: &BubbleParams, q0: f64) -> Result<RescaledBubble> {
    if !(q0 > 0.0) {
        return Err(Error::InvalidArgument(format!("Q(xi0)={q0} must be positive")));
    }
    Ok(RescaledBubble {
        params: params.clone(),
        q0,
        gamma0: gamma0(params.n, q0),
    })
}

impl RescaledBubble {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.gamma0 * self.params.eval(x)
    }

    /// `-ΔW - Q(ξ₀) W^p`, evaluated from closed forms.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let w = self.eval(x);
        -self.gamma0 * self.params.laplacian(x) - self.q0 * w.powf(self.params.p())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    pub powers: Vec<u32>,
}

/// The weight `Q` of the nonlinearity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CoefficientField {
    Constant(f64),
    /// `Q(x) = 1/(2|x|)`.
    InverseHalfNorm,
    Affine { c: f64, g: Vec<f64> },
    Polynomial { terms: Vec<Monomial> },
}

impl CoefficientField {
    /// `q0 · (1 + κ t + κ² t²/2)` in the first coordinate: strictly positive
    /// everywhere with `∇Q/Q = κ e₁` at points where `t = 0`.
    pub fn quadratic_tilt(n: usize, q0: f64, kappa: f64) -> Self {
        let mono = |coef: f64, p: u32| {
            let mut powers = vec![0; n];
            powers[0] = p;
            Monomial { coef, powers }
        };
        CoefficientField::Polynomial {
            terms: vec![
                mono(q0, 0),
                mono(q0 * kappa, 1),
                mono(0.5 * q0 * kappa * kappa, 2),
            ],
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            CoefficientField::Constant(c) => *c,
            CoefficientField::InverseHalfNorm => 0.5 / norm(x),
            CoefficientField::Affine { c, g } => c + g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>(),
            CoefficientField::Polynomial { terms } => terms
                .iter()
                .map(|m| m.coef * m.powers.iter().zip(x).map(|(&p, &xi)| xi.powi(p as i32)).product::<f64>())
                .sum(),
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        match self {
            CoefficientField::Constant(_) => vec![0.0; x.len()],
            CoefficientField::InverseHalfNorm => {
                let r = norm(x);
                x.iter().map(|xi| -0.5 * xi / (r * r * r)).collect()
            }
            CoefficientField::Affine { g, .. } => g.clone(),
            CoefficientField::Polynomial { terms } => {
                let mut out = vec![0.0; x.len()];
                for m in terms {
                    for (i, o) in out.iter_mut().enumerate() {
                        let pi = m.powers.get(i).copied().unwrap_or(0);
                        if pi == 0 {
                            continue;
                        }
                        let mut v = m.coef * pi as f64;
                        for (k, (&p, &xk)) in m.powers.iter().zip(x).enumerate() {
                            let e = if k == i { p - 1 } else { p };
                            v *= xk.powi(e as i32);
                        }
                        *o += v;
                    }
                }
                out
            }
        }
    }

    /// Sampled check of `min Q > 0` on the closure of `domain`.
    pub fn check_positive(&self, domain: &Domain, samples: usize) -> Result<f64> {
        if let CoefficientField::InverseHalfNorm = self {
            let origin = vec![0.0; domain.ambient_dim()];
            if domain.closure_contains(&domain.to_reduced(&origin)) {
                return Err(Error::InvalidArgument(
                    "Q = 1/(2|x|) needs the origin outside the closed domain".into(),
                ));
            }
        }
        let mut min = f64::INFINITY;
        for x in domain.sample_points(samples, 0x51) {
            min = min.min(self.eval(&domain.to_ambient(&x)));
        }
        if !(min > 0.0) {
            return Err(Error::InvalidArgument(format!("Q is not positive on the domain (min {min:.3e})")));
        }
        Ok(min)
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BubbleIntegrals {
    pub n: usize,
    /// `∫ U_{1,0}^p`.
    pub ip: f64,
    /// `∫ U_{1,0}^{p+1}`.
    pub ip1: f64,
    pub err_ip: f64,
    pub err_ip1: f64,
}

/// `|S^{n-1}| ∫₀^∞ U(r)^q r^{n-1} dr` for the unit bubble.
pub fn radial_bubble_integral(n: usize, q: f64, tol: f64) -> Result<(f64, f64)> {
    let a = alpha_n(n);
    let nf = n as f64;
    let w = sphere_area(n - 1);
    let r = integrate_half_line(
        |r: f64| {
            if !r.is_finite() {
                return 0.0;
            }
            (a / (1.0 + r * r).powf((nf - 2.0) / 2.0)).powf(q) * r.powf(nf - 1.0)
        },
        Tolerance { abs: tol / w, rel: 1e-13, max_intervals: 20_000 },
    )?;
    Ok((w * r.value, w * r.error))
}

pub fn bubble_integrals(n: usize, tol: f64) -> Result<BubbleIntegrals> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!("n={n} must be >= 3")));
    }
    let p = Exponent::critical(n).value();
    let (ip, err_ip) = radial_bubble_integral(n, p, tol)?;
    let (ip1, err_ip1) = radial_bubble_integral(n, p + 1.0, tol)?;
    Ok(BubbleIntegrals { n, ip, ip1, err_ip, err_ip1 })
}
