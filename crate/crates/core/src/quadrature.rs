//! Adaptive Gauss–Kronrod quadrature on finite intervals and on `[0, ∞)`.

use crate::{Error, Result};
use std::f64::consts::PI;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights attached to XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            abs: 1e-10,
            rel: 1e-12,
            max_intervals: 4000,
        }
    }
}

impl Tolerance {
    pub fn abs(abs: f64) -> Self {
        Tolerance {
            abs,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

/// One 15-point Kronrod rule with the standard error estimate: the Gauss-Kronrod
/// difference, inflated relative to the integrand's variation on the interval
/// and floored at rounding level.
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut fv = [0.0; 15];
    fv[7] = f(c);
    for i in 0..7 {
        let x = h * XGK[i];
        fv[i] = f(c - x);
        fv[14 - i] = f(c + x);
    }
    let w = |i: usize| WGK[if i < 8 { i } else { 14 - i }];
    let mut k = 0.0;
    let mut abs = 0.0;
    for (i, v) in fv.iter().enumerate() {
        k += w(i) * v;
        abs += w(i) * v.abs();
    }
    let mut g = WG[3] * fv[7];
    for i in (1..7).step_by(2) {
        g += WG[i / 2] * (fv[i] + fv[14 - i]);
    }
    let mean = 0.5 * k;
    let asc: f64 = fv.iter().enumerate().map(|(i, v)| w(i) * (v - mean).abs()).sum::<f64>() * h.abs();
    let mut err = ((k - g) * h).abs();
    if asc > 0.0 && err > 0.0 {
        err = asc * (200.0 * err / asc).powf(1.5).min(1.0);
    }
    err = err.max(50.0 * f64::EPSILON * abs * h.abs());
    (k * h, err)
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

/// Globally adaptive integration: the interval with the largest error
/// estimate is bisected until the summed estimate meets the tolerance.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<QuadResult> {
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            error: 0.0,
            intervals: 0,
        });
    }
    let (v, e) = gk15(&f, a, b);
    let mut pieces = vec![Piece { a, b, value: v, error: e }];
    loop {
        let value: f64 = pieces.iter().map(|p| p.value).sum();
        let error: f64 = pieces.iter().map(|p| p.error).sum();
        let target = tol.abs.max(tol.rel * value.abs());
        if error <= target {
            return Ok(QuadResult {
                value,
                error,
                intervals: pieces.len(),
            });
        }
        if pieces.len() >= tol.max_intervals {
            return Err(Error::Quadrature { error, tol: target });
        }
        let worst = pieces
            .iter()
            .enumerate()
            .fold(0, |w, (i, p)| if p.error > pieces[w].error { i } else { w });
        let p = pieces.swap_remove(worst);
        let m = 0.5 * (p.a + p.b);
        if m <= p.a || m >= p.b {
            return Err(Error::Quadrature { error, tol: target });
        }
        let (v1, e1) = gk15(&f, p.a, m);
        let (v2, e2) = gk15(&f, m, p.b);
        pieces.push(Piece { a: p.a, b: m, value: v1, error: e1 });
        pieces.push(Piece { a: m, b: p.b, value: v2, error: e2 });
    }
}

/// Integral over `[0, ∞)`: `[0, 1]` directly and `[1, ∞)` through `r = 1/u`,
/// so an algebraically decaying tail becomes an endpoint singularity at the
/// exactly representable `u = 0`.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: F, tol: Tolerance) -> Result<QuadResult> {
    let half = Tolerance { abs: 0.5 * tol.abs, ..tol };
    let near = integrate(&f, 0.0, 1.0, half)?;
    let far = integrate(|u: f64| f(1.0 / u) / (u * u), 0.0, 1.0, half)?;
    Ok(QuadResult { value: near.value + far.value, error: near.error + far.error, intervals: near.intervals + far.intervals })
}

/// Integral over `[a, ∞)` with `a ≥ 0`.
pub fn integrate_tail<F: Fn(f64) -> f64>(f: F, a: f64, tol: Tolerance) -> Result<QuadResult> {
    integrate_half_line(|r| f(a + r), tol)
}

/// Surface area of the unit sphere `S^k ⊂ R^{k+1}`.
pub fn sphere_area(k: usize) -> f64 {
    match k {
        0 => 2.0,
        1 => 2.0 * PI,
        _ => 2.0 * PI / (k as f64 - 1.0) * sphere_area(k - 2),
    }
}
