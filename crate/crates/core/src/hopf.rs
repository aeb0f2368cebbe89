//! Composition algebras `R, C, H, O`, the quadratic Hopf maps built on them,
//! and pointwise checks of the harmonic-morphism identities that transfer
//! solutions between the critical problem downstairs and a supercritical one
//! upstairs.

use crate::bubbles::Exponent;
use crate::geometry::Domain;
use crate::rng::{normal, stream, uniform, unit_vector};
use crate::{Error, Result};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// An element of `R`, `C`, `H` or `O` in the Cayley–Dickson basis.
#[derive(Clone, Debug, PartialEq)]
pub struct KElement {
    pub coords: Vec<f64>,
}

fn check_dim(dim: usize) -> Result<()> {
    match dim {
        1 | 2 | 4 | 8 => Ok(()),
        _ => Err(Error::InvalidArgument(format!("algebra dimension {dim} is not 1, 2, 4 or 8"))),
    }
}

fn cd_conj(a: &[f64], out: &mut [f64]) {
    out[0] = a[0];
    for (o, v) in out[1..].iter_mut().zip(&a[1..]) {
        *o = -v;
    }
}

/// `(p, q)(r, s) = (pr − s̄q, sp + qr̄)`.
fn cd_mul(a: &[f64], b: &[f64], out: &mut [f64]) {
    let n = a.len();
    if n == 1 {
        out[0] = a[0] * b[0];
        return;
    }
    let h = n / 2;
    let (p, q) = a.split_at(h);
    let (r, s) = b.split_at(h);
    let mut sc = vec![0.0; h];
    let mut rc = vec![0.0; h];
    cd_conj(s, &mut sc);
    cd_conj(r, &mut rc);
    let mut t1 = vec![0.0; h];
    let mut t2 = vec![0.0; h];
    cd_mul(p, r, &mut t1);
    cd_mul(&sc, q, &mut t2);
    for i in 0..h {
        out[i] = t1[i] - t2[i];
    }
    cd_mul(s, p, &mut t1);
    cd_mul(q, &rc, &mut t2);
    for i in 0..h {
        out[h + i] = t1[i] + t2[i];
    }
}

impl KElement {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        check_dim(coords.len())?;
        Ok(KElement { coords })
    }

    pub fn basis(dim: usize, i: usize) -> Result<Self> {
        check_dim(dim)?;
        if i >= dim {
            return Err(Error::InvalidArgument(format!("basis index {i} out of range for dimension {dim}")));
        }
        let mut c = vec![0.0; dim];
        c[i] = 1.0;
        Ok(KElement { coords: c })
    }

    pub fn random(r: &mut ChaCha8Rng, dim: usize) -> Self {
        KElement { coords: (0..dim).map(|_| normal(r)).collect() }
    }

    pub fn random_unit(r: &mut ChaCha8Rng, dim: usize) -> Self {
        KElement { coords: unit_vector(r, dim) }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn mul(&self, other: &KElement) -> Result<KElement> {
        if self.dim() != other.dim() {
            return Err(Error::InvalidArgument(format!("cannot multiply elements of dimensions {} and {}", self.dim(), other.dim())));
        }
        let mut out = vec![0.0; self.dim()];
        cd_mul(&self.coords, &other.coords, &mut out);
        Ok(KElement { coords: out })
    }

    pub fn conj(&self) -> KElement {
        let mut out = vec![0.0; self.dim()];
        cd_conj(&self.coords, &mut out);
        KElement { coords: out }
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coords.iter().map(|v| v * v).sum()
    }

    pub fn scale(&self, t: f64) -> KElement {
        KElement { coords: self.coords.iter().map(|v| t * v).collect() }
    }

    pub fn sub(&self, other: &KElement) -> KElement {
        KElement { coords: self.coords.iter().zip(&other.coords).map(|(a, b)| a - b).collect() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HopfMapSpec {
    pub dim: usize,
    pub scale: f64,
}

impl HopfMapSpec {
    /// Default scale `s = ½`.
    pub fn new(dim: usize) -> Result<Self> {
        Self::with_scale(dim, 0.5)
    }

    pub fn with_scale(dim: usize, scale: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidArgument(format!("Hopf scale {scale} must be positive")));
        }
        Ok(HopfMapSpec { dim, scale })
    }

    /// Upstairs exponent `(dim K + 3)/(dim K − 1)`; none for `K = R`.
    pub fn upstairs_exponent(&self) -> Option<Exponent> {
        (self.dim > 1).then(|| Exponent::new(self.dim as u64 + 3, self.dim as u64 - 1))
    }

    /// Apply to `z = (z₁, z₂) ∈ R^{2 dim}`.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let (z1, z2) = z.split_at(d);
        let n1: f64 = z1.iter().map(|v| v * v).sum();
        let n2: f64 = z2.iter().map(|v| v * v).sum();
        let mut c = vec![0.0; d];
        cd_conj(z1, &mut c);
        let mut prod = vec![0.0; d];
        cd_mul(&c, z2, &mut prod);
        std::iter::once(self.scale * (n1 - n2)).chain(prod.into_iter().map(|v| 2.0 * self.scale * v)).collect()
    }

    /// Exact Jacobian, `(dim + 1) × 2 dim`, from the bilinear structure.
    pub fn jacobian(&self, z: &[f64]) -> Vec<Vec<f64>> {
        let d = self.dim;
        let s = self.scale;
        let (z1, z2) = z.split_at(d);
        let mut rows = vec![vec![0.0; 2 * d]; d + 1];
        for i in 0..d {
            rows[0][i] = 2.0 * s * z1[i];
            rows[0][d + i] = -2.0 * s * z2[i];
        }
        let mut e = vec![0.0; d];
        let mut ec = vec![0.0; d];
        let mut c1 = vec![0.0; d];
        cd_conj(z1, &mut c1);
        let mut prod = vec![0.0; d];
        for i in 0..d {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[i] = 1.0;
            cd_conj(&e, &mut ec);
            cd_mul(&ec, z2, &mut prod);
            for k in 0..d {
                rows[k + 1][i] = 2.0 * s * prod[k];
            }
            cd_mul(&c1, &e, &mut prod);
            for k in 0..d {
                rows[k + 1][d + i] = 2.0 * s * prod[k];
            }
        }
        rows
    }

    /// `Δh` per component. `h` is quadratic and homogeneous, so
    /// `∂²h/∂z_i² = 2 h(e_i)` exactly.
    pub fn component_laplacians(&self) -> Vec<f64> {
        let m = 2 * self.dim;
        let mut lap = vec![0.0; self.dim + 1];
        for i in 0..m {
            let mut e = vec![0.0; m];
            e[i] = 1.0;
            for (l, v) in lap.iter_mut().zip(self.apply(&e)) {
                *l += 2.0 * v;
            }
        }
        lap
    }
}

pub fn hopf_map(spec: &HopfMapSpec, z1: &KElement, z2: &KElement) -> Result<Vec<f64>> {
    if z1.dim() != spec.dim || z2.dim() != spec.dim {
        return Err(Error::InvalidArgument("points are not in the map's algebra".into()));
    }
    let z: Vec<f64> = z1.coords.iter().chain(&z2.coords).copied().collect();
    Ok(spec.apply(&z))
}

#[derive(Clone, Debug, Serialize)]
pub struct DilationReport {
    pub lambda2: f64,
    /// `max |⟨∇h_i,∇h_j⟩ − λ²δ_ij|`.
    pub conformality_error: f64,
    pub max_component_laplacian: f64,
}

pub fn dilation_check(spec: &HopfMapSpec, z: &[f64]) -> Result<DilationReport> {
    if z.len() != 2 * spec.dim {
        return Err(Error::InvalidArgument(format!("z must have {} coordinates", 2 * spec.dim)));
    }
    let j = spec.jacobian(z);
    let z2: f64 = z.iter().map(|v| v * v).sum();
    let lambda2 = 4.0 * spec.scale * spec.scale * z2;
    let mut err: f64 = 0.0;
    for a in 0..j.len() {
        for b in 0..j.len() {
            let g: f64 = j[a].iter().zip(&j[b]).map(|(x, y)| x * y).sum();
            let target = if a == b { lambda2 } else { 0.0 };
            err = err.max((g - target).abs());
        }
    }
    let max_component_laplacian = spec.component_laplacians().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(DilationReport { lambda2, conformality_error: err, max_component_laplacian })
}

/// Central-difference Laplacian with step `h`.
pub fn fd_laplacian<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], h: f64) -> f64 {
    let mut y = x.to_vec();
    let f0 = f(x);
    let mut s = 0.0;
    for i in 0..x.len() {
        y[i] = x[i] + h;
        let fp = f(&y);
        y[i] = x[i] - h;
        let fm = f(&y);
        y[i] = x[i];
        s += (fp - 2.0 * f0 + fm) / (h * h);
    }
    s
}

fn fd_partial<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], i: usize, h: f64) -> f64 {
    let mut y = x.to_vec();
    y[i] = x[i] + h;
    let fp = f(&y);
    y[i] = x[i] - h;
    let fm = f(&y);
    (fp - fm) / (2.0 * h)
}

pub const FD_STEP: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct TransferReport {
    pub scale: f64,
    pub samples: usize,
    /// `max |−Δv − F(h(z))| / max |F(h(z))|`, where `F(x) = 2|x|(−Δu)(x)`
    /// makes `u` solve `−Δu = F/(2|x|)` and `v = u∘h`.
    pub residual: f64,
    /// Mean of `−Δv / F(h(z))`; equals `2s` by the dilation identity.
    pub factor: f64,
    /// `max |Δv − λ²(Δu)∘h|`, direct versus chain-rule Laplacian, relative.
    pub chain_rule_error: f64,
    /// For the power nonlinearity `f(t) = |t|^{q−1}t`, `q` the upstairs
    /// exponent: `max |R_up − λ² R_down∘h| / max |f(v)|`.
    pub power_mismatch: Option<f64>,
}

/// Pointwise transfer check for a test function `u` on `R^{dim+1}` at the
/// sample points `zs` of `R^{2 dim}`.
pub fn transfer_residual<U: Fn(&[f64]) -> f64 + Sync>(
    spec: &HopfMapSpec,
    u: &U,
    zs: &[Vec<f64>],
    fd_step: f64,
) -> Result<TransferReport> {
    if zs.is_empty() {
        return Err(Error::InvalidArgument("no sample points".into()));
    }
    let q = spec.upstairs_exponent().map(|e| e.value());
    let v = |z: &[f64]| u(&spec.apply(z));
    struct Row {
        lap_v: f64,
        forcing: f64,
        chain: f64,
        power: Option<(f64, f64)>,
    }
    let rows: Vec<Row> = zs
        .par_iter()
        .map(|z| {
            if z.len() != 2 * spec.dim {
                return Err(Error::InvalidArgument(format!("sample has {} coordinates", z.len())));
            }
            let x = spec.apply(z);
            let r = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            let ux = u(&x);
            if !ux.is_finite() || r == 0.0 {
                return Err(Error::InvalidArgument(format!("u is not evaluable at h(z) = {x:?}")));
            }
            let step = fd_step * r.sqrt().max(1e-3);
            let lap_u = fd_laplacian(u, &x, fd_step * r.max(1e-3));
            let lap_v = fd_laplacian(&v, z, step);
            let lambda2 = 4.0 * spec.scale * spec.scale * z.iter().map(|a| a * a).sum::<f64>();
            let power = q.map(|q| {
                let f = |t: f64| t.abs().powf(q - 1.0) * t;
                let up = -lap_v - f(ux);
                let down = -lap_u - f(ux) / (2.0 * r);
                (up - lambda2 * down, f(ux))
            });
            Ok(Row { lap_v, forcing: 2.0 * r * (-lap_u), chain: lambda2 * lap_u, power })
        })
        .collect::<Result<Vec<_>>>()?;
    let fmax = rows.iter().fold(0.0f64, |m, r| m.max(r.forcing.abs()));
    let lmax = rows.iter().fold(0.0f64, |m, r| m.max(r.lap_v.abs()));
    let residual = rows.iter().map(|r| (-r.lap_v - r.forcing).abs()).fold(0.0, f64::max) / fmax.max(f64::MIN_POSITIVE);
    let used: Vec<&Row> = rows.iter().filter(|r| r.forcing.abs() > 1e-3 * fmax).collect();
    let factor = if used.is_empty() {
        f64::NAN
    } else {
        used.iter().map(|r| -r.lap_v / r.forcing).sum::<f64>() / used.len() as f64
    };
    let chain_rule_error =
        rows.iter().map(|r| (r.lap_v - r.chain).abs()).fold(0.0, f64::max) / lmax.max(f64::MIN_POSITIVE);
    let power_mismatch = q.map(|_| {
        let fm = rows.iter().fold(0.0f64, |m, r| m.max(r.power.unwrap().1.abs()));
        rows.iter().map(|r| r.power.unwrap().0.abs()).fold(0.0, f64::max) / fm.max(f64::MIN_POSITIVE)
    });
    Ok(TransferReport { scale: spec.scale, samples: zs.len(), residual, factor, chain_rule_error, power_mismatch })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeridianProblem {
    pub k1: usize,
    pub k2: usize,
    pub m: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct MeridianReport {
    pub problem: MeridianProblem,
    pub samples: usize,
    pub max_residual: f64,
}

impl MeridianProblem {
    pub fn new(k1: usize, k2: usize, m: usize) -> Result<Self> {
        if k1 == 0 || k2 == 0 || m == 0 {
            return Err(Error::InvalidArgument("block dimensions must be >= 1".into()));
        }
        Ok(MeridianProblem { k1, k2, m })
    }

    /// `x = ½ h_R(z) = (½(z₁² − z₂²), z₁z₂)`.
    pub fn map(z: &[f64]) -> [f64; 2] {
        [0.5 * (z[0] * z[0] - z[1] * z[1]), z[0] * z[1]]
    }

    /// Source `F` for which `u` solves `−Δu − (m−1)/x₂ ∂₂u = F(x)/(2|x|)`.
    pub fn forcing<U: Fn(&[f64]) -> f64>(&self, u: &U, x: &[f64], fd_step: f64) -> f64 {
        let r = x[0].hypot(x[1]);
        let h = fd_step;
        let op = -fd_laplacian(u, x, h) - (self.m as f64 - 1.0) / x[1] * fd_partial(u, x, 1, h);
        2.0 * r * op
    }
}

/// Residual of the upstairs meridian equation
/// `−Δv − (k₁−1)/z₁ ∂₁v − (k₂−1)/z₂ ∂₂v = F(h(z))` for `v = u∘h`, where `F`
/// is manufactured from `u` through the downstairs meridian equation.
pub fn meridian_residual<U: Fn(&[f64]) -> f64 + Sync>(
    mp: &MeridianProblem,
    u: &U,
    zs: &[[f64; 2]],
    margin: f64,
    fd_step: f64,
) -> Result<MeridianReport> {
    if zs.is_empty() {
        return Err(Error::InvalidArgument("no sample points".into()));
    }
    let v = |z: &[f64]| u(&MeridianProblem::map(z));
    let res: Vec<f64> = zs
        .par_iter()
        .map(|z| {
            if z[0] < margin || z[1] < margin {
                return Err(Error::InvalidArgument(format!("sample {z:?} is within {margin} of the axes")));
            }
            let h = fd_step;
            let lhs = -fd_laplacian(&v, z, h)
                - (mp.k1 as f64 - 1.0) / z[0] * fd_partial(&v, z, 0, h)
                - (mp.k2 as f64 - 1.0) / z[1] * fd_partial(&v, z, 1, h);
            Ok((lhs - mp.forcing(u, &MeridianProblem::map(z), fd_step)).abs())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MeridianReport { problem: *mp, samples: zs.len(), max_residual: res.into_iter().fold(0.0, f64::max) })
}

/// Sampled description of `U = h(D)`.
#[derive(Clone, Debug)]
pub struct ImageDomain {
    pub spec: HopfMapSpec,
    pub domain: Domain,
    pub samples: Vec<Vec<f64>>,
    pub radius_range: (f64, f64),
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    fiber_samples: Vec<KElement>,
}

pub fn image_domain(spec: &HopfMapSpec, d: &Domain, samples: usize, seed: u64) -> Result<ImageDomain> {
    if d.ambient_dim() != 2 * spec.dim || d.dim() != d.ambient_dim() {
        return Err(Error::InvalidArgument(format!("domain must be a full-dimensional subset of R^{}", 2 * spec.dim)));
    }
    if d.closure_contains(&vec![0.0; 2 * spec.dim]) {
        return Err(Error::InvalidArgument("the origin lies in the closure of D".into()));
    }
    let pts: Vec<Vec<f64>> = d.sample_points(samples, seed).iter().map(|z| spec.apply(z)).collect();
    let m = spec.dim + 1;
    let mut lo = vec![f64::INFINITY; m];
    let mut hi = vec![f64::NEG_INFINITY; m];
    let mut rr = (f64::INFINITY, 0.0f64);
    for p in &pts {
        for k in 0..m {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
        let r = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        rr = (rr.0.min(r), rr.1.max(r));
    }
    let mut rng = stream(seed, u64::MAX);
    let mut fiber_samples = vec![KElement::basis(spec.dim, 0)?];
    if spec.dim > 1 {
        fiber_samples.extend((0..256).map(|_| KElement::random_unit(&mut rng, spec.dim)));
    } else {
        fiber_samples.push(KElement { coords: vec![-1.0] });
    }
    Ok(ImageDomain { spec: *spec, domain: d.clone(), samples: pts, radius_range: rr, lo, hi, fiber_samples })
}

impl ImageDomain {
    /// A point of the fiber `h⁻¹(x)` with `z₁` real and nonnegative.
    pub fn preimage(&self, x: &[f64]) -> Vec<f64> {
        let d = self.spec.dim;
        let s = self.spec.scale;
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let a = ((r + x[0]) / (2.0 * s)).max(0.0).sqrt();
        let mut z = vec![0.0; 2 * d];
        if a > 1e-300 {
            z[0] = a;
            for k in 0..d {
                z[d + k] = x[k + 1] / (2.0 * s * a);
            }
        } else {
            z[d] = (r / s).sqrt();
        }
        z
    }

    /// Membership by searching the sampled fiber `{(ϑz₁, ϑz₂) : |ϑ| = 1}`.
    pub fn contains(&self, x: &[f64]) -> bool {
        let d = self.spec.dim;
        let z = self.preimage(x);
        let z1 = KElement { coords: z[..d].to_vec() };
        let z2 = KElement { coords: z[d..].to_vec() };
        self.fiber_samples.iter().any(|t| {
            let w: Vec<f64> = t.mul(&z1).unwrap().coords.into_iter().chain(t.mul(&z2).unwrap().coords).collect();
            self.domain.contains(&w)
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AlgebraCheck {
    pub dim: usize,
    pub pairs: usize,
    pub norm_multiplicativity: f64,
    pub conjugation: f64,
    /// `a(ab) − (aa)b`, relative.
    pub alternativity: f64,
    /// `(ab)c − a(bc)`, relative; nonzero only for octonions.
    pub associator: f64,
    /// Deviation of `h(ϑz) = h(z)` for random unit `ϑ`; for octonions the
    /// norm and first component of `h`.
    pub invariance: f64,
    pub max_component_laplacian: f64,
    pub dilation: f64,
    /// Transfer at the configured scale.
    pub transfer_half: TransferReport,
    /// Transfer at `s = 1`, for contrast.
    pub transfer_one: TransferReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct HopfCheckReport {
    pub seed: u64,
    pub algebras: Vec<AlgebraCheck>,
    pub exponents_agree: bool,
}

/// Random test function on `R^{m}` drawn from stream `idx`.
pub fn test_function(seed: u64, idx: u64, m: usize) -> impl Fn(&[f64]) -> f64 + Sync {
    let mut r = stream(seed, idx);
    let c: Vec<f64> = (0..m).map(|_| uniform(&mut r, -0.5, 0.5)).collect();
    let a: Vec<f64> = (0..m).map(|_| uniform(&mut r, -1.0, 1.0)).collect();
    let b: Vec<f64> = (0..m).map(|_| uniform(&mut r, -1.0, 1.0)).collect();
    move |x: &[f64]| {
        let d2: f64 = x.iter().zip(&c).map(|(u, v)| (u - v) * (u - v)).sum();
        let la: f64 = x.iter().zip(&a).map(|(u, v)| u * v).sum();
        let lb: f64 = x.iter().zip(&b).map(|(u, v)| u * v).sum();
        (-0.5 * d2).exp() * (1.5 + la) + 0.3 * lb.sin()
    }
}

fn rel(a: f64, scale: f64) -> f64 {
    a / scale.max(f64::MIN_POSITIVE)
}

/// The full battery of algebra and Hopf-map identities for one algebra.
pub fn check_algebra(dim: usize, pairs: usize, transfer_samples: usize, seed: u64, scale: f64, fd_step: f64) -> Result<AlgebraCheck> {
    check_dim(dim)?;
    let chunk = 1024usize;
    let chunks = pairs.div_ceil(chunk);
    let stats: Vec<[f64; 5]> = (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut r = stream(seed, (dim as u64) << 32 | ci as u64);
            let mut acc = [0.0f64; 5];
            let count = chunk.min(pairs - ci * chunk);
            for _ in 0..count {
                let a = KElement::random(&mut r, dim);
                let b = KElement::random(&mut r, dim);
                let c = KElement::random(&mut r, dim);
                let ab = a.mul(&b).unwrap();
                let (na, nb) = (a.norm(), b.norm());
                acc[0] = acc[0].max(rel((ab.norm() - na * nb).abs(), na * nb));
                let aa = a.mul(&a.conj()).unwrap();
                let dev = aa.sub(&KElement::basis(dim, 0).unwrap().scale(na * na)).norm();
                acc[1] = acc[1].max(rel(dev, na * na));
                let alt = a.mul(&ab).unwrap().sub(&a.mul(&a).unwrap().mul(&b).unwrap()).norm();
                acc[2] = acc[2].max(rel(alt, na * na * nb));
                let nc = c.norm();
                let assoc = ab.mul(&c).unwrap().sub(&a.mul(&b.mul(&c).unwrap()).unwrap()).norm();
                acc[3] = acc[3].max(rel(assoc, na * nb * nc));
                let t = KElement::random_unit(&mut r, dim);
                let spec = HopfMapSpec { dim, scale: 1.0 };
                let h0 = hopf_map(&spec, &a, &b).unwrap();
                let h1 = hopf_map(&spec, &t.mul(&a).unwrap(), &t.mul(&b).unwrap()).unwrap();
                let scale = na * na + nb * nb;
                let inv = if dim == 8 {
                    let n0 = h0.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let n1 = h1.iter().map(|v| v * v).sum::<f64>().sqrt();
                    (n0 - n1).abs().max((h0[0] - h1[0]).abs())
                } else {
                    h0.iter().zip(&h1).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
                };
                acc[4] = acc[4].max(rel(inv, scale));
            }
            acc
        })
        .collect();
    let mut acc = [0.0f64; 5];
    for s in &stats {
        for k in 0..5 {
            acc[k] = acc[k].max(s[k]);
        }
    }
    let spec_half = HopfMapSpec::with_scale(dim, scale)?;
    let spec_one = HopfMapSpec::with_scale(dim, 1.0)?;
    let mut r = stream(seed, (dim as u64) << 32 | 0xffff_ffff);
    let zs: Vec<Vec<f64>> = (0..transfer_samples)
        .map(|_| {
            let dir = unit_vector(&mut r, 2 * dim);
            let rad = uniform(&mut r, 0.6, 1.2);
            dir.into_iter().map(|v| rad * v).collect()
        })
        .collect();
    let mut dilation: f64 = 0.0;
    for z in &zs {
        for spec in [&spec_half, &spec_one] {
            let rep = dilation_check(spec, z)?;
            dilation = dilation.max(rel(rep.conformality_error, rep.lambda2));
        }
    }
    let u = test_function(seed, dim as u64, dim + 1);
    let transfer_half = transfer_residual(&spec_half, &u, &zs, fd_step)?;
    let transfer_one = transfer_residual(&spec_one, &u, &zs, fd_step)?;
    let lap = spec_half.component_laplacians().into_iter().chain(spec_one.component_laplacians()).fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(AlgebraCheck {
        dim,
        pairs,
        norm_multiplicativity: acc[0],
        conjugation: acc[1],
        alternativity: acc[2],
        associator: acc[3],
        invariance: acc[4],
        max_component_laplacian: lap,
        dilation,
        transfer_half,
        transfer_one,
    })
}

/// Upstairs `(dim K + 3)/(dim K − 1)` equals downstairs `(n+2)/(n−2)` with
/// `n = dim K + 1`, compared as reduced fractions.
pub fn exponents_agree() -> bool {
    [2u64, 4, 8].iter().all(|&k| Exponent::new(k + 3, k - 1) == Exponent::critical(k as usize + 1))
}

pub fn hopf_check(algebras: &[usize], pairs: usize, transfer_samples: usize, seed: u64, scale: f64, fd_step: f64) -> Result<HopfCheckReport> {
    let algebras = algebras
        .iter()
        .map(|&d| check_algebra(d, pairs, transfer_samples, seed, scale, fd_step))
        .collect::<Result<Vec<_>>>()?;
    Ok(HopfCheckReport { seed, algebras, exponents_agree: exponents_agree() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(c: [f64; 4]) -> KElement {
        KElement::new(c.to_vec()).unwrap()
    }

    #[test]
    fn quaternion_table() {
        let (i, j, k) = (q([0., 1., 0., 0.]), q([0., 0., 1., 0.]), q([0., 0., 0., 1.]));
        assert_eq!(i.mul(&j).unwrap(), k);
        assert_eq!(j.mul(&i).unwrap(), k.scale(-1.0));
        assert_eq!(i.mul(&i).unwrap(), q([-1., 0., 0., 0.]));
    }

    #[test]
    fn conj_reverses_products() {
        let mut r = stream(5, 0);
        for _ in 0..100 {
            let (a, b) = (KElement::random(&mut r, 4), KElement::random(&mut r, 4));
            let lhs = a.mul(&b).unwrap().conj();
            let rhs = b.conj().mul(&a.conj()).unwrap();
            assert!(lhs.sub(&rhs).norm() < 1e-13);
        }
    }

    #[test]
    fn dimension_errors() {
        assert!(KElement::new(vec![0.0; 3]).is_err());
        assert!(q([1., 0., 0., 0.]).mul(&KElement::basis(2, 0).unwrap()).is_err());
        assert!(HopfMapSpec::with_scale(4, 0.0).is_err());
    }

    #[test]
    fn hopf_examples() {
        let s1 = HopfMapSpec::with_scale(1, 1.0).unwrap();
        let h = hopf_map(&s1, &KElement::new(vec![3.0]).unwrap(), &KElement::new(vec![4.0]).unwrap()).unwrap();
        assert_eq!(h, vec![-7.0, 24.0]);
        let s2 = HopfMapSpec::with_scale(2, 1.0).unwrap();
        let h = hopf_map(&s2, &KElement::new(vec![1.0, 0.0]).unwrap(), &KElement::new(vec![0.0, 1.0]).unwrap()).unwrap();
        assert_eq!(h, vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn real_dilation_example() {
        let s = HopfMapSpec::with_scale(1, 1.0).unwrap();
        let j = s.jacobian(&[1.0, 1.0]);
        assert_eq!(j, vec![vec![2.0, -2.0], vec![2.0, 2.0]]);
        let r = dilation_check(&s, &[1.0, 1.0]).unwrap();
        assert_eq!(r.lambda2, 8.0);
        assert_eq!(r.conformality_error, 0.0);
        let half = dilation_check(&HopfMapSpec::new(1).unwrap(), &[1.0, 1.0]).unwrap();
        assert_eq!(half.lambda2, 2.0);
    }

    #[test]
    fn jacobian_matches_differences() {
        let mut r = stream(9, 1);
        for dim in [1usize, 2, 4, 8] {
            let s = HopfMapSpec::with_scale(dim, 0.7).unwrap();
            let z: Vec<f64> = (0..2 * dim).map(|_| normal(&mut r)).collect();
            let j = s.jacobian(&z);
            for i in 0..2 * dim {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[i] += 1e-6;
                zm[i] -= 1e-6;
                let (hp, hm) = (s.apply(&zp), s.apply(&zm));
                for k in 0..=dim {
                    assert!(((hp[k] - hm[k]) / 2e-6 - j[k][i]).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn all_algebras_pass_identities() {
        for dim in [1usize, 2, 4, 8] {
            let c = check_algebra(dim, 2000, 40, 17, 0.5, FD_STEP).unwrap();
            assert!(c.norm_multiplicativity < 1e-12 && c.conjugation < 1e-12 && c.alternativity < 1e-12, "{c:?}");
            assert!(c.invariance < 1e-12 && c.dilation < 1e-10, "{c:?}");
            assert_eq!(c.max_component_laplacian, 0.0);
            assert!(c.transfer_half.residual < 1e-5 && (c.transfer_half.factor - 1.0).abs() < 1e-5, "{c:?}");
            assert!((c.transfer_one.factor - 2.0).abs() < 1e-5, "{c:?}");
            assert!(c.transfer_half.chain_rule_error < 1e-5);
            if dim == 8 {
                assert!(c.associator > 1e-3);
            } else {
                assert!(c.associator < 1e-12);
            }
            if dim > 1 {
                assert!(c.transfer_half.power_mismatch.unwrap() < 1e-5);
                assert!(c.transfer_one.power_mismatch.unwrap() > 0.5);
            }
        }
        assert!(exponents_agree());
    }

    #[test]
    fn zero_function_transfers_trivially() {
        let s = HopfMapSpec::new(2).unwrap();
        let r = transfer_residual(&s, &|_: &[f64]| 0.0, &[vec![0.5, 0.1, -0.3, 0.7]], FD_STEP).unwrap();
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn radial_functions_are_orbit_constant() {
        let s = HopfMapSpec::new(4).unwrap();
        let u = |x: &[f64]| (-x.iter().map(|v| v * v).sum::<f64>()).exp();
        let mut r = stream(3, 3);
        let z1 = KElement::random(&mut r, 4);
        let z2 = KElement::random(&mut r, 4);
        let v0 = u(&hopf_map(&s, &z1, &z2).unwrap());
        for _ in 0..20 {
            let t = KElement::random_unit(&mut r, 4);
            let v = u(&hopf_map(&s, &t.mul(&z1).unwrap(), &t.mul(&z2).unwrap()).unwrap());
            assert!((v - v0).abs() < 1e-14);
        }
    }

    fn quadrant_samples(k: usize, seed: u64) -> Vec<[f64; 2]> {
        let mut r = stream(seed, 0);
        (0..k).map(|_| [uniform(&mut r, 0.4, 1.4), uniform(&mut r, 0.4, 1.4)]).collect()
    }

    #[test]
    fn meridian_necessity_matrix() {
        let u = |x: &[f64]| (0.3 * x[0] - 0.2 * x[1]).exp() + x[0] * x[1] * x[1];
        let zs = quadrant_samples(50, 2);
        for k1 in 1..=3 {
            for k2 in 1..=3 {
                for m in 1..=3 {
                    let rep = meridian_residual(&MeridianProblem::new(k1, k2, m).unwrap(), &u, &zs, 0.1, FD_STEP).unwrap();
                    if k1 == k2 && k2 == m {
                        assert!(rep.max_residual <= 1e-5, "{rep:?}");
                    } else {
                        assert!(rep.max_residual >= 1e-3, "{rep:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn axially_harmonic_linear_case() {
        for m in 1..=3usize {
            let u = move |x: &[f64]| x[0] * x[0] - x[1] * x[1] / m as f64;
            let mp = MeridianProblem::new(m, m, m).unwrap();
            let x = [0.3, 0.7];
            assert!(mp.forcing(&u, &x, FD_STEP).abs() < 1e-6);
            let zs = quadrant_samples(20, 4);
            assert!(meridian_residual(&mp, &u, &zs, 0.1, FD_STEP).unwrap().max_residual < 1e-5);
            let other = MeridianProblem::new(m, m % 3 + 1, m).unwrap();
            assert!(meridian_residual(&other, &u, &zs, 0.1, FD_STEP).unwrap().max_residual >= 1e-3);
        }
        assert!(meridian_residual(&MeridianProblem::new(1, 1, 1).unwrap(), &|_: &[f64]| 0.0, &[[0.01, 1.0]], 0.1, FD_STEP).is_err());
    }

    #[test]
    fn image_of_annulus() {
        let s = HopfMapSpec::new(1).unwrap();
        let d = Domain::annulus(vec![0.0, 0.0], 0.5, 1.0).unwrap();
        let img = image_domain(&s, &d, 4000, 1).unwrap();
        assert!(img.radius_range.0 >= 0.125 - 1e-12 && img.radius_range.1 <= 0.5 + 1e-12);
        assert!(img.radius_range.0 < 0.14 && img.radius_range.1 > 0.48);
        assert!(img.contains(&[0.3, 0.0]) && img.contains(&[-0.2, 0.1]));
        assert!(!img.contains(&[0.1, 0.0]) && !img.contains(&[0.6, 0.0]));
        assert!(image_domain(&s, &Domain::unit_ball(2), 10, 1).is_err());
    }

    #[test]
    fn image_of_small_ball() {
        let s = HopfMapSpec::new(2).unwrap();
        let d = Domain::ball(vec![1.0, 0.0, 0.0, 0.0], 0.05).unwrap();
        let img = image_domain(&s, &d, 2000, 2).unwrap();
        let c = [0.5, 0.0, 0.0];
        for p in &img.samples {
            let dist: f64 = p.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            assert!(dist < 0.06);
        }
        assert!(img.contains(&c));
    }

    #[test]
    fn invariant_domain_images_match_across_orbits() {
        let s = HopfMapSpec::new(2).unwrap();
        let d = Domain::annulus(vec![0.0; 4], 0.5, 1.0).unwrap();
        let img = image_domain(&s, &d, 500, 3).unwrap();
        let mut r = stream(8, 0);
        let z1 = KElement::new(vec![0.3, 0.4]).unwrap();
        let z2 = KElement::new(vec![-0.2, 0.5]).unwrap();
        let h0 = hopf_map(&s, &z1, &z2).unwrap();
        assert!(img.contains(&h0));
        let t = KElement::random_unit(&mut r, 2);
        let h1 = hopf_map(&s, &t.mul(&z1).unwrap(), &t.mul(&z2).unwrap()).unwrap();
        assert!(h0.iter().zip(&h1).all(|(a, b)| (a - b).abs() < 1e-15));
    }
}
