//! Domains, punctured domains, symmetry groups and tensor-product grids.
//!
//! A domain may be stored in meridian form: for `Γ = O(m)` acting on the last
//! `m` coordinates of `R^n`, points are written `(t_1, …, t_{n-m}, ρ)` with
//! `ρ = |ζ| ≥ 0`. Grids always live in the coordinates of their domain.

use crate::rng;
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Annulus { center: Vec<f64>, inner: f64, outer: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub shape: Shape,
    /// `Some(m)`: the last coordinate is `ρ = |ζ|`, `ζ ∈ R^m`.
    pub meridian: Option<usize>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl Domain {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.len() < 2 {
            return Err(Error::InvalidDomain("dimension must be at least 2".into()));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidDomain(format!("ball radius {radius} must be positive")));
        }
        Ok(Domain { shape: Shape::Ball { center, radius }, meridian: None })
    }

    pub fn unit_ball(n: usize) -> Self {
        Domain::ball(vec![0.0; n], 1.0).expect("unit ball")
    }

    pub fn cuboid(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() < 2 {
            return Err(Error::InvalidDomain("box corners must share a dimension >= 2".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(b > a) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::InvalidDomain("box extents must be strictly positive".into()));
        }
        Ok(Domain { shape: Shape::Box { lo, hi }, meridian: None })
    }

    pub fn annulus(center: Vec<f64>, inner: f64, outer: f64) -> Result<Self> {
        if center.len() < 2 {
            return Err(Error::InvalidDomain("dimension must be at least 2".into()));
        }
        if !(inner > 0.0) || !(outer > inner) || !outer.is_finite() {
            return Err(Error::InvalidDomain(format!(
                "annulus radii must satisfy 0 < inner < outer (got {inner}, {outer})"
            )));
        }
        Ok(Domain { shape: Shape::Annulus { center, inner, outer }, meridian: None })
    }

    /// Number of coordinates in which points of this domain are written.
    pub fn dim(&self) -> usize {
        match &self.shape {
            Shape::Ball { center, .. } | Shape::Annulus { center, .. } => center.len(),
            Shape::Box { lo, .. } => lo.len(),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self.meridian {
            Some(m) => self.dim() + m - 1,
            None => self.dim(),
        }
    }

    fn shape_value(&self, x: &[f64]) -> f64 {
        // Negative inside, positive outside, zero on the boundary.
        match &self.shape {
            Shape::Ball { center, radius } => dist2(x, center) - radius * radius,
            Shape::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (a, b))| (a - v).max(v - b))
                .fold(f64::NEG_INFINITY, f64::max),
            Shape::Annulus { center, inner, outer } => {
                let d2 = dist2(x, center);
                (d2 - outer * outer).max(inner * inner - d2)
            }
        }
    }

    /// Strict membership: boundary points are outside.
    pub fn contains(&self, x: &[f64]) -> bool {
        if self.meridian.is_some() && x[x.len() - 1] < 0.0 {
            return false;
        }
        self.shape_value(x) < 0.0
    }

    pub fn closure_contains(&self, x: &[f64]) -> bool {
        if self.meridian.is_some() && x[x.len() - 1] < 0.0 {
            return false;
        }
        self.shape_value(x) <= 0.0
    }

    /// Distance to `∂Ω`; the symmetry axis of a meridian domain is not boundary.
    pub fn dist_to_boundary(&self, x: &[f64]) -> f64 {
        match &self.shape {
            Shape::Ball { center, radius } => radius - dist2(x, center).sqrt(),
            Shape::Box { lo, hi } => {
                let d = x.len();
                let mut m = f64::INFINITY;
                for i in 0..d {
                    if !(self.meridian.is_some() && i == d - 1) {
                        m = m.min(x[i] - lo[i]);
                    }
                    m = m.min(hi[i] - x[i]);
                }
                m
            }
            Shape::Annulus { center, inner, outer } => {
                let r = dist2(x, center).sqrt();
                (r - inner).min(outer - r)
            }
        }
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let (mut lo, hi) = match &self.shape {
            Shape::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect::<Vec<_>>(),
                center.iter().map(|c| c + radius).collect(),
            ),
            Shape::Annulus { center, outer, .. } => (
                center.iter().map(|c| c - outer).collect(),
                center.iter().map(|c| c + outer).collect(),
            ),
            Shape::Box { lo, hi } => (lo.clone(), hi.clone()),
        };
        if self.meridian.is_some() {
            let d = lo.len();
            lo[d - 1] = 0.0;
        }
        (lo, hi)
    }

    /// Smallest extent of the bounding box (full diameter, also for meridian domains).
    pub fn narrowest_extent(&self) -> f64 {
        match &self.shape {
            Shape::Ball { radius, .. } => 2.0 * radius,
            Shape::Annulus { inner, outer, .. } => outer - inner,
            Shape::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| b - a).fold(f64::INFINITY, f64::min),
        }
    }

    /// Lift a point written in domain coordinates to `R^n`.
    pub fn to_ambient(&self, x: &[f64]) -> Vec<f64> {
        match self.meridian {
            None => x.to_vec(),
            Some(m) => {
                let mut out = x.to_vec();
                out.extend(std::iter::repeat_n(0.0, m - 1));
                out
            }
        }
    }

    /// Project a point of `R^n` to domain coordinates.
    pub fn to_reduced(&self, x: &[f64]) -> Vec<f64> {
        match self.meridian {
            None => x.to_vec(),
            Some(m) => {
                let k = x.len() - m;
                let mut out = x[..k].to_vec();
                out.push(norm(&x[k..]));
                out
            }
        }
    }

    pub fn constraints(&self) -> Vec<Constraint> {
        match &self.shape {
            Shape::Ball { center, radius } => vec![Constraint::InsideSphere { center: center.clone(), radius: *radius }],
            Shape::Box { lo, hi } => (0..lo.len())
                .map(|axis| Constraint::Slab { axis, lo: lo[axis], hi: hi[axis] })
                .collect(),
            Shape::Annulus { center, inner, outer } => vec![
                Constraint::InsideSphere { center: center.clone(), radius: *outer },
                Constraint::OutsideSphere { center: center.clone(), radius: *inner },
            ],
        }
    }

    /// Deterministic interior sample by rejection in the bounding box.
    pub fn sample_points(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let (lo, hi) = self.bounding_box();
        let mut r = rng::stream(seed, 0);
        let mut out = Vec::with_capacity(count);
        let mut tries = 0usize;
        while out.len() < count && tries < 1000 * count.max(1) {
            tries += 1;
            let x: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| rng::uniform(&mut r, *a, *b)).collect();
            if self.contains(&x) {
                out.push(x);
            }
        }
        out
    }

    /// Sampled check that the reflection `x_axis ↦ -x_axis` preserves the domain.
    pub fn is_mirror_symmetric(&self, axis: usize, samples: usize) -> bool {
        let (lo, hi) = self.bounding_box();
        let mut r = rng::stream(0x4d49, axis as u64);
        let ext: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.25 * (b - a)).collect();
        for _ in 0..samples {
            let x: Vec<f64> = (0..lo.len()).map(|i| rng::uniform(&mut r, lo[i] - ext[i], hi[i] + ext[i])).collect();
            let mut y = x.clone();
            y[axis] = -y[axis];
            if (self.shape_value(&x) < 0.0) != (self.shape_value(&y) < 0.0) {
                return false;
            }
        }
        true
    }
}

/// One defining inequality of a domain, used for exact boundary crossings.
#[derive(Clone, Debug, PartialEq)]
pub enum Constraint {
    InsideSphere { center: Vec<f64>, radius: f64 },
    OutsideSphere { center: Vec<f64>, radius: f64 },
    Slab { axis: usize, lo: f64, hi: f64 },
}

impl Constraint {
    pub fn holds(&self, x: &[f64]) -> bool {
        match self {
            Constraint::InsideSphere { center, radius } => dist2(x, center) < radius * radius,
            Constraint::OutsideSphere { center, radius } => dist2(x, center) > radius * radius,
            Constraint::Slab { axis, lo, hi } => x[*axis] > *lo && x[*axis] < *hi,
        }
    }

    /// Fraction `θ ∈ (0, 1]` along `a → b` where the constraint first fails;
    /// `a` must satisfy it and `b` must not.
    pub fn crossing(&self, a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
        let theta = match self {
            Constraint::InsideSphere { center, radius } => {
                let ac: Vec<f64> = a.iter().zip(center).map(|(x, c)| x - c).collect();
                let qa: f64 = d.iter().map(|v| v * v).sum();
                let qb: f64 = ac.iter().zip(&d).map(|(x, y)| x * y).sum();
                let qc = ac.iter().map(|v| v * v).sum::<f64>() - radius * radius;
                // qc < 0: the larger root is the exit point.
                let disc = (qb * qb - qa * qc).max(0.0).sqrt();
                if qb >= 0.0 {
                    -qc / (qb + disc)
                } else {
                    (disc - qb) / qa
                }
            }
            Constraint::OutsideSphere { center, radius } => {
                let ac: Vec<f64> = a.iter().zip(center).map(|(x, c)| x - c).collect();
                let qa: f64 = d.iter().map(|v| v * v).sum();
                let qb: f64 = ac.iter().zip(&d).map(|(x, y)| x * y).sum();
                let qc = ac.iter().map(|v| v * v).sum::<f64>() - radius * radius;
                // qc > 0 and the segment enters the sphere: the smaller root.
                let disc = (qb * qb - qa * qc).max(0.0).sqrt();
                if qb < 0.0 {
                    qc / (disc - qb)
                } else {
                    1.0
                }
            }
            Constraint::Slab { axis, lo, hi } => {
                let (x0, dx) = (a[*axis], d[*axis]);
                if dx > 0.0 {
                    (hi - x0) / dx
                } else if dx < 0.0 {
                    (lo - x0) / dx
                } else {
                    1.0
                }
            }
        };
        theta.clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PuncturedDomain {
    pub base: Domain,
    pub xi0: Vec<f64>,
    pub eps: f64,
}

pub fn puncture(domain: &Domain, xi0: Vec<f64>, eps: f64) -> Result<PuncturedDomain> {
    if xi0.len() != domain.dim() {
        return Err(Error::InvalidArgument(format!(
            "xi0 has {} coordinates, domain has {}",
            xi0.len(),
            domain.dim()
        )));
    }
    if !domain.contains(&xi0) {
        return Err(Error::InvalidDomain(format!("xi0 {xi0:?} is not interior to the domain")));
    }
    if domain.meridian.is_some() && xi0[xi0.len() - 1] != 0.0 {
        return Err(Error::InvalidDomain("xi0 of a meridian domain must lie on the symmetry axis".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("hole radius eps={eps} must be positive")));
    }
    let clearance = domain.dist_to_boundary(&xi0);
    if eps >= clearance {
        return Err(Error::InvalidDomain(format!(
            "hole radius eps={eps} must be below dist(xi0, boundary)={clearance}"
        )));
    }
    Ok(PuncturedDomain { base: domain.clone(), xi0, eps })
}

impl PuncturedDomain {
    pub fn contains(&self, x: &[f64]) -> bool {
        self.base.contains(x) && dist2(x, &self.xi0) > self.eps * self.eps
    }

    pub fn constraints(&self) -> Vec<Constraint> {
        let mut c = self.base.constraints();
        c.push(Constraint::OutsideSphere { center: self.xi0.clone(), radius: self.eps });
        c
    }

    pub fn clearance(&self) -> f64 {
        self.base.dist_to_boundary(&self.xi0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SymmetryGroup {
    Trivial,
    /// `O(m)` acting on the last `m` coordinates.
    Orthogonal { m: usize },
}

pub fn is_fixed_point(group: SymmetryGroup, x: &[f64]) -> bool {
    match group {
        SymmetryGroup::Trivial => true,
        SymmetryGroup::Orthogonal { m } => {
            let scale = 1e-12 * (1.0 + norm(x));
            m <= x.len() && x[x.len() - m..].iter().all(|v| v.abs() <= scale)
        }
    }
}

/// Random orthogonal map on the last `m` coordinates: a product of plane
/// rotations and one optional reflection.
fn random_group_element(r: &mut rand_chacha::ChaCha8Rng, x: &mut [f64], m: usize) {
    let n = x.len();
    let k = n - m;
    for _ in 0..(2 * m) {
        if m < 2 {
            break;
        }
        let i = k + r.random_range(0..m);
        let mut j = k + r.random_range(0..m);
        if j == i {
            j = k + (j - k + 1) % m;
        }
        let a = rng::uniform(r, 0.0, std::f64::consts::TAU);
        let (s, c) = a.sin_cos();
        let (xi, xj) = (x[i], x[j]);
        x[i] = c * xi - s * xj;
        x[j] = s * xi + c * xj;
    }
    if r.random::<bool>() {
        x[k] = -x[k];
    }
}

/// Meridian section of a `Γ`-invariant domain; idempotent.
pub fn symmetry_reduce(domain: &Domain, group: SymmetryGroup) -> Result<Domain> {
    let m = match group {
        SymmetryGroup::Trivial => return Ok(domain.clone()),
        SymmetryGroup::Orthogonal { m } => m,
    };
    match domain.meridian {
        Some(mm) if mm == m => return Ok(domain.clone()),
        Some(mm) => {
            return Err(Error::InvalidDomain(format!(
                "domain is already reduced by O({mm}), cannot reduce by O({m})"
            )))
        }
        None => {}
    }
    let n = domain.dim();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!("O({m}) cannot act on R^{n}")));
    }
    let (lo, hi) = domain.bounding_box();
    let mut r = rng::stream(0x5953, m as u64);
    for _ in 0..4000 {
        let x: Vec<f64> = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| {
                let pad = 0.25 * (b - a);
                rng::uniform(&mut r, a - pad, b + pad)
            })
            .collect();
        let mut y = x.clone();
        random_group_element(&mut r, &mut y, m);
        if domain.contains(&x) != domain.contains(&y) {
            return Err(Error::InvalidDomain(format!(
                "domain is not invariant under O({m}) on the last {m} coordinates"
            )));
        }
    }
    let keep = n - m + 1;
    let shape = match &domain.shape {
        Shape::Ball { center, radius } => Shape::Ball { center: center[..keep].to_vec(), radius: *radius },
        Shape::Annulus { center, inner, outer } => Shape::Annulus {
            center: center[..keep].to_vec(),
            inner: *inner,
            outer: *outer,
        },
        Shape::Box { lo, hi } => Shape::Box { lo: lo[..keep].to_vec(), hi: hi[..keep].to_vec() },
    };
    Ok(Domain { shape, meridian: Some(m) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisKind {
    Cartesian,
    /// Coordinate `ρ = |ζ|`, `ζ ∈ R^m`; `m = 1` is a mirror plane.
    Radial { m: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub kind: AxisKind,
    pub coords: Vec<f64>,
}

impl Axis {
    /// Index of the last coordinate `≤ x` (clamped to a valid cell start).
    pub fn cell_of(&self, x: f64) -> usize {
        let c = &self.coords;
        match c.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(c.len() - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(c.len() - 2),
        }
    }

    pub fn spacing_at(&self, i: usize) -> f64 {
        let c = &self.coords;
        let left = if i > 0 { c[i] - c[i - 1] } else { 0.0 };
        let right = if i + 1 < c.len() { c[i + 1] - c[i] } else { 0.0 };
        left.max(right)
    }
}

/// Geometric grading of the spacing away from a focus point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub center: Vec<f64>,
    pub h_min: f64,
    pub growth: f64,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct GridSpec {
    pub h: f64,
    pub refinement: Option<Refinement>,
    /// Axes on which only the half `x ≥ 0` is stored (even reflection symmetry).
    pub mirror: Vec<bool>,
}

impl GridSpec {
    pub fn uniform(h: f64) -> Self {
        GridSpec { h, ..Default::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskSelector {
    Base,
    Punctured,
}

#[derive(Clone, Debug)]
pub struct Grid {
    pub domain: Domain,
    pub punctured: Option<PuncturedDomain>,
    pub axes: Vec<Axis>,
    pub h: f64,
    pub dims: Vec<usize>,
    strides: Vec<usize>,
    mask_base: Vec<bool>,
    mask_punct: Option<Vec<bool>>,
}

fn graded_offsets(extent: f64, h: f64, refinement: Option<(f64, f64)>) -> Vec<f64> {
    // Offsets 0 = s_0 < s_1 < … until s_k ≥ extent.
    let mut out = vec![0.0];
    match refinement {
        None => {
            let mut k = 1usize;
            while out[out.len() - 1] < extent {
                out.push(k as f64 * h);
                k += 1;
            }
        }
        Some((h_min, growth)) => {
            let mut step = h_min.min(h);
            while out[out.len() - 1] < extent {
                let next = out[out.len() - 1] + step;
                out.push(next);
                step = (step * growth).min(h);
            }
        }
    }
    out
}

pub fn build_grid(domain: &Domain, h: f64) -> Result<Grid> {
    Grid::build(domain, None, &GridSpec::uniform(h))
}

impl Grid {
    pub fn build(domain: &Domain, punctured: Option<&PuncturedDomain>, spec: &GridSpec) -> Result<Grid> {
        let h = spec.h;
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidArgument(format!("grid spacing h={h} must be positive")));
        }
        if h >= domain.narrowest_extent() {
            return Err(Error::EmptyGrid(format!(
                "h={h} is not smaller than the narrowest domain extent {}",
                domain.narrowest_extent()
            )));
        }
        if let Some(pd) = punctured {
            if &pd.base != domain {
                return Err(Error::InvalidArgument("punctured domain has a different base".into()));
            }
        }
        let d = domain.dim();
        let mirror: Vec<bool> = if spec.mirror.is_empty() { vec![false; d] } else { spec.mirror.clone() };
        if mirror.len() != d {
            return Err(Error::InvalidArgument(format!("mirror flags need {d} entries")));
        }
        let (lo, hi) = domain.bounding_box();
        let mut axes = Vec::with_capacity(d);
        for i in 0..d {
            let radial = domain.meridian.is_some() && i == d - 1;
            if mirror[i] && radial {
                return Err(Error::InvalidArgument("the meridian axis is already radial".into()));
            }
            if mirror[i] {
                if !domain.is_mirror_symmetric(i, 2000) {
                    return Err(Error::InvalidDomain(format!("domain is not symmetric under x_{i} -> -x_{i}")));
                }
                if let Some(pd) = punctured {
                    if pd.xi0[i] != 0.0 {
                        return Err(Error::InvalidDomain(format!("xi0 must lie on the mirror plane x_{i} = 0")));
                    }
                }
            }
            let grading = spec.refinement.as_ref().map(|r| (r.h_min, r.growth));
            let coords = if radial || mirror[i] {
                let center = spec.refinement.as_ref().map(|r| r.center[i]).unwrap_or(0.0);
                if center != 0.0 {
                    return Err(Error::InvalidArgument("refinement center must lie on radial axes".into()));
                }
                graded_offsets(hi[i] + h, h, grading)
            } else {
                match &spec.refinement {
                    None => {
                        let base = lo[i] - h;
                        graded_offsets(hi[i] + h - base, h, None).into_iter().map(|s| base + s).collect()
                    }
                    Some(r) => {
                        let c = r.center[i];
                        let up = graded_offsets(hi[i] + h - c, h, grading);
                        let down = graded_offsets(c - (lo[i] - h), h, grading);
                        let mut v: Vec<f64> = down.iter().rev().map(|s| c - s).collect();
                        v.extend(up.iter().skip(1).map(|s| c + s));
                        v
                    }
                }
            };
            let kind = if radial {
                AxisKind::Radial { m: domain.meridian.unwrap() }
            } else if mirror[i] {
                AxisKind::Radial { m: 1 }
            } else {
                AxisKind::Cartesian
            };
            axes.push(Axis { kind, coords });
        }
        let dims: Vec<usize> = axes.iter().map(|a| a.coords.len()).collect();
        let mut strides = vec![1usize; d];
        for i in (0..d.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * dims[i + 1];
        }
        let total: usize = dims.iter().product();
        let mut grid = Grid {
            domain: domain.clone(),
            punctured: punctured.cloned(),
            axes,
            h,
            dims,
            strides,
            mask_base: Vec::new(),
            mask_punct: None,
        };
        let mut x = vec![0.0; d];
        let mut base = vec![false; total];
        let mut punct = punctured.map(|_| vec![false; total]);
        for (idx, b) in base.iter_mut().enumerate() {
            grid.coords_into(idx, &mut x);
            *b = domain.contains(&x);
            if let (Some(p), Some(pd)) = (punct.as_mut(), punctured) {
                p[idx] = *b && pd.contains(&x);
            }
        }
        if !base.iter().any(|&b| b) || punct.as_ref().is_some_and(|p| !p.iter().any(|&b| b)) {
            return Err(Error::EmptyGrid(format!("no interior node at h={h}")));
        }
        grid.mask_base = base;
        grid.mask_punct = punct;
        Ok(grid)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn node_count(&self) -> usize {
        self.mask_base.len()
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn mask(&self, sel: MaskSelector) -> Result<&[bool]> {
        match sel {
            MaskSelector::Base => Ok(&self.mask_base),
            MaskSelector::Punctured => self
                .mask_punct
                .as_deref()
                .ok_or_else(|| Error::InvalidArgument("grid carries no punctured mask".into())),
        }
    }

    pub fn interior_count(&self, sel: MaskSelector) -> Result<usize> {
        Ok(self.mask(sel)?.iter().filter(|&&b| b).count())
    }

    pub fn constraints(&self, sel: MaskSelector) -> Result<Vec<Constraint>> {
        match sel {
            MaskSelector::Base => Ok(self.domain.constraints()),
            MaskSelector::Punctured => Ok(self
                .punctured
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("grid carries no punctured mask".into()))?
                .constraints()),
        }
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        self.strides.iter().zip(&self.dims).map(|(s, d)| (flat / s) % d).collect()
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn coords_into(&self, flat: usize, out: &mut [f64]) {
        for (k, a) in self.axes.iter().enumerate() {
            out[k] = a.coords[(flat / self.strides[k]) % self.dims[k]];
        }
    }

    pub fn coords(&self, flat: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.coords_into(flat, &mut x);
        x
    }

    /// Largest spacing among the axes at the node nearest to `x`.
    pub fn local_spacing(&self, x: &[f64]) -> f64 {
        self.axes
            .iter()
            .zip(x)
            .map(|(a, &v)| {
                let i = a.cell_of(v);
                let j = if (v - a.coords[i]).abs() <= (a.coords[i + 1] - v).abs() { i } else { i + 1 };
                a.spacing_at(j)
            })
            .fold(0.0, f64::max)
    }

    pub fn min_spacing(&self) -> f64 {
        self.axes
            .iter()
            .flat_map(|a| a.coords.windows(2).map(|w| w[1] - w[0]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Lift grid coordinates to `R^n`.
    pub fn ambient(&self, x: &[f64]) -> Vec<f64> {
        self.domain.to_ambient(x)
    }

    /// Multilinear interpolation of node values at `x`; `None` if a corner
    /// of the enclosing cell is not flagged in `mask`.
    pub fn interpolate(&self, values: &[f64], mask: &[bool], x: &[f64]) -> Option<f64> {
        let d = self.dim();
        let mut base = vec![0usize; d];
        let mut w = vec![0.0; d];
        for k in 0..d {
            let a = &self.axes[k];
            let i = a.cell_of(x[k]);
            base[k] = i;
            w[k] = ((x[k] - a.coords[i]) / (a.coords[i + 1] - a.coords[i])).clamp(0.0, 1.0);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut flat = 0;
            for k in 0..d {
                let bit = (corner >> k) & 1;
                weight *= if bit == 1 { w[k] } else { 1.0 - w[k] };
                flat += (base[k] + bit) * self.strides[k];
            }
            if weight == 0.0 {
                continue;
            }
            if !mask[flat] {
                return None;
            }
            acc += weight * values[flat];
        }
        Some(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_disc_coarse() {
        let g = build_grid(&Domain::unit_ball(2), 0.5).unwrap();
        let mask = g.mask(MaskSelector::Base).unwrap();
        let find = |x: [f64; 2]| (0..g.node_count()).find(|&i| g.coords(i) == x).unwrap();
        assert!(mask[find([0.0, 0.0])]);
        assert!(!mask[find([1.0, 0.0])]);
    }

    #[test]
    fn unit_cube_count() {
        let g = build_grid(&Domain::cuboid(vec![0.0; 3], vec![1.0; 3]).unwrap(), 0.25).unwrap();
        assert_eq!(g.interior_count(MaskSelector::Base).unwrap(), 27);
    }

    #[test]
    fn invalid_annulus() {
        assert!(Domain::annulus(vec![0.0; 3], 1.0, 0.5).is_err());
    }

    #[test]
    fn coarse_grid_rejected() {
        assert!(matches!(build_grid(&Domain::unit_ball(2), 2.5), Err(Error::EmptyGrid(_))));
    }

    #[test]
    fn puncture_examples() {
        let b = Domain::unit_ball(3);
        let pd = puncture(&b, vec![0.0; 3], 0.1).unwrap();
        assert!(!pd.contains(&[0.05, 0.0, 0.0]));
        assert!(pd.contains(&[0.5, 0.0, 0.0]));
        assert!(puncture(&b, vec![0.0; 3], 1.5).is_err());
        let cube = Domain::cuboid(vec![-1.0; 3], vec![1.0; 3]).unwrap();
        let pc = puncture(&cube, vec![0.5, 0.0, 0.0], 0.2).unwrap();
        assert!(!pc.contains(&[0.5, 0.0, 0.1]));
    }

    #[test]
    fn fixed_points() {
        assert!(is_fixed_point(SymmetryGroup::Trivial, &[0.3, 1.0]));
        let g = SymmetryGroup::Orthogonal { m: 2 };
        assert!(is_fixed_point(g, &[1.0, 0.0, 0.0]));
        assert!(!is_fixed_point(g, &[1.0, 0.1, 0.0]));
    }

    #[test]
    fn reduce_ball_and_reject_offcenter() {
        let g = SymmetryGroup::Orthogonal { m: 2 };
        let r = symmetry_reduce(&Domain::unit_ball(3), g).unwrap();
        assert_eq!(r.dim(), 2);
        assert_eq!(r.ambient_dim(), 3);
        assert!(r.contains(&[0.0, 0.5]));
        assert!(!r.contains(&[0.0, -0.5]));
        assert_eq!(symmetry_reduce(&r, g).unwrap(), r);
        assert_eq!(symmetry_reduce(&Domain::unit_ball(3), SymmetryGroup::Trivial).unwrap(), Domain::unit_ball(3));
        let off = Domain::ball(vec![0.0, 0.3, 0.0], 1.0).unwrap();
        assert!(symmetry_reduce(&off, g).is_err());
    }

    #[test]
    fn crossings_are_exact() {
        let c = Constraint::InsideSphere { center: vec![0.0, 0.0], radius: 1.0 };
        let t = c.crossing(&[0.75, 0.0], &[1.25, 0.0]);
        assert!((t - 0.5).abs() < 1e-15);
        let hole = Constraint::OutsideSphere { center: vec![0.0, 0.0], radius: 0.1 };
        let t = hole.crossing(&[0.3, 0.0], &[0.0, 0.0]);
        assert!((t - 2.0 / 3.0).abs() < 1e-15);
        let s = Constraint::Slab { axis: 1, lo: 0.0, hi: 1.0 };
        assert!((s.crossing(&[0.0, 0.9], &[0.0, 1.3]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn graded_grid_has_fine_cells_at_focus() {
        let d = symmetry_reduce(&Domain::unit_ball(3), SymmetryGroup::Orthogonal { m: 2 }).unwrap();
        let pd = puncture(&d, vec![0.0, 0.0], 1e-3).unwrap();
        let spec = GridSpec {
            h: 1.0 / 32.0,
            refinement: Some(Refinement { center: vec![0.0, 0.0], h_min: 2.5e-4, growth: 1.1 }),
            mirror: vec![],
        };
        let g = Grid::build(&d, Some(&pd), &spec).unwrap();
        assert!((g.local_spacing(&[0.0, 0.0]) - 2.5e-4).abs() < 1e-12);
        assert!((g.local_spacing(&[0.8, 0.5]) - 1.0 / 32.0).abs() < 1e-12);
        assert_eq!(g.axes[1].coords[0], 0.0);
        assert!(g.interior_count(MaskSelector::Punctured).unwrap() < g.interior_count(MaskSelector::Base).unwrap());
    }

    #[test]
    fn interpolation_reproduces_linear() {
        let g = build_grid(&Domain::cuboid(vec![0.0; 2], vec![1.0; 2]).unwrap(), 0.1).unwrap();
        let vals: Vec<f64> = (0..g.node_count()).map(|i| {
            let x = g.coords(i);
            2.0 * x[0] - x[1] + 0.5
        }).collect();
        let all = vec![true; g.node_count()];
        let v = g.interpolate(&vals, &all, &[0.33, 0.71]).unwrap();
        assert!((v - (0.66 - 0.71 + 0.5)).abs() < 1e-13);
    }

    #[test]
    fn mirror_requires_symmetry() {
        let off = Domain::ball(vec![0.2, 0.0, 0.0], 1.0).unwrap();
        let spec = GridSpec { h: 0.1, refinement: None, mirror: vec![true, false, false] };
        assert!(Grid::build(&off, None, &spec).is_err());
        let spec = GridSpec { h: 0.1, refinement: None, mirror: vec![false, true, true] };
        assert!(Grid::build(&off, None, &spec).is_ok());
    }
}
