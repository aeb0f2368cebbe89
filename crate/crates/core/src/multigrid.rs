//! Geometric multigrid for finite-volume operators on (possibly graded)
//! tensor grids with masked interiors.
//!
//! Coarsening is spacing aware: along each axis a node is dropped when its
//! neighbours are closer than a threshold that doubles per level, so fine
//! graded regions are coarsened first and uniform regions follow. Coarse
//! operators are Galerkin products; the coarsest level is solved densely.

use crate::krylov::Operator;
use crate::sparse::Csr;
use nalgebra::{DMatrix, DVector};

struct Level {
    a: Csr,
    diag: Vec<f64>,
    p: Csr,
    pt: Csr,
}

enum Coarse {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

pub struct Multigrid {
    levels: Vec<Level>,
    coarse_a: Csr,
    coarse: Coarse,
    pub smoothing_sweeps: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct MultigridOptions {
    /// Stop coarsening once a level has at most this many unknowns.
    pub coarse_size: usize,
    pub smoothing_sweeps: usize,
}

impl Default for MultigridOptions {
    fn default() -> Self {
        MultigridOptions { coarse_size: 600, smoothing_sweeps: 1 }
    }
}

/// 1D coarsening: kept coordinates and, per fine node, its interpolation stencil.
fn coarsen_axis(x: &[f64], thr: f64) -> (Vec<f64>, Vec<[(usize, f64); 2]>) {
    let n = x.len();
    let mut keep = vec![true; n];
    for i in 1..n.saturating_sub(1) {
        if keep[i - 1] && x[i + 1] - x[i - 1] <= thr {
            keep[i] = false;
        }
    }
    let xc: Vec<f64> = x.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| *v).collect();
    let mut stencil = Vec::with_capacity(n);
    let mut j = 0usize;
    for (i, &xi) in x.iter().enumerate() {
        if keep[i] {
            while xc[j] != xi {
                j += 1;
            }
            stencil.push([(j, 1.0), (j, 0.0)]);
        } else {
            let w = (xi - xc[j]) / (xc[j + 1] - xc[j]);
            stencil.push([(j, 1.0 - w), (j + 1, w)]);
        }
    }
    (xc, stencil)
}

fn strides_of(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

impl Multigrid {
    /// `nodes[k]` is the row-major flat index (in the tensor grid spanned by
    /// `axes`) of unknown `k`; `a` is the operator on those unknowns.
    pub fn build(a: &Csr, axes: &[Vec<f64>], nodes: &[usize], opts: MultigridOptions) -> Multigrid {
        let mut axes: Vec<Vec<f64>> = axes.to_vec();
        let mut nodes: Vec<usize> = nodes.to_vec();
        let mut a = a.clone();
        let mut levels = Vec::new();
        let min_h = axes
            .iter()
            .flat_map(|ax| ax.windows(2).map(|w| w[1] - w[0]))
            .fold(f64::INFINITY, f64::min);
        let max_extent = axes.iter().map(|ax| ax[ax.len() - 1] - ax[0]).fold(0.0, f64::max);
        let mut thr = 2.2 * min_h;
        while a.nrows > opts.coarse_size && thr <= 4.0 * max_extent {
            let coarse: Vec<_> = axes.iter().map(|ax| coarsen_axis(ax, thr)).collect();
            thr *= 2.0;
            if coarse.iter().zip(&axes).all(|(c, ax)| c.0.len() == ax.len()) {
                continue;
            }
            let fdims: Vec<usize> = axes.iter().map(|ax| ax.len()).collect();
            let cdims: Vec<usize> = coarse.iter().map(|c| c.0.len()).collect();
            let (fs, cs) = (strides_of(&fdims), strides_of(&cdims));
            let d = axes.len();
            // Fine-row stencils in coarse flat indices.
            let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(nodes.len());
            for &flat in &nodes {
                let mut entries: Vec<(usize, f64)> = vec![(0, 1.0)];
                for k in 0..d {
                    let i = (flat / fs[k]) % fdims[k];
                    let st = &coarse[k].1[i];
                    let mut next = Vec::with_capacity(entries.len() * 2);
                    for &(c, w) in &entries {
                        for &(j, wj) in st {
                            if wj != 0.0 {
                                next.push((c + j * cs[k], w * wj));
                            }
                        }
                    }
                    entries = next;
                }
                rows.push(entries);
            }
            let mut used: Vec<usize> = rows.iter().flatten().map(|e| e.0).collect();
            used.sort_unstable();
            used.dedup();
            let trip: Vec<(usize, usize, f64)> = rows
                .iter()
                .enumerate()
                .flat_map(|(r, e)| e.iter().map(move |&(c, w)| (r, c, w)))
                .map(|(r, c, w)| (r, used.binary_search(&c).unwrap(), w))
                .collect();
            let p = Csr::from_triplets(nodes.len(), used.len(), &trip);
            let pt = p.transpose();
            let ac = a.rap(&p, &pt);
            let diag = a.diagonal();
            levels.push(Level { a, diag, p, pt });
            a = ac;
            axes = coarse.into_iter().map(|c| c.0).collect();
            nodes = used;
        }
        let n = a.nrows;
        let dense = DMatrix::from_fn(n, n, |i, j| a.get(i, j));
        let coarse = match dense.clone().cholesky() {
            Some(c) => Coarse::Cholesky(c),
            None => Coarse::Lu(dense.lu()),
        };
        Multigrid { levels, coarse_a: a, coarse, smoothing_sweeps: opts.smoothing_sweeps }
    }

    pub fn depth(&self) -> usize {
        self.levels.len() + 1
    }

    pub fn coarse_size(&self) -> usize {
        self.coarse_a.nrows
    }

    fn coarse_solve(&self, b: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(b);
        let x = match &self.coarse {
            Coarse::Cholesky(c) => c.solve(&v),
            Coarse::Lu(l) => l.solve(&v).unwrap_or_else(|| DVector::zeros(b.len())),
        };
        x.as_slice().to_vec()
    }

    fn vcycle(&self, lvl: usize, b: &[f64]) -> Vec<f64> {
        if lvl == self.levels.len() {
            return self.coarse_solve(b);
        }
        let l = &self.levels[lvl];
        let mut x = vec![0.0; b.len()];
        for _ in 0..self.smoothing_sweeps {
            gauss_seidel(&l.a, &l.diag, b, &mut x, false);
            gauss_seidel(&l.a, &l.diag, b, &mut x, true);
        }
        let ax = l.a.matvec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let ec = self.vcycle(lvl + 1, &l.pt.matvec(&r));
        let e = l.p.matvec(&ec);
        for (xi, ei) in x.iter_mut().zip(&e) {
            *xi += ei;
        }
        for _ in 0..self.smoothing_sweeps {
            gauss_seidel(&l.a, &l.diag, b, &mut x, true);
            gauss_seidel(&l.a, &l.diag, b, &mut x, false);
        }
        x
    }
}

fn gauss_seidel(a: &Csr, diag: &[f64], b: &[f64], x: &mut [f64], backward: bool) {
    let n = a.nrows;
    let mut sweep = |i: usize| {
        let (c, v) = a.row(i);
        let mut s = b[i];
        for (&j, &aij) in c.iter().zip(v) {
            if j != i {
                s -= aij * x[j];
            }
        }
        x[i] = s / diag[i];
    };
    if backward {
        (0..n).rev().for_each(&mut sweep);
    } else {
        (0..n).for_each(&mut sweep);
    }
}

impl Operator for Multigrid {
    fn dim(&self) -> usize {
        self.levels.first().map(|l| l.a.nrows).unwrap_or(self.coarse_a.nrows)
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&self.vcycle(0, x));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::krylov::{pcg, SolveOptions};

    fn laplace_2d(xs: &[f64]) -> (Csr, Vec<usize>) {
        // Interior of a tensor grid with Dirichlet boundary, weighted five-point stencil.
        let n = xs.len();
        let id = |i: usize, j: usize| (i - 1) * (n - 2) + (j - 1);
        let mut trip = Vec::new();
        let mut nodes = Vec::new();
        let half = |i: usize| 0.5 * (xs[i + 1] - xs[i - 1]);
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                nodes.push(i * n + j);
                let r = id(i, j);
                let mut diag = 0.0;
                for (ii, jj) in [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)] {
                    let c = if ii != i {
                        half(j) / (xs[ii].max(xs[i]) - xs[ii].min(xs[i]))
                    } else {
                        half(i) / (xs[jj].max(xs[j]) - xs[jj].min(xs[j]))
                    };
                    diag += c;
                    if ii > 0 && ii < n - 1 && jj > 0 && jj < n - 1 {
                        trip.push((r, id(ii, jj), -c));
                    }
                }
                trip.push((r, r, diag));
            }
        }
        let m = (n - 2) * (n - 2);
        (Csr::from_triplets(m, m, &trip), nodes)
    }

    #[test]
    fn pcg_iterations_are_mesh_independent() {
        for &n in &[33usize, 65, 129] {
            let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
            let (a, nodes) = laplace_2d(&xs);
            let mg = Multigrid::build(&a, &[xs.clone(), xs.clone()], &nodes, MultigridOptions::default());
            let b = vec![1.0; a.nrows];
            let (_, st) = pcg(&a, &mg, &b, None, SolveOptions { tol: 1e-10, max_iter: 100 }).unwrap();
            assert!(st.iterations <= 14, "n={n}: {} iterations", st.iterations);
        }
    }

    #[test]
    fn graded_grid_converges_fast() {
        let mut xs = vec![0.0];
        let mut h: f64 = 1e-4;
        while *xs.last().unwrap() < 1.0 {
            let x = xs.last().unwrap() + h;
            xs.push(x);
            h = (h * 1.1).min(1.0 / 32.0);
        }
        let (a, nodes) = laplace_2d(&xs);
        let mg = Multigrid::build(&a, &[xs.clone(), xs.clone()], &nodes, MultigridOptions::default());
        let b: Vec<f64> = (0..a.nrows).map(|i| (i % 7) as f64 - 3.0).collect();
        let (_, st) = pcg(&a, &mg, &b, None, SolveOptions { tol: 1e-10, max_iter: 200 }).unwrap();
        assert!(st.iterations <= 20, "{} iterations", st.iterations);
    }
}
