//! Compressed sparse row matrices with the handful of kernels the solvers need.

#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    /// Build from triplets; duplicates are summed and columns sorted per row.
    pub fn from_triplets(nrows: usize, ncols: usize, trip: &[(usize, usize, f64)]) -> Csr {
        let mut count = vec![0usize; nrows + 1];
        for &(r, _, _) in trip {
            count[r + 1] += 1;
        }
        for i in 0..nrows {
            count[i + 1] += count[i];
        }
        let mut pos = count.clone();
        let mut cols = vec![0usize; trip.len()];
        let mut vals = vec![0.0; trip.len()];
        for &(r, c, v) in trip {
            cols[pos[r]] = c;
            vals[pos[r]] = v;
            pos[r] += 1;
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(trip.len());
        let mut values = Vec::with_capacity(trip.len());
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for r in 0..nrows {
            row.clear();
            row.extend((count[r]..count[r + 1]).map(|k| (cols[k], vals[k])));
            row.sort_by_key(|e| e.0);
            for &(c, v) in row.iter() {
                if indices.len() > indptr[r] && *indices.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Csr { nrows, ncols, indptr, indices, values }
    }

    pub fn identity(n: usize) -> Csr {
        Csr {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        c.binary_search(&j).map(|k| v[k]).unwrap_or(0.0)
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            *yi = c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum();
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, i)).collect()
    }

    /// `self + diag(d)` for a square matrix whose rows all carry a diagonal entry.
    pub fn add_diagonal(&self, d: &[f64]) -> Csr {
        let mut out = self.clone();
        for (i, di) in d.iter().enumerate() {
            let (a, b) = (out.indptr[i], out.indptr[i + 1]);
            let k = out.indices[a..b].binary_search(&i).expect("missing diagonal entry");
            out.values[a + k] += di;
        }
        out
    }

    pub fn transpose(&self) -> Csr {
        let mut count = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            count[c + 1] += 1;
        }
        for j in 0..self.ncols {
            count[j + 1] += count[j];
        }
        let mut pos = count.clone();
        let mut indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                indices[pos[j]] = i;
                values[pos[j]] = a;
                pos[j] += 1;
            }
        }
        Csr { nrows: self.ncols, ncols: self.nrows, indptr: count, indices, values }
    }

    /// Sparse product `self · b` (Gustavson, sorted output rows).
    pub fn matmul(&self, b: &Csr) -> Csr {
        assert_eq!(self.ncols, b.nrows, "dimension mismatch in sparse product");
        let mut acc = vec![0.0; b.ncols];
        let mut flag = vec![usize::MAX; b.ncols];
        let mut cols: Vec<usize> = Vec::new();
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..self.nrows {
            cols.clear();
            let (ca, va) = self.row(i);
            for (&k, &a) in ca.iter().zip(va) {
                let (cb, vb) = b.row(k);
                for (&j, &bv) in cb.iter().zip(vb) {
                    if flag[j] != i {
                        flag[j] = i;
                        acc[j] = 0.0;
                        cols.push(j);
                    }
                    acc[j] += a * bv;
                }
            }
            cols.sort_unstable();
            for &j in &cols {
                indices.push(j);
                values.push(acc[j]);
            }
            indptr.push(indices.len());
        }
        Csr { nrows: self.nrows, ncols: b.ncols, indptr, indices, values }
    }

    /// Galerkin product `pᵀ · self · p`.
    pub fn rap(&self, p: &Csr, pt: &Csr) -> Csr {
        pt.matmul(&self.matmul(p))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in d.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                row[j] = a;
            }
        }
        d
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Csr {
        Csr::from_triplets(3, 3, &[(0, 0, 2.0), (0, 2, 1.0), (1, 1, 3.0), (2, 0, 1.0), (2, 2, 4.0), (0, 0, 1.0)])
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = sample();
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.nnz(), 5);
        assert_eq!(a.matvec(&[1.0, 1.0, 1.0]), vec![4.0, 3.0, 5.0]);
    }

    #[test]
    fn product_matches_dense() {
        let a = sample();
        let b = Csr::from_triplets(3, 2, &[(0, 1, 1.0), (1, 0, 2.0), (2, 0, -1.0), (2, 1, 0.5)]);
        let c = a.matmul(&b).to_dense();
        let (ad, bd) = (a.to_dense(), b.to_dense());
        for i in 0..3 {
            for j in 0..2 {
                let e: f64 = (0..3).map(|k| ad[i][k] * bd[k][j]).sum();
                assert!((c[i][j] - e).abs() < 1e-15);
            }
        }
        assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn galerkin_is_symmetric() {
        let a = Csr::from_triplets(3, 3, &[(0, 0, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 2.0), (1, 2, -1.0), (2, 1, -1.0), (2, 2, 2.0)]);
        let p = Csr::from_triplets(3, 2, &[(0, 0, 1.0), (1, 0, 0.5), (1, 1, 0.5), (2, 1, 1.0)]);
        let c = a.rap(&p, &p.transpose());
        assert!((c.get(0, 1) - c.get(1, 0)).abs() < 1e-15);
        assert!((c.get(0, 0) - 1.5).abs() < 1e-15);
    }
}
