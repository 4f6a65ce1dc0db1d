//! Compressed sparse row matrices and a cached sparse Cholesky factorization.
//!
//! Operator assembly and products run on [`Csr`]; factorizations are delegated
//! to faer's supernodal LLT (with fill-reducing ordering).

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Row-compressed sparse matrix with sorted, duplicate-free column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl Csr {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        let mut next = counts.clone();
        for &(r, c, v) in triplets {
            let k = next[r];
            cols[k] = c;
            vals[k] = v;
            next[r] += 1;
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for r in 0..nrows {
            row.clear();
            row.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            // Stable sort keeps summation order of duplicates deterministic.
            row.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut s = 0.0;
                while k < row.len() && row[k].0 == c {
                    s += row[k].1;
                    k += 1;
                }
                indices.push(c);
                data.push(s);
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        Self {
            nrows: d.len(),
            ncols: d.len(),
            indptr: (0..=d.len()).collect(),
            indices: (0..d.len()).collect(),
            data: d.to_vec(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.indptr[r]..self.indptr[r + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.data[range].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.indptr[r]..self.indptr[r + 1];
        match self.indices[range.clone()].binary_search(&c) {
            Ok(k) => self.data[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.nrows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().into_iter().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &t)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, other: &Csr, s: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut t = self.triplets();
        t.extend(other.triplets().into_iter().map(|(r, c, v)| (r, c, s * v)));
        Self::from_triplets(self.nrows, self.ncols, &t)
    }

    /// Multiplies each row `r` by `d[r]`.
    pub fn scale_rows(&self, d: &[f64]) -> Self {
        assert_eq!(d.len(), self.nrows);
        let mut out = self.clone();
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                out.data[k] *= d[r];
            }
        }
        out
    }

    /// Sparse-sparse product.
    pub fn matmul(&self, other: &Csr) -> Self {
        assert_eq!(self.ncols, other.nrows, "inner dimensions differ");
        let mut acc = vec![0.0; other.ncols];
        let mut mark = vec![usize::MAX; other.ncols];
        let mut cols: Vec<usize> = Vec::new();
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut data = Vec::new();
        for r in 0..self.nrows {
            cols.clear();
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    if mark[c] != r {
                        mark[c] = r;
                        acc[c] = 0.0;
                        cols.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            cols.sort_unstable();
            for &c in &cols {
                indices.push(c);
                data.push(acc[c]);
            }
            indptr.push(indices.len());
        }
        Self {
            nrows: self.nrows,
            ncols: other.ncols,
            indptr,
            indices,
            data,
        }
    }

    /// Dense product `self * x`.
    pub fn mul_dense(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        assert_eq!(self.ncols, x.nrows(), "dimension mismatch in sparse * dense");
        let d = x.ncols();
        let mut y = Mat::<f64>::zeros(self.nrows, d);
        for c in 0..d {
            let xc = x.col(c);
            let mut yc = y.col_mut(c);
            for r in 0..self.nrows {
                let mut s = 0.0;
                for k in self.indptr[r]..self.indptr[r + 1] {
                    s += self.data[k] * xc[self.indices[k]];
                }
                yc[r] = s;
            }
        }
        y
    }

    /// Dense product `selfᵀ * x`.
    pub fn tmul_dense(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        assert_eq!(self.nrows, x.nrows(), "dimension mismatch in sparseᵀ * dense");
        let d = x.ncols();
        let mut y = Mat::<f64>::zeros(self.ncols, d);
        for c in 0..d {
            let xc = x.col(c);
            let mut yc = y.col_mut(c);
            for r in 0..self.nrows {
                let xv = xc[r];
                if xv == 0.0 {
                    continue;
                }
                for k in self.indptr[r]..self.indptr[r + 1] {
                    yc[self.indices[k]] += self.data[k] * xv;
                }
            }
        }
        y
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.ncols, x.len());
        (0..self.nrows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                m[(r, c)] = v;
            }
        }
        m
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Submatrix keeping the listed rows and columns, in the given order.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (new, &old) in cols.iter().enumerate() {
            col_map[old] = new;
        }
        let mut t = Vec::new();
        for (nr, &r) in rows.iter().enumerate() {
            for (c, v) in self.row(r) {
                if col_map[c] != usize::MAX {
                    t.push((nr, col_map[c], v));
                }
            }
        }
        Self::from_triplets(rows.len(), cols.len(), &t)
    }

    /// Writes coordinate triplets (`row col value`, 0-based) as text.
    pub fn to_triplet_text(&self) -> String {
        use std::fmt::Write as _;
        let mut s = format!("{} {} {}\n", self.nrows, self.ncols, self.nnz());
        for (r, c, v) in self.triplets() {
            let _ = writeln!(s, "{r} {c} {v:?}");
        }
        s
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let t: Vec<_> = self
            .triplets()
            .into_iter()
            .map(|(r, c, v)| Triplet::new(r, c, v))
            .collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &t)
            .map_err(|e| Error::Factorization(format!("{e:?}")))
    }
}

/// Sparse LLT of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    llt: faer::sparse::linalg::solvers::Llt<usize, f64>,
    n: usize,
}

impl Cholesky {
    pub fn new(a: &Csr) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch("Cholesky of non-square matrix".into()));
        }
        let llt = a
            .to_faer()?
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(Self { llt, n: a.nrows() })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        assert_eq!(b.nrows(), self.n, "right-hand side has wrong row count");
        self.llt.solve(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Csr {
        Csr::from_triplets(
            3,
            3,
            &[(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0), (2, 2, 2.0), (0, 0, 1.0)],
        )
    }

    #[test]
    fn duplicates_are_summed() {
        let a = sample();
        assert_eq!(a.get(0, 0), 5.0);
        assert_eq!(a.nnz(), 5);
    }

    #[test]
    fn products_match_dense() {
        let a = sample();
        let b = Csr::from_triplets(3, 2, &[(0, 1, 2.0), (2, 0, -1.0), (1, 1, 0.5)]);
        let dense = &a.to_dense() * &b.to_dense();
        let sp = a.matmul(&b).to_dense();
        assert!((&dense - &sp).norm_l2() < 1e-14);
        let x = Mat::from_fn(3, 2, |i, j| (i * 2 + j) as f64 - 1.5);
        assert!((&a.mul_dense(x.as_ref()) - &a.to_dense() * &x).norm_l2() < 1e-14);
        assert!((&a.tmul_dense(x.as_ref()) - a.to_dense().transpose() * &x).norm_l2() < 1e-14);
        assert!((&a.transpose().to_dense() - a.to_dense().transpose()).norm_l2() == 0.0);
    }

    #[test]
    fn cholesky_solves() {
        let a = sample();
        let chol = Cholesky::new(&a).unwrap();
        let b = Mat::from_fn(3, 1, |i, _| i as f64 + 1.0);
        let x = chol.solve(b.as_ref());
        assert!((&a.mul_dense(x.as_ref()) - &b).norm_l2() < 1e-12);
    }

    #[test]
    fn select_submatrix() {
        let a = sample();
        let s = a.select(&[1, 2], &[1, 2]);
        assert_eq!(s.to_dense()[(0, 0)], 3.0);
        assert_eq!(s.to_dense()[(1, 1)], 2.0);
        assert_eq!(s.nnz(), 2);
    }
}
