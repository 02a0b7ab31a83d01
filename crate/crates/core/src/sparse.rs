//! Compressed-column sparse matrices and an LU factorization with partial
//! pivoting.
//!
//! The numeric kernels (fill-reducing ordering, left-looking LU, triangular
//! solves) come from `rsparse`; this module owns the permutation bookkeeping,
//! transpose solves, determinant extraction and the diagonal-shift retry used
//! for nearly singular Jacobians.

use nalgebra::DMatrix;
use rsparse::data::Sprs;

use crate::error::{Error, Result};

/// Coordinate-format builder. Duplicate entries are summed on conversion.
#[derive(Debug, Clone)]
pub struct Triplets {
    nrows: usize,
    ncols: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self::with_capacity(nrows, ncols, 0)
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            rows: Vec::with_capacity(cap),
            cols: Vec::with_capacity(cap),
            vals: Vec::with_capacity(cap),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.rows.push(row);
        self.cols.push(col);
        self.vals.push(val);
    }

    /// Appends every entry of `other` shifted by `(row_off, col_off)`.
    pub fn extend_offset(&mut self, other: &Triplets, row_off: usize, col_off: usize) {
        for k in 0..other.len() {
            self.push(other.rows[k] + row_off, other.cols[k] + col_off, other.vals[k]);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.len()).map(move |k| (self.rows[k], self.cols[k], self.vals[k]))
    }

    pub fn to_csc(&self) -> CscMatrix {
        // Counting sort into columns, then merge duplicates per column.
        let mut colptr = vec![0usize; self.ncols + 1];
        for &c in &self.cols {
            colptr[c + 1] += 1;
        }
        for j in 0..self.ncols {
            colptr[j + 1] += colptr[j];
        }
        let mut next = colptr.clone();
        let nnz = self.len();
        let mut ri = vec![0usize; nnz];
        let mut rv = vec![0.0; nnz];
        for k in 0..nnz {
            let c = self.cols[k];
            let dst = next[c];
            ri[dst] = self.rows[k];
            rv[dst] = self.vals[k];
            next[c] += 1;
        }

        let mut p = Vec::with_capacity(self.ncols + 1);
        let mut i = Vec::with_capacity(nnz);
        let mut x = Vec::with_capacity(nnz);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        p.push(0isize);
        for j in 0..self.ncols {
            scratch.clear();
            scratch.extend((colptr[j]..colptr[j + 1]).map(|k| (ri[k], rv[k])));
            scratch.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for &(r, v) in &scratch {
                if last == Some(r) {
                    *x.last_mut().unwrap() += v;
                } else {
                    i.push(r);
                    x.push(v);
                    last = Some(r);
                }
            }
            p.push(i.len() as isize);
        }
        let nzmax = i.len();
        CscMatrix {
            inner: Sprs {
                nzmax,
                m: self.nrows,
                n: self.ncols,
                p,
                i,
                x,
            },
        }
    }
}

/// Compressed sparse column matrix of `f64`.
#[derive(Debug, Clone)]
pub struct CscMatrix {
    inner: Sprs<f64>,
}

impl CscMatrix {
    pub fn nrows(&self) -> usize {
        self.inner.m
    }

    pub fn ncols(&self) -> usize {
        self.inner.n
    }

    pub fn nnz(&self) -> usize {
        self.inner.p[self.inner.n] as usize
    }

    /// Entries of column `j` as `(row, value)` pairs.
    pub fn col(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let a = self.inner.p[j] as usize;
        let b = self.inner.p[j + 1] as usize;
        (a..b).map(move |k| (self.inner.i[k], self.inner.x[k]))
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.col(col).find(|e| e.0 == row).map_or(0.0, |e| e.1)
    }

    /// y = A x
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols());
        let mut y = vec![0.0; self.nrows()];
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            for (i, v) in self.col(j) {
                y[i] += v * xj;
            }
        }
        y
    }

    /// y = Aᵀ x
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows());
        (0..self.ncols())
            .map(|j| self.col(j).map(|(i, v)| v * x[i]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows(), self.ncols());
        for j in 0..self.ncols() {
            for (i, v) in self.col(j) {
                d[(i, j)] += v;
            }
        }
        d
    }

    pub fn col_norms(&self) -> Vec<f64> {
        (0..self.ncols())
            .map(|j| self.col(j).map(|(_, v)| v * v).sum::<f64>().sqrt())
            .collect()
    }

    pub fn row_norms(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.nrows()];
        for j in 0..self.ncols() {
            for (i, v) in self.col(j) {
                acc[i] += v * v;
            }
        }
        acc.into_iter().map(f64::sqrt).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.inner.x[..self.nnz()]
            .iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// A + shift·I (square matrices only).
    pub fn shifted(&self, shift: f64) -> CscMatrix {
        assert_eq!(self.nrows(), self.ncols());
        let mut t = Triplets::with_capacity(self.nrows(), self.ncols(), self.nnz() + self.ncols());
        for j in 0..self.ncols() {
            for (i, v) in self.col(j) {
                t.push(i, j, v);
            }
            t.push(j, j, shift);
        }
        t.to_csc()
    }

    pub fn to_triplets(&self) -> Triplets {
        let mut t = Triplets::with_capacity(self.nrows(), self.ncols(), self.nnz());
        for j in 0..self.ncols() {
            for (i, v) in self.col(j) {
                t.push(i, j, v);
            }
        }
        t
    }
}

/// Pivots smaller than this (relative to the largest |U_ii|) are treated as a
/// numerically singular factorization.
const SINGULAR_PIVOT_RATIO: f64 = 1e-13;

/// LU factorization `P A Q = L U` with partial pivoting and an approximate
/// minimum degree column ordering on the pattern of A + Aᵀ.
#[derive(Debug, Clone)]
pub struct SparseLu {
    n: usize,
    l: Sprs<f64>,
    u: Sprs<f64>,
    pinv: Vec<usize>,
    q: Option<Vec<usize>>,
    shift: f64,
}

impl SparseLu {
    /// Factorizes `a` as given. Fails when no acceptable pivot exists or the
    /// pivots indicate numerical singularity.
    pub fn factor(a: &CscMatrix) -> Result<Self> {
        Self::factor_inner(a, 0.0, SINGULAR_PIVOT_RATIO)
    }

    /// Like [`factor`](Self::factor) but only rejects zero or non-finite
    /// pivots. For badly scaled but regular systems such as barrier KKT
    /// matrices.
    pub fn factor_relaxed(a: &CscMatrix) -> Result<Self> {
        Self::factor_inner(a, 0.0, 0.0)
    }

    /// Factorizes `a`, retrying with `a + δI` for δ = 1e-8·2^k (k = 0, 1, …)
    /// while δ ≤ 1e-2.
    pub fn factor_with_shift(a: &CscMatrix) -> Result<Self> {
        match Self::factor_inner(a, 0.0, SINGULAR_PIVOT_RATIO) {
            Ok(lu) => Ok(lu),
            Err(first) => {
                let mut shift = 1e-8;
                let mut last = first;
                while shift <= 1e-2 {
                    match Self::factor_inner(&a.shifted(shift), shift, SINGULAR_PIVOT_RATIO) {
                        Ok(lu) => {
                            log::warn!("matrix factorized after diagonal shift {shift:.3e}");
                            return Ok(lu);
                        }
                        Err(e) => last = e,
                    }
                    shift *= 2.0;
                }
                Err(last)
            }
        }
    }

    fn factor_inner(a: &CscMatrix, shift: f64, ratio: f64) -> Result<Self> {
        let n = a.ncols();
        if a.nrows() != n {
            return Err(Error::Dimension(format!(
                "LU needs a square matrix, got {}x{}",
                a.nrows(),
                n
            )));
        }
        if n == 0 {
            return Err(Error::Dimension("LU of an empty matrix".into()));
        }
        // rsparse's AMD underflows its dense-row threshold for n < 3.
        let order = if n < 3 { -1 } else { 0 };
        let mut symb = rsparse::sqr(&a.inner, order, false);
        let num = rsparse::lu(&a.inner, &mut symb, 1.0)
            .map_err(|_| Error::Singular { sigma_min_estimate: 0.0 })?;

        let pinv: Vec<usize> = num
            .pinv
            .as_ref()
            .expect("LU always records a row permutation")
            .iter()
            .map(|&p| p as usize)
            .collect();
        let q = symb.q.map(|q| q.into_iter().map(|j| j as usize).collect());
        let lu = SparseLu {
            n,
            l: num.l,
            u: num.u,
            pinv,
            q,
            shift,
        };

        let diag = lu.u_diagonal();
        let max = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let min = diag.iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
        if !(min.is_finite() && max.is_finite()) || min <= ratio * max {
            return Err(Error::Singular { sigma_min_estimate: min });
        }
        Ok(lu)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Diagonal shift that was added before the factorization succeeded.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn u_diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|j| self.u.x[(self.u.p[j + 1] - 1) as usize])
            .collect()
    }

    /// |det A| as the product of the U diagonal. May overflow to ∞ or
    /// underflow to 0 for large systems.
    pub fn abs_det(&self) -> f64 {
        self.u_diagonal().iter().map(|d| d.abs()).product()
    }

    /// ln |det A|, safe from overflow.
    pub fn ln_abs_det(&self) -> f64 {
        self.u_diagonal().iter().map(|d| d.abs().ln()).sum()
    }

    /// Solves A x = b in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let mut x = vec![0.0; self.n];
        for (k, &bk) in b.iter().enumerate() {
            x[self.pinv[k]] = bk;
        }
        rsparse::lsolve(&self.l, &mut x);
        rsparse::usolve(&self.u, &mut x);
        match &self.q {
            Some(q) => {
                for (k, &xk) in x.iter().enumerate() {
                    b[q[k]] = xk;
                }
            }
            None => b.copy_from_slice(&x),
        }
    }

    /// Solves Aᵀ x = b in place.
    pub fn solve_transpose_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let mut x: Vec<f64> = match &self.q {
            Some(q) => (0..self.n).map(|k| b[q[k]]).collect(),
            None => b.to_vec(),
        };
        rsparse::utsolve(&self.u, &mut x);
        rsparse::ltsolve(&self.l, &mut x);
        for (k, bk) in b.iter_mut().enumerate() {
            *bk = x[self.pinv[k]];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_transpose_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (CscMatrix, DMatrix<f64>) {
        let dense = DMatrix::from_row_slice(
            5,
            5,
            &[
                4.0, 1.0, 0.0, 0.0, 2.0, //
                0.0, 3.0, 1.0, 0.0, 0.0, //
                1.0, 0.0, 0.0, 5.0, 0.0, //
                0.0, 0.0, 2.0, 1.0, 0.0, //
                0.5, 0.0, 0.0, 0.0, 6.0,
            ],
        );
        let mut t = Triplets::new(5, 5);
        for i in 0..5 {
            for j in 0..5 {
                if dense[(i, j)] != 0.0 {
                    t.push(i, j, dense[(i, j)]);
                }
            }
        }
        (t.to_csc(), dense)
    }

    #[test]
    fn duplicates_are_summed() {
        let mut t = Triplets::new(2, 2);
        t.push(0, 0, 1.0);
        t.push(0, 0, 2.5);
        t.push(1, 0, -1.0);
        let a = t.to_csc();
        assert_eq!(a.get(0, 0), 3.5);
        assert_eq!(a.get(1, 0), -1.0);
        assert_eq!(a.nnz(), 2);
    }

    #[test]
    fn solves_match_dense() {
        let (a, d) = sample();
        let lu = SparseLu::factor(&a).unwrap();
        let b = [1.0, -2.0, 0.5, 3.0, 4.0];
        let x = lu.solve(&b);
        let r = &d * nalgebra::DVector::from_column_slice(&x);
        for i in 0..5 {
            assert!((r[i] - b[i]).abs() < 1e-12);
        }
        let xt = lu.solve_transpose(&b);
        let rt = d.transpose() * nalgebra::DVector::from_column_slice(&xt);
        for i in 0..5 {
            assert!((rt[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn determinant_from_u_diagonal() {
        let (a, d) = sample();
        let lu = SparseLu::factor(&a).unwrap();
        let det = d.clone().lu().determinant();
        assert!((lu.abs_det() - det.abs()).abs() < 1e-10 * det.abs());
        assert!((lu.ln_abs_det() - det.abs().ln()).abs() < 1e-12);
    }

    #[test]
    fn singular_matrix_is_shifted() {
        let mut t = Triplets::new(3, 3);
        t.push(0, 0, 1.0);
        t.push(0, 1, -1.0);
        t.push(1, 0, -1.0);
        t.push(1, 1, 1.0);
        t.push(2, 2, 2.0);
        let a = t.to_csc();
        assert!(SparseLu::factor(&a).is_err());
        let lu = SparseLu::factor_with_shift(&a).unwrap();
        assert!(lu.shift() > 0.0 && lu.shift() <= 1e-2);
    }

    #[test]
    fn tiny_systems_use_natural_order() {
        let mut t = Triplets::new(1, 1);
        t.push(0, 0, 4.0);
        let lu = SparseLu::factor(&t.to_csc()).unwrap();
        assert_eq!(lu.solve(&[2.0]), vec![0.5]);
    }
}
