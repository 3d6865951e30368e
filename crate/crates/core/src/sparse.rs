//! Compressed sparse row storage, symmetric matrices and the Cholesky-backed
//! SPD solver used by every linear solve in the crate.

use std::fmt::Write as _;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};

use crate::error::{Error, Result};

/// Coordinate-format accumulator. Duplicate entries are summed in insertion
/// order when compressed, so assembly order fixes the result bit-for-bit.
#[derive(Clone, Debug)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        self.entries.push((i, j, v));
    }

    /// Adds `v` at `(i, j)` and `(j, i)` (once on the diagonal).
    #[inline]
    pub fn add_sym(&mut self, i: usize, j: usize, v: f64) {
        self.add(i, j, v);
        if i != j {
            self.add(j, i, v);
        }
    }

    pub fn extend(&mut self, other: TripletBuilder) {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        self.entries.extend(other.entries);
    }

    pub fn build(mut self) -> CsrMatrix {
        self.entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for &(i, j, v) in &self.entries {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.col_idx {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut fill = counts.clone();
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                col_idx[fill[j]] = i;
                values[fill[j]] = v;
                fill[j] += 1;
            }
        }
        CsrMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            row_ptr: counts,
            col_idx,
            values,
        }
    }

    /// Sparse product `self * other` (row-by-row accumulation).
    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.nrows);
        let mut marker = vec![usize::MAX; other.ncols];
        let mut acc = vec![0.0; other.ncols];
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut touched = Vec::new();
        for i in 0..self.nrows {
            touched.clear();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if marker[j] != i {
                        marker[j] = i;
                        acc[j] = 0.0;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                col_idx.push(j);
                values.push(acc[j]);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: other.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Submatrix on the given rows and columns. `col_map[j]` is the new
    /// column of old column `j`, or `None` to drop it.
    pub fn select(&self, rows: &[usize], col_map: &[Option<usize>], new_ncols: usize) -> CsrMatrix {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut buf: Vec<(usize, f64)> = Vec::new();
        for &i in rows {
            buf.clear();
            buf.extend(self.row(i).filter_map(|(j, v)| col_map[j].map(|c| (c, v))));
            buf.sort_by_key(|e| e.0);
            for &(c, v) in &buf {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            nrows: rows.len(),
            ncols: new_ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] += v;
            }
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        self.nrows == self.ncols && *self == self.transpose()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Square matrix with exactly symmetric storage.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSymmetricMatrix(CsrMatrix);

impl SparseSymmetricMatrix {
    pub fn new(m: CsrMatrix) -> Result<Self> {
        if !m.is_symmetric() {
            return Err(Error::Invalid("matrix is not exactly symmetric".into()));
        }
        Ok(Self(m))
    }

    /// Symmetric part `(M + Mᵀ)/2` of an assembled matrix whose two triangles
    /// agree up to rounding of the summation order.
    pub fn symmetrize(m: CsrMatrix) -> Self {
        let t = m.transpose();
        let mut b = TripletBuilder::with_capacity(m.nrows, m.ncols, 2 * m.nnz());
        for i in 0..m.nrows {
            for (j, v) in m.row(i) {
                b.add(i, j, 0.5 * v);
            }
        }
        for i in 0..t.nrows {
            for (j, v) in t.row(i) {
                b.add(i, j, 0.5 * v);
            }
        }
        let s = b.build();
        // Entries now read 0.5a + 0.5b on one side and 0.5b + 0.5a on the
        // other; floating addition is commutative, so storage is symmetric.
        Self(s)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows
    }

    pub fn csr(&self) -> &CsrMatrix {
        &self.0
    }

    pub fn into_csr(self) -> CsrMatrix {
        self.0
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.0.mul_vec(x)
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.0.mul_vec(x))
    }

    /// Coordinate text export of the lower triangle: `i j value` per line.
    pub fn to_coo_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.0.nrows {
            for (j, v) in self.0.row(i) {
                if j <= i {
                    let _ = writeln!(out, "{i} {j} {v:.16e}");
                }
            }
        }
        out
    }

    pub fn factor(&self, context: &str) -> Result<SpdFactor> {
        SpdFactor::new(&self.0, context)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Sparse Cholesky factorization of a symmetric positive definite matrix.
pub struct SpdFactor {
    n: usize,
    llt: Option<faer::sparse::linalg::solvers::Llt<usize, f64>>,
}

impl SpdFactor {
    /// Factors the lower triangle of `m`. A zero-dimensional matrix is legal.
    pub fn new(m: &CsrMatrix, context: &str) -> Result<Self> {
        let n = m.nrows;
        if n == 0 {
            return Ok(Self { n, llt: None });
        }
        let mut triplets = Vec::with_capacity(m.nnz() / 2 + n);
        for i in 0..n {
            for (j, v) in m.row(i) {
                if j <= i {
                    triplets.push(Triplet::new(i, j, v));
                }
            }
        }
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets).map_err(|e| {
            Error::Factorization {
                context: format!("{context}: {e:?}"),
            }
        })?;
        let llt = a.sp_cholesky(Side::Lower).map_err(|e| Error::Factorization {
            context: format!("{context}: {e:?}"),
        })?;
        Ok(Self { n, llt: Some(llt) })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n);
        let Some(llt) = &self.llt else {
            return Vec::new();
        };
        let mut b = Mat::<f64>::from_fn(self.n, 1, |i, _| rhs[i]);
        llt.solve_in_place(b.as_mut());
        (0..self.n).map(|i| b[(i, 0)]).collect()
    }

    /// Solves for several right-hand sides at once (column-major input).
    pub fn solve_many(&self, rhs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let Some(llt) = &self.llt else {
            return rhs.iter().map(|_| Vec::new()).collect();
        };
        if rhs.is_empty() {
            return Vec::new();
        }
        let mut b = Mat::<f64>::from_fn(self.n, rhs.len(), |i, j| rhs[j][i]);
        llt.solve_in_place(b.as_mut());
        (0..rhs.len())
            .map(|j| (0..self.n).map(|i| b[(i, j)]).collect())
            .collect()
    }
}

/// Dense symmetric positive definite factorization for small Schur
/// complements.
pub struct DenseSpd {
    n: usize,
    llt: Option<faer::linalg::solvers::Llt<f64>>,
}

impl DenseSpd {
    pub fn new(rows: &[Vec<f64>], context: &str) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Ok(Self { n, llt: None });
        }
        let m = Mat::<f64>::from_fn(n, n, |i, j| rows[i][j]);
        let llt = m.llt(Side::Lower).map_err(|e| Error::Factorization {
            context: format!("{context}: {e:?}"),
        })?;
        Ok(Self { n, llt: Some(llt) })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let Some(llt) = &self.llt else {
            return Vec::new();
        };
        let mut b = Mat::<f64>::from_fn(self.n, 1, |i, _| rhs[i]);
        llt.solve_in_place(b.as_mut());
        (0..self.n).map(|i| b[(i, 0)]).collect()
    }
}

/// Singular values of a small dense matrix, in nonincreasing order.
pub fn dense_singular_values(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if m == 0 || n == 0 {
        return Ok(Vec::new());
    }
    let a = Mat::<f64>::from_fn(m, n, |i, j| rows[i][j]);
    a.singular_values().map_err(|e| Error::Factorization {
        context: format!("singular value decomposition: {e:?}"),
    })
}

/// Solves a small dense general system by LU with partial pivoting.
pub fn dense_lu_solve(rows: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let n = rows.len();
    if n == 0 {
        return Vec::new();
    }
    let a = Mat::<f64>::from_fn(n, n, |i, j| rows[i][j]);
    let lu = a.partial_piv_lu();
    let mut b = Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
    lu.solve_in_place(b.as_mut());
    (0..n).map(|i| b[(i, 0)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn laplace_1d(n: usize) -> CsrMatrix {
        let mut b = TripletBuilder::new(n, n);
        for i in 0..n {
            b.add(i, i, 2.0);
            if i + 1 < n {
                b.add_sym(i, i + 1, -1.0);
            }
        }
        b.build()
    }

    #[test]
    fn duplicates_are_summed() {
        let mut b = TripletBuilder::new(2, 2);
        b.add(0, 1, 1.0);
        b.add(0, 1, 2.5);
        b.add(1, 0, 3.5);
        let m = b.build();
        assert_eq!(m.get(0, 1), 3.5);
        assert_eq!(m.get(1, 0), 3.5);
        assert_eq!(m.get(0, 0), 0.0);
        assert!(m.is_symmetric());
    }

    #[test]
    fn cholesky_solves() {
        let m = laplace_1d(50);
        let f = SpdFactor::new(&m, "test").unwrap();
        let x_true: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = m.mul_vec(&x_true);
        let x = f.solve(&b);
        for (a, b) in x.iter().zip(&x_true) {
            assert!((a - b).abs() < 1e-10);
        }
        let many = f.solve_many(&[b.clone(), b]);
        assert_eq!(many.len(), 2);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut b = TripletBuilder::new(2, 2);
        b.add(0, 0, 1.0);
        b.add(1, 1, -1.0);
        assert!(SpdFactor::new(&b.build(), "indefinite").is_err());
    }

    #[test]
    fn coo_export_is_lower_triangle() {
        let s = SparseSymmetricMatrix::new(laplace_1d(3)).unwrap();
        let text = s.to_coo_text();
        assert_eq!(text.lines().count(), 5);
        for line in text.lines() {
            let f: Vec<&str> = line.split(' ').collect();
            assert!(f[1].parse::<usize>().unwrap() <= f[0].parse::<usize>().unwrap());
        }
    }

    proptest! {
        #[test]
        fn matmul_and_transpose_agree_with_dense(
            entries in proptest::collection::vec((0usize..6, 0usize..5, -3.0f64..3.0), 0..30),
            other in proptest::collection::vec((0usize..5, 0usize..4, -3.0f64..3.0), 0..30),
        ) {
            let mut a = TripletBuilder::new(6, 5);
            for &(i, j, v) in &entries { a.add(i, j, v); }
            let mut b = TripletBuilder::new(5, 4);
            for &(i, j, v) in &other { b.add(i, j, v); }
            let (a, b) = (a.build(), b.build());
            let c = a.matmul(&b).to_dense();
            let (da, db) = (a.to_dense(), b.to_dense());
            for i in 0..6 {
                for j in 0..4 {
                    let e: f64 = (0..5).map(|k| da[i][k] * db[k][j]).sum();
                    prop_assert!((c[i][j] - e).abs() < 1e-12);
                }
            }
            let t = a.transpose().to_dense();
            for i in 0..6 { for j in 0..5 { prop_assert_eq!(t[j][i], da[i][j]); } }
        }
    }
}
