//! Dense row-major matrices and compressed-sparse-row adjacency.
//!
//! Values are held as `f64` in memory. File formats narrow to `f32`
//! (see [`crate::io`]), so every reduction here runs in double precision.

use rayon::prelude::*;

use crate::error::{rejected, Error, Result};

/// Row-parallel kernels only fan out above this many output elements;
/// below it the scheduling overhead dominates the tiny subgraph matrices.
const PAR_THRESHOLD: usize = 1 << 15;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major values, rejecting wrong lengths and non-finite entries.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        let expected = rows
            .checked_mul(cols)
            .ok_or_else(|| rejected("matrix shape overflows"))?;
        if values.len() != expected {
            return Err(rejected(format!(
                "matrix {rows}x{cols} needs {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value at row {}, col {}",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), rows * cols);
        Self { rows, cols, values }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(rejected(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.cols + j] = v;
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, ids: &[usize]) -> Self {
        let mut values = Vec::with_capacity(ids.len() * self.cols);
        for &i in ids {
            values.extend_from_slice(self.row(i));
        }
        Self::from_raw(ids.len(), self.cols, values)
    }

    /// `self · w`.
    pub fn matmul(&self, w: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != w.rows {
            return Err(rejected(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, w.rows, w.cols
            )));
        }
        let (inner, out_cols) = (self.cols, w.cols);
        let mut out = vec![0.0; self.rows * out_cols];
        let kernel = |(i, out_row): (usize, &mut [f64])| {
            let x = &self.values[i * inner..(i + 1) * inner];
            for (k, &xk) in x.iter().enumerate() {
                if xk == 0.0 {
                    continue;
                }
                let w_row = &w.values[k * out_cols..(k + 1) * out_cols];
                for (o, &wv) in out_row.iter_mut().zip(w_row) {
                    *o += xk * wv;
                }
            }
        };
        if out_cols == 0 {
            return Ok(Self::from_raw(self.rows, 0, out));
        }
        if out.len() >= PAR_THRESHOLD {
            out.par_chunks_mut(out_cols).enumerate().for_each(kernel);
        } else {
            out.chunks_mut(out_cols).enumerate().for_each(kernel);
        }
        Ok(Self::from_raw(self.rows, out_cols, out))
    }

    /// `selfᵀ · g`, accumulated in ascending row order.
    pub fn t_matmul(&self, g: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != g.rows {
            return Err(rejected(format!(
                "t_matmul: ({}x{})ᵀ times {}x{}",
                self.rows, self.cols, g.rows, g.cols
            )));
        }
        let mut out = vec![0.0; self.cols * g.cols];
        for i in 0..self.rows {
            let x = self.row(i);
            let gr = g.row(i);
            for (k, &xk) in x.iter().enumerate() {
                if xk == 0.0 {
                    continue;
                }
                let dst = &mut out[k * g.cols..(k + 1) * g.cols];
                for (o, &gv) in dst.iter_mut().zip(gr) {
                    *o += xk * gv;
                }
            }
        }
        Ok(Self::from_raw(self.cols, g.cols, out))
    }

    /// `self · wᵀ`.
    pub fn matmul_t(&self, w: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != w.cols {
            return Err(rejected(format!(
                "matmul_t: {}x{} times ({}x{})ᵀ",
                self.rows, self.cols, w.rows, w.cols
            )));
        }
        let out_cols = w.rows;
        let mut out = vec![0.0; self.rows * out_cols];
        let kernel = |(i, out_row): (usize, &mut [f64])| {
            let x = self.row(i);
            for (k, o) in out_row.iter_mut().enumerate() {
                *o = dot(x, w.row(k));
            }
        };
        if out_cols == 0 {
            return Ok(Self::from_raw(self.rows, 0, out));
        }
        if out.len() >= PAR_THRESHOLD {
            out.par_chunks_mut(out_cols).enumerate().for_each(kernel);
        } else {
            out.chunks_mut(out_cols).enumerate().for_each(kernel);
        }
        Ok(Self::from_raw(self.rows, out_cols, out))
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.values[j * self.rows + i] = self.values[i * self.cols + j];
            }
        }
        out
    }

    pub fn relu(&self) -> DenseMatrix {
        let values = self.values.iter().map(|&v| v.max(0.0)).collect();
        Self::from_raw(self.rows, self.cols, values)
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn concat_cols(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(rejected(format!(
                "concat_cols: {} rows vs {} rows",
                self.rows, other.rows
            )));
        }
        let cols = self.cols + other.cols;
        let mut values = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            values.extend_from_slice(self.row(i));
            values.extend_from_slice(other.row(i));
        }
        Ok(Self::from_raw(self.rows, cols, values))
    }

    /// Splits into `[:, ..at]` and `[:, at..]`.
    pub fn split_cols(&self, at: usize) -> (DenseMatrix, DenseMatrix) {
        assert!(at <= self.cols, "split point past last column");
        let mut left = Vec::with_capacity(self.rows * at);
        let mut right = Vec::with_capacity(self.rows * (self.cols - at));
        for i in 0..self.rows {
            let r = self.row(i);
            left.extend_from_slice(&r[..at]);
            right.extend_from_slice(&r[at..]);
        }
        (
            Self::from_raw(self.rows, at, left),
            Self::from_raw(self.rows, self.cols - at, right),
        )
    }

    /// Scales every nonzero row to unit Euclidean norm; zero rows pass through.
    pub fn l2_normalize_rows(&self) -> DenseMatrix {
        let mut out = self.clone();
        if self.cols == 0 {
            return out;
        }
        for row in out.values.chunks_mut(self.cols) {
            let norm = dot(row, row).sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        out
    }

    pub(crate) fn add_assign(&mut self, other: &DenseMatrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub(crate) fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Square sparse matrix in compressed-sparse-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAdjacency {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

impl SparseAdjacency {
    /// Validates raw CSR arrays. With `symmetric`, also checks that (i,j) and
    /// (j,i) are both stored with equal value.
    pub fn new(
        n: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
        symmetric: bool,
    ) -> Result<Self> {
        if row_offsets.len() != n + 1 {
            return Err(Error::Validation(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                n + 1
            )));
        }
        if row_offsets[0] != 0 || row_offsets[n] != col_indices.len() {
            return Err(Error::Validation(
                "row_offsets must start at 0 and end at nnz".into(),
            ));
        }
        if col_indices.len() != values.len() {
            return Err(Error::Validation(
                "col_indices and values differ in length".into(),
            ));
        }
        for i in 0..n {
            let (lo, hi) = (row_offsets[i], row_offsets[i + 1]);
            if lo > hi {
                return Err(Error::Validation(format!("row_offsets decrease at row {i}")));
            }
            let cols = &col_indices[lo..hi];
            if cols.iter().any(|&c| c >= n) {
                return Err(Error::Validation(format!("column index out of range in row {i}")));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Validation(format!(
                    "column indices not strictly increasing in row {i}"
                )));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite affinity".into()));
        }
        let adj = Self {
            n,
            row_offsets,
            col_indices,
            values,
            symmetric: false,
        };
        if symmetric && !adj.check_symmetric() {
            return Err(Error::Validation("adjacency flagged symmetric is not".into()));
        }
        Ok(Self { symmetric, ..adj })
    }

    /// Builds from per-row `(column, value)` lists; rows are sorted, duplicates rejected.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>, symmetric: bool) -> Result<Self> {
        let n = rows.len();
        let mut row_offsets = Vec::with_capacity(n + 1);
        row_offsets.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut col_indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for mut r in rows {
            r.sort_by_key(|&(c, _)| c);
            for (c, v) in r {
                col_indices.push(c);
                values.push(v);
            }
            row_offsets.push(col_indices.len());
        }
        Self::new(n, row_offsets, col_indices, values, symmetric)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
            symmetric: true,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Stored entries of row `i` as `(column, value)`, ascending by column.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        self.col_indices[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    /// Entry (i, j), or `None` when not stored.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        self.col_indices[lo..hi]
            .binary_search(&j)
            .ok()
            .map(|p| self.values[lo + p])
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m.set(i, j, v);
            }
        }
        m
    }

    fn check_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| self.get(j, i) == Some(v)))
    }

    /// Sparse-dense product `self · x`; each output row sums in ascending column order.
    pub fn spmm(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if self.n != x.rows() {
            return Err(rejected(format!(
                "spmm: {}x{} sparse times {}x{} dense",
                self.n,
                self.n,
                x.rows(),
                x.cols()
            )));
        }
        let d = x.cols();
        let mut out = vec![0.0; self.n * d];
        if d == 0 {
            return Ok(DenseMatrix::from_raw(self.n, 0, out));
        }
        let xs = x.as_slice();
        let kernel = |(i, out_row): (usize, &mut [f64])| {
            for (j, a) in self.row(i) {
                for (o, &xv) in out_row.iter_mut().zip(&xs[j * d..(j + 1) * d]) {
                    *o += a * xv;
                }
            }
        };
        if out.len() >= PAR_THRESHOLD {
            out.par_chunks_mut(d).enumerate().for_each(kernel);
        } else {
            out.chunks_mut(d).enumerate().for_each(kernel);
        }
        Ok(DenseMatrix::from_raw(self.n, d, out))
    }

    /// `selfᵀ · x` by scattering rows; deterministic (ascending source row).
    pub fn spmm_transpose(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if self.n != x.rows() {
            return Err(rejected(format!(
                "spmm_transpose: {}x{} sparse times {}x{} dense",
                self.n,
                self.n,
                x.rows(),
                x.cols()
            )));
        }
        if self.symmetric {
            return self.spmm(x);
        }
        let d = x.cols();
        let mut out = vec![0.0; self.n * d];
        for i in 0..self.n {
            let xr = x.row(i);
            for (j, a) in self.row(i) {
                for (o, &xv) in out[j * d..(j + 1) * d].iter_mut().zip(xr) {
                    *o += a * xv;
                }
            }
        }
        Ok(DenseMatrix::from_raw(self.n, d, out))
    }

    /// Row `i` of `self + I` scaled so it sums to one.
    pub fn normalized_with_self_loops(&self) -> SparseAdjacency {
        let mut row_offsets = Vec::with_capacity(self.n + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::with_capacity(self.nnz() + self.n);
        let mut values = Vec::with_capacity(self.nnz() + self.n);
        for i in 0..self.n {
            let start = col_indices.len();
            let mut inserted = false;
            for (j, v) in self.row(i) {
                let v = v.max(0.0);
                if !inserted && j >= i {
                    if j == i {
                        col_indices.push(i);
                        values.push(v + 1.0);
                        inserted = true;
                        continue;
                    }
                    col_indices.push(i);
                    values.push(1.0);
                    inserted = true;
                }
                col_indices.push(j);
                values.push(v);
            }
            if !inserted {
                col_indices.push(i);
                values.push(1.0);
            }
            let sum: f64 = values[start..].iter().sum();
            values[start..].iter_mut().for_each(|v| *v /= sum);
            row_offsets.push(col_indices.len());
        }
        SparseAdjacency {
            n: self.n,
            row_offsets,
            col_indices,
            values,
            symmetric: false,
        }
    }
}
