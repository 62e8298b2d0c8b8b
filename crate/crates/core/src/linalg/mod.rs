//! Dense linear algebra on column-major `f64` matrices.
//!
//! The kernels here are sized for tall skinny problems: a grid dimension
//! N up to ~10^6 rows against an orbital count n_e up to a few hundred
//! columns. Matrix products route through `matrixmultiply` over fixed
//! row panels so results are bitwise reproducible regardless of how many
//! Rayon threads happen to run them.

mod cholesky;
mod jacobi;
mod qr;

pub use cholesky::cholesky;
pub use jacobi::{condition_estimate, singular_values, sym_eigh};
pub use qr::{householder_qr, qrcp, HouseholderQr, QrcpResult};

use crate::error::{Result, ScdmError};
use rayon::prelude::*;

/// Column-major matrix: entry (i, j) lives at `data[i + j * rows]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i + i * n] = 1.0;
        }
        m
    }

    /// Takes `data` in column-major order; length must equal rows * cols.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(ScdmError::DimensionMismatch {
                op: "from_col_major",
                details: format!("{} entries for a {rows}x{cols} matrix", data.len()),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Row-by-row literal, convenient in tests.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut m = Matrix::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged rows");
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn swap_cols(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let r = self.rows;
        let (lo, hi) = (a.min(b), a.max(b));
        let (head, tail) = self.data.split_at_mut(hi * r);
        head[lo * r..(lo + 1) * r].swap_with_slice(&mut tail[..r]);
    }

    /// First index with a NaN or infinity, if any.
    pub fn find_non_finite(&self) -> Option<(usize, usize)> {
        let pos = self.data.iter().position(|v| !v.is_finite())?;
        Some((pos % self.rows, pos / self.rows))
    }

    pub fn validate_finite(&self) -> Result<()> {
        match self.find_non_finite() {
            Some((row, col)) => Err(ScdmError::NonFinite { row, col }),
            None => Ok(()),
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        // Block the copy so both sides stay cache resident.
        const B: usize = 64;
        for jb in (0..self.cols).step_by(B) {
            let jhi = (jb + B).min(self.cols);
            for ib in (0..self.rows).step_by(B) {
                let ihi = (ib + B).min(self.rows);
                for j in jb..jhi {
                    for i in ib..ihi {
                        t.data[j + i * self.cols] = self.data[i + j * self.rows];
                    }
                }
            }
        }
        t
    }

    /// New matrix whose columns are `self`'s columns at `indices`, in order.
    pub fn select_cols(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.rows, indices.len());
        for (dst, &src) in indices.iter().enumerate() {
            out.col_mut(dst).copy_from_slice(self.col(src));
        }
        out
    }

    /// New matrix whose rows are `self`'s rows at `indices`, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(indices.len(), self.cols);
        for j in 0..self.cols {
            let src = self.col(j);
            let dst = out.col_mut(j);
            for (k, &i) in indices.iter().enumerate() {
                dst[k] = src[i];
            }
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Frobenius norm with compensated accumulation of the squares.
    pub fn frobenius_norm(&self) -> f64 {
        compensated_sum(self.data.iter().map(|v| v * v)).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest |self - other| entry; the matrices must be the same shape.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Largest deviation of `self` from the identity, with its position.
    pub fn max_abs_diff_from_identity(&self) -> (f64, usize, usize) {
        let mut worst = (0.0f64, 0, 0);
        for j in 0..self.cols {
            for i in 0..self.rows {
                let target = if i == j { 1.0 } else { 0.0 };
                let dev = (self.data[i + j * self.rows] - target).abs();
                if dev > worst.0 {
                    worst = (dev, i, j);
                }
            }
        }
        worst
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i + j * self.rows]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i + j * self.rows]
    }
}

/// Column permutation recorded by pivoted factorizations.
///
/// `map()[k]` is the original index of the column that ended up in
/// position `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation {
            map: (0..n).collect(),
        }
    }

    pub fn from_map(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &m in &map {
            if m >= n || seen[m] {
                return Err(ScdmError::InvalidParam {
                    name: "permutation",
                    reason: format!("map {map:?} is not a permutation of 0..{n}"),
                });
            }
            seen[m] = true;
        }
        Ok(Permutation { map })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }

    pub(crate) fn swap(&mut self, a: usize, b: usize) {
        self.map.swap(a, b);
    }

    /// A * P: reorders columns so position k holds original column map[k].
    pub fn apply_to_cols(&self, a: &Matrix) -> Matrix {
        assert_eq!(a.cols, self.map.len());
        a.select_cols(&self.map)
    }

    /// inverse()[orig] = position where column `orig` ended up.
    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0usize; self.map.len()];
        for (pos, &orig) in self.map.iter().enumerate() {
            inv[orig] = pos;
        }
        Permutation { map: inv }
    }

    /// Composition: applying `self` after `other`.
    pub fn compose(&self, other: &Permutation) -> Permutation {
        assert_eq!(self.map.len(), other.map.len());
        Permutation {
            map: self.map.iter().map(|&k| other.map[k]).collect(),
        }
    }
}

/// Rows of the left factor handled per Rayon task. Fixed so the panel
/// decomposition, and therefore the floating-point result, does not
/// depend on the thread count.
const GEMM_ROW_PANEL: usize = 32_768;

/// C = A * B through `matrixmultiply`, parallel over fixed row panels.
pub fn gemm(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(ScdmError::DimensionMismatch {
            op: "gemm",
            details: format!("{}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols),
        });
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut c = Matrix::zeros(m, n);
    if m == 0 || n == 0 {
        return Ok(c);
    }
    if k == 0 {
        return Ok(c); // zeros already
    }

    struct Panes(*mut f64);
    unsafe impl Send for Panes {}
    unsafe impl Sync for Panes {}
    let cptr = Panes(c.data.as_mut_ptr());
    let panels = m.div_ceil(GEMM_ROW_PANEL);
    (0..panels).into_par_iter().for_each(|p| {
        let r0 = p * GEMM_ROW_PANEL;
        let pm = GEMM_ROW_PANEL.min(m - r0);
        let cptr = &cptr;
        // Panels cover disjoint row ranges of A and C, so the raw writes
        // below never alias across tasks.
        unsafe {
            matrixmultiply::dgemm(
                pm,
                k,
                n,
                1.0,
                a.data.as_ptr().add(r0),
                1,
                m as isize,
                b.data.as_ptr(),
                1,
                k as isize,
                0.0,
                cptr.0.add(r0),
                1,
                m as isize,
            );
        }
    });
    Ok(c)
}

/// A^T * B without materializing the transpose.
///
/// Used for Gram matrices and overlap blocks where A and B share their
/// (large) row dimension.
pub fn gemm_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(ScdmError::DimensionMismatch {
            op: "gemm_tn",
            details: format!("{}x{} transposed times {}x{}", a.rows, a.cols, b.rows, b.cols),
        });
    }
    let (m, k, n) = (a.cols, a.rows, b.cols);
    let mut c = Matrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return Ok(c);
    }
    // The output is small (orbital-count square); one dgemm call reading
    // A with swapped strides is deterministic and fast enough.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            k as isize,
            1,
            b.data.as_ptr(),
            1,
            k as isize,
            0.0,
            c.data.as_mut_ptr(),
            1,
            m as isize,
        );
    }
    Ok(c)
}

/// Neumaier compensated sum.
///
/// Plain accumulation of 10^6 positive terms carries ~1e-10 relative
/// error, the same order as the orthonormality tolerances used
/// throughout; compensation keeps validation sums an order of magnitude
/// sharper than what they check.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Squared 2-norm of a slice, plain accumulation.
///
/// Residual-norm bookkeeping inside pivoted QR does not need
/// compensation; the pivot comparisons tolerate relative error far above
/// 1e-12.
pub(crate) fn norm2(xs: &[f64]) -> f64 {
    xs.iter().map(|v| v * v).sum()
}
