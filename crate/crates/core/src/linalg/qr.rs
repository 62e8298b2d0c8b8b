//! Householder QR, unpivoted and column-pivoted.
//!
//! The pivoted variant is the selection engine: run on a transposed
//! orbital matrix (orbitals as rows), its first pivots name the grid
//! points that best condition the basis. It is written for very wide
//! inputs (few rows, up to ~10^6 columns): the trailing update is the
//! whole cost, so it runs over column chunks in parallel. Every column's
//! update is independent scalar arithmetic, which makes the factorization
//! bitwise deterministic no matter how the chunks are scheduled.

use super::{norm2, Matrix, Permutation};
use rayon::prelude::*;

/// Columns per parallel task in the trailing update.
const COL_CHUNK: usize = 256;

/// Trailing-column counts below this run serially; task setup would
/// dominate the arithmetic.
const PAR_MIN_COLS: usize = 512;

/// Residual column norms are tracked by downdating. When a downdated
/// value falls below this fraction of its last recomputed reference it
/// has lost too many digits to cancellation and is recomputed exactly.
const DOWNDATE_GUARD: f64 = 1e-3;

/// Diagonal entries of R below this fraction of the largest one no
/// longer carry rank information.
const RANK_RTOL: f64 = 1e-12;

/// Compact Householder factorization A = Q R.
///
/// Reflector k lives in column k below the diagonal (unit leading entry
/// implicit); R occupies the upper triangle. Accessors apply the
/// positive-diagonal convention: diag(R) >= 0, which pins down Q and R
/// uniquely for full-rank input.
#[derive(Debug, Clone)]
pub struct HouseholderQr {
    packed: Matrix,
    tau: Vec<f64>,
}

impl HouseholderQr {
    pub fn rows(&self) -> usize {
        self.packed.rows()
    }

    pub fn cols(&self) -> usize {
        self.packed.cols()
    }

    fn steps(&self) -> usize {
        self.rows().min(self.cols())
    }

    /// Diagonal of R before sign normalization.
    pub fn r_diag_raw(&self) -> Vec<f64> {
        (0..self.steps()).map(|k| self.packed[(k, k)]).collect()
    }

    fn diag_signs(&self) -> Vec<f64> {
        self.r_diag_raw()
            .iter()
            .map(|&d| if d < 0.0 { -1.0 } else { 1.0 })
            .collect()
    }

    /// R with nonnegative diagonal, min(m,n) x n.
    pub fn r_factor(&self) -> Matrix {
        let s = self.steps();
        let n = self.cols();
        let signs = self.diag_signs();
        let mut r = Matrix::zeros(s, n);
        for j in 0..n {
            for i in 0..s.min(j + 1) {
                r[(i, j)] = signs[i] * self.packed[(i, j)];
            }
        }
        r
    }

    /// Q with columns matching the nonnegative-diagonal R, m x min(m,n).
    pub fn q_thin(&self) -> Matrix {
        let mut q = self.q_thin_raw();
        for (k, s) in self.diag_signs().into_iter().enumerate() {
            if s < 0.0 {
                for v in q.col_mut(k) {
                    *v = -*v;
                }
            }
        }
        q
    }

    fn q_thin_raw(&self) -> Matrix {
        let m = self.rows();
        let s = self.steps();
        let mut q = Matrix::zeros(m, s);
        for c in 0..s {
            q[(c, c)] = 1.0;
        }
        // Accumulate Q = H_0 ... H_{s-1} I by applying reflectors in
        // reverse. Reflector k only touches columns >= k at this point.
        for k in (0..s).rev() {
            let t = self.tau[k];
            if t == 0.0 {
                continue;
            }
            for c in k..s {
                apply_reflector(self.packed.col(k), k, t, q.col_mut(c));
            }
        }
        q
    }
}

/// w = tau * (v^T x) over rows k..m, then x -= w v, with v's unit leading
/// entry implicit and its tail stored in `vcol[k+1..]`.
#[inline]
fn apply_reflector(vcol: &[f64], k: usize, tau: f64, x: &mut [f64]) {
    let m = x.len();
    let mut w = x[k];
    for i in k + 1..m {
        w += vcol[i] * x[i];
    }
    w *= tau;
    x[k] -= w;
    for i in k + 1..m {
        x[i] -= w * vcol[i];
    }
}

/// Builds the reflector for column k in place: on return the column holds
/// R_kk at row k and the reflector tail below. Returns tau (0 means the
/// column was already reduced).
fn reflect_column(col: &mut [f64], k: usize) -> f64 {
    let alpha = col[k];
    let sigma = norm2(&col[k + 1..]);
    if sigma == 0.0 {
        return 0.0;
    }
    let norm = (alpha * alpha + sigma).sqrt();
    let beta = if alpha >= 0.0 { -norm } else { norm };
    let tau = (beta - alpha) / beta;
    let scale = 1.0 / (alpha - beta);
    for v in &mut col[k + 1..] {
        *v *= scale;
    }
    col[k] = beta;
    tau
}

/// Unpivoted Householder QR. Consumes its input; the factorization is
/// done in place.
pub fn householder_qr(mut a: Matrix) -> HouseholderQr {
    let m = a.rows();
    let n = a.cols();
    let steps = m.min(n);
    let mut tau = vec![0.0; steps];
    for k in 0..steps {
        tau[k] = reflect_column(&mut a.col_mut(k)[..], k);
        if tau[k] == 0.0 {
            continue;
        }
        update_trailing(&mut a, k, tau[k], None);
    }
    HouseholderQr { packed: a, tau }
}

/// Applies reflector k to all columns right of k. When `norms` is
/// present (pivoted path) each column's residual norm is downdated by its
/// new row-k entry, with a guarded recompute once cancellation bites.
fn update_trailing(a: &mut Matrix, k: usize, tau: f64, norms: Option<(&mut [f64], &mut [f64])>) {
    let m = a.rows();
    let n = a.cols();
    if k + 1 >= n {
        return;
    }
    let (head, tail) = a.data_mut().split_at_mut((k + 1) * m);
    let vcol = &head[k * m..(k + 1) * m];
    let ncols = n - k - 1;

    match norms {
        None => {
            if ncols >= PAR_MIN_COLS {
                tail.par_chunks_mut(m * COL_CHUNK).for_each(|chunk| {
                    for col in chunk.chunks_mut(m) {
                        apply_reflector(vcol, k, tau, col);
                    }
                });
            } else {
                for col in tail.chunks_mut(m) {
                    apply_reflector(vcol, k, tau, col);
                }
            }
        }
        Some((norms, refs)) => {
            let norms = &mut norms[k + 1..];
            let refs = &mut refs[k + 1..];
            let per_col = |col: &mut [f64], nj: &mut f64, rj: &mut f64| {
                if tau != 0.0 {
                    apply_reflector(vcol, k, tau, col);
                }
                let r = col[k];
                *nj -= r * r;
                if *nj < DOWNDATE_GUARD * *rj {
                    *nj = norm2(&col[k + 1..]);
                    *rj = *nj;
                }
            };
            if ncols >= PAR_MIN_COLS {
                tail.par_chunks_mut(m * COL_CHUNK)
                    .zip(norms.par_chunks_mut(COL_CHUNK))
                    .zip(refs.par_chunks_mut(COL_CHUNK))
                    .for_each(|((cols, ns), rs)| {
                        for ((col, nj), rj) in cols.chunks_mut(m).zip(ns).zip(rs) {
                            per_col(col, nj, rj);
                        }
                    });
            } else {
                for ((col, nj), rj) in tail.chunks_mut(m).zip(norms).zip(refs) {
                    per_col(col, nj, rj);
                }
            }
        }
    }
}

/// Column-pivoted QR: A P = Q R with |diag(R)| non-increasing.
#[derive(Debug, Clone)]
pub struct QrcpResult {
    qr: HouseholderQr,
    pivots: Permutation,
    rank_hint: usize,
}

impl QrcpResult {
    /// Original column indices in pivot order: entry k names the column
    /// factored at step k.
    pub fn pivots(&self) -> &Permutation {
        &self.pivots
    }

    /// Numerical rank estimate: diagonal entries of R above
    /// 1e-12 relative to the largest.
    pub fn rank_hint(&self) -> usize {
        self.rank_hint
    }

    /// Diagonal of R as factored (signs unnormalized, magnitudes
    /// non-increasing).
    pub fn r_diag(&self) -> Vec<f64> {
        self.qr.r_diag_raw()
    }

    /// R of the pivoted factorization, raw signs: A P = q_thin_raw * R.
    pub fn r_factor_raw(&self) -> Matrix {
        let s = self.qr.steps();
        let n = self.qr.cols();
        let mut r = Matrix::zeros(s, n);
        for j in 0..n {
            for i in 0..s.min(j + 1) {
                r[(i, j)] = self.qr.packed[(i, j)];
            }
        }
        r
    }

    pub fn q_thin_raw(&self) -> Matrix {
        self.qr.q_thin_raw()
    }

    /// Q rescaled so the corresponding R has nonnegative diagonal. For a
    /// square input this is the unique orthogonalizer of the pivoted
    /// columns under the positive-diagonal convention.
    pub fn q_thin_positive(&self) -> Matrix {
        let mut q = self.qr.q_thin_raw();
        for (k, d) in self.qr.r_diag_raw().into_iter().enumerate() {
            if d < 0.0 {
                for v in q.col_mut(k) {
                    *v = -*v;
                }
            }
        }
        q
    }
}

/// Column-pivoted Householder QR, greedy on residual 2-norms.
///
/// At each step the remaining column with the largest residual norm is
/// chosen; exact ties go to the lowest original column index. Norms are
/// tracked by downdating with a guarded recompute, so the pivot sequence
/// matches a from-scratch implementation on anything short of adversarial
/// near-ties.
pub fn qrcp(mut a: Matrix) -> QrcpResult {
    let m = a.rows();
    let n = a.cols();
    let steps = m.min(n);
    let mut tau = vec![0.0; steps];
    let mut pivots = Permutation::identity(n);
    let mut norms: Vec<f64> = (0..n).map(|j| norm2(a.col(j))).collect();
    let mut refs = norms.clone();

    for k in 0..steps {
        let mut best = k;
        for j in k + 1..n {
            let better = norms[j] > norms[best]
                || (norms[j] == norms[best] && pivots.map()[j] < pivots.map()[best]);
            if better {
                best = j;
            }
        }
        if best != k {
            a.swap_cols(k, best);
            norms.swap(k, best);
            refs.swap(k, best);
            pivots.swap(k, best);
        }
        tau[k] = reflect_column(&mut a.col_mut(k)[..], k);
        // Even a null reflector consumes row k; trailing norms must drop
        // that row, so the update runs unconditionally.
        update_trailing(&mut a, k, tau[k], Some((&mut norms, &mut refs)));
    }

    let qr = HouseholderQr { packed: a, tau };
    let diag = qr.r_diag_raw();
    let dmax = diag.iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
    let rank_hint = if dmax == 0.0 {
        0
    } else {
        diag.iter().take_while(|d| d.abs() > RANK_RTOL * dmax).count()
    };

    QrcpResult {
        qr,
        pivots,
        rank_hint,
    }
}
