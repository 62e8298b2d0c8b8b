//! Jacobi iterations: one-sided SVD for singular values and a two-sided
//! symmetric eigensolver.
//!
//! Both operate on orbital-count-square matrices (a few hundred at most)
//! where the O(n^3)-per-sweep cost is irrelevant and Jacobi's high
//! relative accuracy on small singular values is exactly what condition
//! estimation needs.

use super::Matrix;

const MAX_SWEEPS: usize = 60;

/// Singular values in non-increasing order via one-sided Jacobi.
///
/// Columns of a working copy are rotated pairwise until mutually
/// orthogonal; their norms are then the singular values.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    let mut u = if a.rows() >= a.cols() {
        a.clone()
    } else {
        a.transpose()
    };
    let n = u.cols();
    if n == 0 || u.rows() == 0 {
        return vec![];
    }

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (app, aqq, apq) = column_moments(&u, p, q);
                if apq.abs() <= 1e-15 * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut u, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut svals: Vec<f64> = (0..n)
        .map(|j| super::norm2(u.col(j)).sqrt())
        .collect();
    svals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    svals
}

fn column_moments(u: &Matrix, p: usize, q: usize) -> (f64, f64, f64) {
    let cp = u.col(p);
    let cq = u.col(q);
    let mut app = 0.0;
    let mut aqq = 0.0;
    let mut apq = 0.0;
    for (x, y) in cp.iter().zip(cq) {
        app += x * x;
        aqq += y * y;
        apq += x * y;
    }
    (app, aqq, apq)
}

fn rotate_columns(u: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let rows = u.rows();
    let (lo, hi) = (p.min(q), p.max(q));
    let (head, tail) = u.data_mut().split_at_mut(hi * rows);
    let first = &mut head[lo * rows..(lo + 1) * rows];
    let second = &mut tail[..rows];
    // (p, q) order matters for the rotation signs; undo the sort.
    let (cp, cq): (&mut [f64], &mut [f64]) = if p < q { (first, second) } else { (second, first) };
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = c * *x - s * *y;
        let yq = s * *x + c * *y;
        *x = xp;
        *y = yq;
    }
}

/// Largest over smallest singular value; infinity when the smallest
/// underflows to zero (rank-deficient input).
pub fn condition_estimate(a: &Matrix) -> f64 {
    let svals = singular_values(a);
    match (svals.first(), svals.last()) {
        (Some(&smax), Some(&smin)) => {
            if smax == 0.0 {
                f64::INFINITY
            } else {
                smax / smin // +inf when smin == 0
            }
        }
        _ => 1.0,
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic two-sided Jacobi.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as columns. Symmetry of the input is assumed, not
/// checked; only the full matrix is read.
pub fn sym_eigh(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.rows();
    assert_eq!(n, a.cols(), "sym_eigh needs a square matrix");
    let mut w = a.clone();
    let mut v = Matrix::identity(n);
    if n <= 1 {
        let evals = (0..n).map(|i| w[(i, i)]).collect();
        return (evals, v);
    }

    let scale = w.max_abs().max(1.0);
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                off = off.max(w[(p, q)].abs());
            }
        }
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = w[(p, q)];
                if apq.abs() <= 1e-18 * scale {
                    continue;
                }
                let theta = (w[(q, q)] - w[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                // Two-sided update: W <- J^T W J on rows/cols p and q.
                for i in 0..n {
                    let wip = w[(i, p)];
                    let wiq = w[(i, q)];
                    w[(i, p)] = c * wip - s * wiq;
                    w[(i, q)] = s * wip + c * wiq;
                }
                for i in 0..n {
                    let wpi = w[(p, i)];
                    let wqi = w[(q, i)];
                    w[(p, i)] = c * wpi - s * wqi;
                    w[(q, i)] = s * wpi + c * wqi;
                }
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = c * vip - s * viq;
                    v[(i, q)] = s * vip + c * viq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[(i, i)].partial_cmp(&w[(j, j)]).unwrap());
    let evals: Vec<f64> = order.iter().map(|&i| w[(i, i)]).collect();
    let evecs = v.select_cols(&order);
    (evals, evecs)
}
