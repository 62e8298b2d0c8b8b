//! Cholesky factorization of symmetric positive definite matrices.
//!
//! Only small Gram-type matrices (orbital-count square) come through
//! here; the straightforward column-by-column loop is plenty.

use super::Matrix;
use crate::error::{Result, ScdmError};

/// Upper-triangular R with R^T R = s and positive diagonal. Reads only
/// s's upper triangle.
///
/// Fails with the offending pivot if a leading minor is not positive,
/// which for a Gram matrix means the generating vectors were linearly
/// dependent to machine precision.
pub fn cholesky(s: &Matrix) -> Result<Matrix> {
    let n = s.rows();
    if s.cols() != n {
        return Err(ScdmError::DimensionMismatch {
            op: "cholesky",
            details: format!("{}x{} is not square", s.rows(), s.cols()),
        });
    }
    let mut r = Matrix::zeros(n, n);
    for j in 0..n {
        for i in 0..j {
            let mut v = s[(i, j)];
            for k in 0..i {
                v -= r[(k, i)] * r[(k, j)];
            }
            r[(i, j)] = v / r[(i, i)];
        }
        let mut d = s[(j, j)];
        for k in 0..j {
            d -= r[(k, j)] * r[(k, j)];
        }
        if d <= 0.0 {
            return Err(ScdmError::NotPositiveDefinite { index: j, value: d });
        }
        r[(j, j)] = d.sqrt();
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gemm;

    #[test]
    fn hand_checked_2x2() {
        let s = Matrix::from_rows(&[&[4.0, 2.0], &[2.0, 2.0]]);
        let r = cholesky(&s).unwrap();
        let want = Matrix::from_rows(&[&[2.0, 1.0], &[0.0, 1.0]]);
        assert!(r.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn identity_factors_to_identity() {
        let r = cholesky(&Matrix::identity(4)).unwrap();
        assert!(r.max_abs_diff(&Matrix::identity(4)) == 0.0);
    }

    #[test]
    fn reconstructs_random_gram_matrix() {
        // S = M^T M for a generic M is SPD.
        let m = Matrix::from_rows(&[
            &[1.0, 0.3, -0.2],
            &[0.5, 2.0, 0.1],
            &[-0.7, 0.4, 1.5],
            &[0.2, -0.6, 0.9],
        ]);
        let s = gemm(&m.transpose(), &m).unwrap();
        let r = cholesky(&s).unwrap();
        let back = gemm(&r.transpose(), &r).unwrap();
        assert!(back.max_abs_diff(&s) < 1e-12 * s.max_abs());
        for j in 0..3 {
            assert!(r[(j, j)] > 0.0);
            for i in j + 1..3 {
                assert_eq!(r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn rejects_indefinite_matrix() {
        // Eigenvalues 3 and -1; failure surfaces at the second pivot.
        let s = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        match cholesky(&s) {
            Err(ScdmError::NotPositiveDefinite { index, value }) => {
                assert_eq!(index, 1);
                assert!(value < 0.0);
            }
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn rejects_non_square() {
        let s = Matrix::zeros(2, 3);
        assert!(matches!(
            cholesky(&s),
            Err(ScdmError::DimensionMismatch { .. })
        ));
    }
}
