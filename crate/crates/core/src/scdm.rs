//! Reference SCDM: one full column-pivoted QR of the transposed orbital
//! matrix picks the grid points, a small QR against those points builds
//! the localized orthonormal basis.

use crate::error::{Result, ScdmError};
use crate::linalg::{condition_estimate, gemm, householder_qr, qrcp, Matrix};
use crate::orbitals::OrbitalSet;
use crate::timing::{stage, StageTimings};

/// Relative diagonal threshold below which the pivoted factorization is
/// treated as rank deficient.
pub const RANK_DEFICIENCY_RTOL: f64 = 1e-10;

/// Selected-row blocks must satisfy kappa below this to be invertible
/// enough for basis formation.
pub const CONDITION_LIMIT: f64 = 1e8;

/// Which pipeline produced a selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMethod {
    Full,
    Randomized,
    TwoStage,
}

impl SelectionMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            SelectionMethod::Full => "full-scdm",
            SelectionMethod::Randomized => "randomized",
            SelectionMethod::TwoStage => "two-stage",
        }
    }
}

impl std::fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered grid-point indices chosen by a selection pass.
///
/// Order is pivot order, which matters: it fixes the basis gauge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSelection {
    indices: Vec<usize>,
    method: SelectionMethod,
}

impl ColumnSelection {
    pub fn new(indices: Vec<usize>, method: SelectionMethod, n_points: usize) -> Result<Self> {
        let mut seen = std::collections::HashSet::with_capacity(indices.len());
        for &i in &indices {
            if i >= n_points {
                return Err(ScdmError::InvalidParam {
                    name: "selection",
                    reason: format!("index {i} out of range for {n_points} grid points"),
                });
            }
            if !seen.insert(i) {
                return Err(ScdmError::InvalidParam {
                    name: "selection",
                    reason: format!("index {i} selected twice"),
                });
            }
        }
        Ok(ColumnSelection { indices, method })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn method(&self) -> SelectionMethod {
        self.method
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Same indices under a different method tag; selection order kept.
    pub fn retagged(&self, method: SelectionMethod) -> ColumnSelection {
        ColumnSelection {
            indices: self.indices.clone(),
            method,
        }
    }
}

/// Localized orthonormal basis Phi = Psi * gauge for the span of the
/// input orbitals.
#[derive(Debug, Clone)]
pub struct LocalizedBasis {
    phi: Matrix,
    selection: ColumnSelection,
    gauge: Matrix,
}

impl LocalizedBasis {
    pub(crate) fn from_parts(phi: Matrix, selection: ColumnSelection, gauge: Matrix) -> Self {
        LocalizedBasis {
            phi,
            selection,
            gauge,
        }
    }

    pub fn phi(&self) -> &Matrix {
        &self.phi
    }

    pub fn selection(&self) -> &ColumnSelection {
        &self.selection
    }

    /// Orthogonal n_e x n_e transform with phi = psi * gauge.
    pub fn gauge(&self) -> &Matrix {
        &self.gauge
    }

    pub fn n_orbitals(&self) -> usize {
        self.phi.cols()
    }

    pub fn into_parts(self) -> (Matrix, ColumnSelection, Matrix) {
        (self.phi, self.selection, self.gauge)
    }
}

/// First n_e pivots of the column-pivoted QR of Psi^T, in pivot order.
pub fn select_columns_full(orbitals: &OrbitalSet) -> Result<ColumnSelection> {
    select_columns_full_timed(orbitals, &mut StageTimings::new())
}

pub fn select_columns_full_timed(
    orbitals: &OrbitalSet,
    timings: &mut StageTimings,
) -> Result<ColumnSelection> {
    let ne = orbitals.n_orbitals();
    let fac = timings.time(stage::FULL_QRCP, || qrcp(orbitals.psi().transpose()));
    let diag = fac.r_diag();
    let dmax = diag[0].abs();
    let dmin = diag[ne - 1].abs();
    if dmin < RANK_DEFICIENCY_RTOL * dmax {
        return Err(ScdmError::RankDeficient {
            index: ne - 1,
            value: dmin,
            threshold: RANK_DEFICIENCY_RTOL * dmax,
        });
    }
    let indices = fac.pivots().map()[..ne].to_vec();
    ColumnSelection::new(indices, SelectionMethod::Full, orbitals.n_points())
}

/// Orthonormal basis pinned to the selected grid points.
///
/// QR-factors the selected-row block transposed, with the
/// positive-diagonal convention making the result unique; the basis is
/// then Phi = Psi * Q. Independent of the input gauge up to this
/// convention.
pub fn orthobasis_from_columns(
    orbitals: &OrbitalSet,
    sel: &ColumnSelection,
) -> Result<LocalizedBasis> {
    orthobasis_from_columns_timed(orbitals, sel, &mut StageTimings::new())
}

pub fn orthobasis_from_columns_timed(
    orbitals: &OrbitalSet,
    sel: &ColumnSelection,
    timings: &mut StageTimings,
) -> Result<LocalizedBasis> {
    let (phi, gauge) = orthobasis_on_matrix(orbitals.psi(), sel, timings)?;
    Ok(LocalizedBasis::from_parts(phi, sel.clone(), gauge))
}

/// Matrix-level core of basis formation: Q from the positive-diagonal
/// QR of the selected-row block transposed, then the (timed) tall GEMM.
/// The refinement stage runs this against Phi-tilde instead of Psi.
pub(crate) fn orthobasis_on_matrix(
    m: &Matrix,
    sel: &ColumnSelection,
    timings: &mut StageTimings,
) -> Result<(Matrix, Matrix)> {
    let ne = m.cols();
    if sel.len() != ne {
        return Err(ScdmError::DimensionMismatch {
            op: "orthobasis_from_columns",
            details: format!("{} selected indices for {} orbitals", sel.len(), ne),
        });
    }
    let q = timings.time(stage::ORTHOGONALIZE, || -> Result<Matrix> {
        let block = m.select_rows(sel.indices());
        let kappa = condition_estimate(&block);
        if !(kappa < CONDITION_LIMIT) {
            return Err(ScdmError::IllConditioned {
                kappa,
                limit: CONDITION_LIMIT,
            });
        }
        Ok(householder_qr(block.transpose()).q_thin())
    })?;
    let phi = timings.time(stage::GEMM, || gemm(m, &q))?;
    Ok((phi, q))
}

/// Selection and basis formation against a row subset of the grid.
///
/// `rows` are distinct global grid indices; QRCP runs on the transposed
/// restricted block and pivots are mapped back through `rows`. With
/// `rows` = the whole grid this is exactly the full pipeline, bit for
/// bit: the sampled pipelines inherit the reference semantics.
pub(crate) fn scdm_on_rows(
    orbitals: &OrbitalSet,
    rows: &[usize],
    method: SelectionMethod,
    qrcp_stage: &'static str,
    timings: &mut StageTimings,
) -> Result<LocalizedBasis> {
    let sel = select_on_rows(orbitals.psi(), rows, method, qrcp_stage, timings)?;
    orthobasis_from_columns_timed(orbitals, &sel, timings)
}

/// Matrix-level core of restricted selection: QRCP of the transposed
/// row block, rank check on the leading n_e diagonal, pivots mapped
/// back to global indices through `rows`.
pub(crate) fn select_on_rows(
    m: &Matrix,
    rows: &[usize],
    method: SelectionMethod,
    qrcp_stage: &'static str,
    timings: &mut StageTimings,
) -> Result<ColumnSelection> {
    let ne = m.cols();
    if rows.len() < ne {
        return Err(ScdmError::NotEnoughSamples {
            unique: rows.len(),
            needed: ne,
        });
    }
    let fac = timings.time(qrcp_stage, || qrcp(m.select_rows(rows).transpose()));
    let diag = fac.r_diag();
    let dmax = diag[0].abs();
    let dmin = diag[ne - 1].abs();
    if dmin < RANK_DEFICIENCY_RTOL * dmax {
        return Err(ScdmError::RankDeficient {
            index: ne - 1,
            value: dmin,
            threshold: RANK_DEFICIENCY_RTOL * dmax,
        });
    }
    let indices: Vec<usize> = fac.pivots().map()[..ne].iter().map(|&p| rows[p]).collect();
    ColumnSelection::new(indices, method, m.rows())
}

/// Full-pivoting SCDM: selection then basis formation.
pub fn scdm_full(orbitals: &OrbitalSet) -> Result<LocalizedBasis> {
    scdm_full_timed(orbitals).map(|(basis, _)| basis)
}

/// Same, reporting per-stage wall time.
pub fn scdm_full_timed(orbitals: &OrbitalSet) -> Result<(LocalizedBasis, StageTimings)> {
    let mut timings = StageTimings::new();
    let sel = select_columns_full_timed(orbitals, &mut timings)?;
    let basis = orthobasis_from_columns_timed(orbitals, &sel, &mut timings)?;
    Ok((basis, timings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cholesky, gemm_tn};
    use crate::orbitals::{random_unitary, Grid, OrbitalSet};

    fn canonical_set(n: usize, ne: usize) -> OrbitalSet {
        let mut psi = Matrix::zeros(n, ne);
        for i in 0..ne {
            psi[(i, i)] = 1.0;
        }
        OrbitalSet::new(Grid::unit([n, 1, 1]), psi).unwrap()
    }

    fn generic_set(n: usize, ne: usize, seed: u64) -> OrbitalSet {
        let q = random_unitary(n, seed);
        let psi = q.select_cols(&(0..ne).collect::<Vec<_>>());
        OrbitalSet::new(Grid::unit([n, 1, 1]), psi).unwrap()
    }

    #[test]
    fn canonical_basis_selects_its_own_rows() {
        let set = canonical_set(8, 3);
        let sel = select_columns_full(&set).unwrap();
        assert_eq!(sel.indices(), &[0, 1, 2]);
        let basis = orthobasis_from_columns(&set, &sel).unwrap();
        assert!(basis.phi().max_abs_diff(set.psi()) < 1e-14);
        assert!(basis.gauge().max_abs_diff(&Matrix::identity(3)) < 1e-14);
    }

    #[test]
    fn single_orbital_selects_largest_entry_with_positive_sign() {
        let mut psi = Matrix::zeros(5, 1);
        let vals = [0.1, -0.8, 0.3, -0.5, 0.06];
        let norm: f64 = vals.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (i, v) in vals.iter().enumerate() {
            psi[(i, 0)] = v / norm;
        }
        let set = OrbitalSet::new(Grid::unit([5, 1, 1]), psi).unwrap();
        let basis = scdm_full(&set).unwrap();
        assert_eq!(basis.selection().indices(), &[1]);
        // Sign convention points the basis positive at its pivot.
        assert!(basis.phi()[(1, 0)] > 0.0);
        assert!((basis.phi()[(1, 0)] - 0.8 / norm).abs() < 1e-14);
    }

    #[test]
    fn composition_is_bit_identical_to_manual_steps() {
        let set = generic_set(24, 5, 3);
        let sel = select_columns_full(&set).unwrap();
        let manual = orthobasis_from_columns(&set, &sel).unwrap();
        let composed = scdm_full(&set).unwrap();
        assert_eq!(composed.selection().indices(), manual.selection().indices());
        assert!(composed.phi().max_abs_diff(manual.phi()) == 0.0);
        assert!(composed.gauge().max_abs_diff(manual.gauge()) == 0.0);
    }

    #[test]
    fn output_is_orthonormal_and_spans_input() {
        let set = generic_set(40, 7, 11);
        let basis = scdm_full(&set).unwrap();
        let gram = gemm_tn(basis.phi(), basis.phi()).unwrap();
        assert!(gram.max_abs_diff_from_identity().0 < 1e-12);
        // Phi - Psi (Psi^T Phi) == 0 in exact arithmetic.
        let coeff = gemm_tn(set.psi(), basis.phi()).unwrap();
        let proj = gemm(set.psi(), &coeff).unwrap();
        assert!(proj.max_abs_diff(basis.phi()) < 1e-12);
    }

    #[test]
    fn gauge_invariance_on_generic_instance() {
        let set = generic_set(30, 6, 21);
        let u = random_unitary(6, 99);
        let rotated =
            OrbitalSet::new(set.grid().clone(), gemm(set.psi(), &u).unwrap()).unwrap();
        let a = scdm_full(&set).unwrap();
        let b = scdm_full(&rotated).unwrap();
        assert_eq!(a.selection().indices(), b.selection().indices());
        assert!(a.phi().max_abs_diff(b.phi()) < 1e-10);
    }

    #[test]
    fn matches_cholesky_path_oracle() {
        // Independent construction of the same basis: S = B B^T, upper
        // Cholesky R, Q = B^T R^{-1}. Positive diagonals make both
        // routes unique, so they must agree.
        let set = generic_set(26, 5, 5);
        let sel = select_columns_full(&set).unwrap();
        let basis = orthobasis_from_columns(&set, &sel).unwrap();

        let b = set.psi().select_rows(sel.indices());
        let s = gemm(&b, &b.transpose()).unwrap();
        let r = cholesky(&s).unwrap();
        // Solve X R = B^T column by column (R upper triangular).
        let bt = b.transpose();
        let ne = bt.cols();
        let mut x = Matrix::zeros(bt.rows(), ne);
        for j in 0..ne {
            let mut acc = bt.col(j).to_vec();
            for i in 0..j {
                let rij = r[(i, j)];
                for (a, xi) in acc.iter_mut().zip(x.col(i)) {
                    *a -= rij * xi;
                }
            }
            let rjj = r[(j, j)];
            for (dst, a) in x.col_mut(j).iter_mut().zip(&acc) {
                *dst = a / rjj;
            }
        }
        let phi_chol = gemm(set.psi(), &x).unwrap();
        assert!(phi_chol.max_abs_diff(basis.phi()) < 1e-10);
    }

    #[test]
    fn ill_conditioned_selection_is_rejected() {
        // Two grid points carrying identical orbital rows: psi_1 spreads
        // over points 0 and 1 equally, so selecting both is singular.
        let h = 0.5f64.sqrt();
        let psi = Matrix::from_rows(&[&[h, 0.0], &[h, 0.0], &[0.0, 1.0], &[0.0, 0.0]]);
        let set = OrbitalSet::new(Grid::unit([4, 1, 1]), psi).unwrap();
        let sel = ColumnSelection::new(vec![0, 1], SelectionMethod::Full, 4).unwrap();
        match orthobasis_from_columns(&set, &sel) {
            Err(ScdmError::IllConditioned { kappa, .. }) => assert!(kappa > 1e8),
            other => panic!("expected IllConditioned, got {other:?}"),
        }
    }

    #[test]
    fn selection_rejects_duplicates_and_out_of_range() {
        assert!(ColumnSelection::new(vec![0, 0], SelectionMethod::Full, 5).is_err());
        assert!(ColumnSelection::new(vec![0, 5], SelectionMethod::Full, 5).is_err());
        assert!(ColumnSelection::new(vec![4, 0], SelectionMethod::Full, 5).is_ok());
    }

    #[test]
    fn timings_cover_expected_stages() {
        let set = generic_set(20, 4, 8);
        let (_, timings) = scdm_full_timed(&set).unwrap();
        assert!(timings.get(stage::FULL_QRCP).is_some());
        assert!(timings.get(stage::ORTHOGONALIZE).is_some());
        assert!(timings.get(stage::GEMM).is_some());
    }
}
