//! Quality measurement for localized bases: how sparse each orbital is
//! after relative truncation, how spatially spread it is, how well
//! conditioned the selected-point block is, and how two bases line up
//! orbital by orbital.

use crate::error::{Result, ScdmError};
use crate::linalg::{compensated_sum, condition_estimate, gemm, gemm_tn, Matrix};
use crate::orbitals::{Grid, OrbitalSet};
use crate::scdm::ColumnSelection;
use rayon::prelude::*;

/// Default relative truncation threshold for sparsity reporting.
pub const TAU_DEFAULT: f64 = 2.5e-2;

const HISTOGRAM_BINS: usize = 20;

/// Per-orbital nonzero fractions after relative truncation.
#[derive(Debug, Clone)]
pub struct LocalityReport {
    fractions: Vec<f64>,
    histogram: Vec<(f64, f64, usize)>,
    median: f64,
    max: f64,
    tau: f64,
}

impl LocalityReport {
    /// Fraction of grid entries above tau times the orbital's peak,
    /// one value per orbital, each in (0, 1].
    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    /// 20 uniform bins over [0, max fraction]: (lo, hi, count); counts
    /// sum to the orbital count.
    pub fn histogram(&self) -> &[(f64, f64, usize)] {
        &self.histogram
    }

    pub fn median(&self) -> f64 {
        self.median
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// Fraction of entries with |phi_i(j)| > tau * max_k |phi_i(k)|, per
/// orbital. The comparison is strict, so exact zeros never count.
pub fn truncated_sparsity(phi: &Matrix, tau: f64) -> Result<LocalityReport> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(ScdmError::InvalidParam {
            name: "tau",
            reason: format!("must be in (0, 1), got {tau}"),
        });
    }
    let n = phi.rows();
    let fractions: Vec<f64> = (0..phi.cols())
        .into_par_iter()
        .map(|i| {
            let col = phi.col(i);
            let peak = col.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
            let cut = tau * peak;
            let kept = col.iter().filter(|x| x.abs() > cut).count();
            kept as f64 / n as f64
        })
        .collect();

    let max = fractions.iter().fold(0.0f64, |m, &f| m.max(f));
    let width = max / HISTOGRAM_BINS as f64;
    let mut counts = [0usize; HISTOGRAM_BINS];
    for &f in &fractions {
        let idx = if width > 0.0 {
            ((f / width) as usize).min(HISTOGRAM_BINS - 1)
        } else {
            HISTOGRAM_BINS - 1
        };
        counts[idx] += 1;
    }
    let histogram = (0..HISTOGRAM_BINS)
        .map(|b| (b as f64 * width, (b + 1) as f64 * width, counts[b]))
        .collect();

    let mut sorted = fractions.clone();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let median = median_of_sorted(&sorted);

    Ok(LocalityReport {
        fractions,
        histogram,
        median,
        max,
        tau,
    })
}

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Per-orbital spatial centers and variances.
#[derive(Debug, Clone)]
pub struct SpreadReport {
    centers: Vec<[f64; 3]>,
    spreads: Vec<f64>,
    total: f64,
}

impl SpreadReport {
    /// <r>_i under the orbital's |phi|^2 mass.
    pub fn centers(&self) -> &[[f64; 3]] {
        &self.centers
    }

    /// <|r|^2>_i - |<r>_i|^2, one per orbital, each nonnegative.
    pub fn spreads(&self) -> &[f64] {
        &self.spreads
    }

    /// Sum of the per-orbital spreads.
    pub fn total(&self) -> f64 {
        self.total
    }
}

/// Open-boundary variance of each orbital, using |phi_i|^2 as its
/// probability mass (grid weights are already absorbed, and columns are
/// unit vectors). Evaluated in two passes - center first, then squared
/// distance from it - so each spread is a sum of nonnegative terms.
pub fn spread(phi: &Matrix, grid: &Grid) -> Result<SpreadReport> {
    if phi.rows() != grid.n_points() {
        return Err(ScdmError::GridMismatch {
            details: format!(
                "basis has {} rows but grid has {} points",
                phi.rows(),
                grid.n_points()
            ),
        });
    }
    let per_orbital: Vec<([f64; 3], f64)> = (0..phi.cols())
        .into_par_iter()
        .map(|i| {
            let col = phi.col(i);
            let mut center = [0.0f64; 3];
            for (j, &x) in col.iter().enumerate() {
                let w = x * x;
                let r = grid.point_coords(j);
                for a in 0..3 {
                    center[a] += w * r[a];
                }
            }
            let mut var = 0.0;
            for (j, &x) in col.iter().enumerate() {
                let w = x * x;
                let r = grid.point_coords(j);
                let d2: f64 = (0..3).map(|a| (r[a] - center[a]) * (r[a] - center[a])).sum();
                var += w * d2;
            }
            (center, var)
        })
        .collect();
    let centers: Vec<[f64; 3]> = per_orbital.iter().map(|(c, _)| *c).collect();
    let spreads: Vec<f64> = per_orbital.iter().map(|(_, v)| *v).collect();
    let total = compensated_sum(spreads.iter().copied());
    Ok(SpreadReport {
        centers,
        spreads,
        total,
    })
}

/// Condition number of the selected-point block Psi_{C,:}.
pub fn selection_condition(orbitals: &OrbitalSet, sel: &ColumnSelection) -> f64 {
    rows_condition(orbitals, sel.indices())
}

/// Same measurement on raw row indices. [`ColumnSelection`] cannot hold
/// duplicates, so the singular (repeated-row) case is only reachable
/// here; it reports the +infinity sentinel.
pub fn rows_condition(orbitals: &OrbitalSet, rows: &[usize]) -> f64 {
    condition_estimate(&orbitals.psi().select_rows(rows))
}

/// Orbital-by-orbital alignment of two bases.
#[derive(Debug, Clone)]
pub struct OrbitalMatch {
    permutation: Vec<usize>,
    correlations: Vec<f64>,
}

impl OrbitalMatch {
    /// permutation[i] = index in b matched to orbital i of a.
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// |<a_i, b_permutation[i]>| for each pair.
    pub fn correlations(&self) -> &[f64] {
        &self.correlations
    }
}

/// Pairs the orbitals of `a` with those of `b`, maximizing the total
/// absolute correlation over all one-to-one assignments.
pub fn match_orbitals(a: &Matrix, b: &Matrix) -> Result<OrbitalMatch> {
    if a.rows() != b.rows() {
        return Err(ScdmError::GridMismatch {
            details: format!("bases live on {} and {} points", a.rows(), b.rows()),
        });
    }
    if a.cols() != b.cols() {
        return Err(ScdmError::DimensionMismatch {
            op: "match_orbitals",
            details: format!("{} vs {} orbitals", a.cols(), b.cols()),
        });
    }
    let mut w = gemm_tn(a, b)?;
    for x in w.data_mut() {
        *x = x.abs();
    }
    let permutation = hungarian_max(&w);
    let correlations = permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| w[(i, j)])
        .collect();
    Ok(OrbitalMatch {
        permutation,
        correlations,
    })
}

/// Maximum-weight perfect matching on a square weight matrix via the
/// Hungarian algorithm with row/column potentials; O(n^3). Returns the
/// column assigned to each row.
fn hungarian_max(w: &Matrix) -> Vec<usize> {
    let n = w.rows();
    let wmax = w.data().iter().fold(0.0f64, |m, &x| m.max(x));
    let cost = |i: usize, j: usize| wmax - w[(i, j)];

    // 1-based with column 0 as the virtual start of each augmenting
    // search; p[j] = row currently matched to column j.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        while j0 != 0 {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Relative Frobenius distance of phi from the subspace spanned by the
/// orbitals: ||phi - psi (psi^T phi)||_F / ||phi||_F.
pub fn span_residual(orbitals: &OrbitalSet, phi: &Matrix) -> Result<f64> {
    let coeff = gemm_tn(orbitals.psi(), phi)?;
    let proj = gemm(orbitals.psi(), &coeff)?;
    let mut resid = phi.clone();
    for (x, y) in resid.data_mut().iter_mut().zip(proj.data()) {
        *x -= y;
    }
    Ok(resid.frobenius_norm() / phi.frobenius_norm())
}
