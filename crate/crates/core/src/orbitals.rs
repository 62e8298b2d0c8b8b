//! Grids, orbital sets, and electron density.
//!
//! Orbitals live on a rectangular 3-D grid, flattened x-fastest: point
//! (ix, iy, iz) has linear index ix + nx * (iy + ny * iz). Quadrature
//! weights are absorbed into the orbital values once, up front, so that
//! every downstream inner product is a plain dot product and column
//! selection never needs to consult the grid again.

use crate::error::{Result, ScdmError};
use crate::linalg::{compensated_sum, gemm_tn, householder_qr, Matrix};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

/// Columns of an orbital set must satisfy Psi^T Psi = I to this
/// tolerance (max entrywise deviation).
pub const ORTHONORMALITY_TOL: f64 = 1e-10;

/// Raw orbitals handed to [`weight_absorb`] must be orthonormal under the
/// weighted inner product to this looser tolerance.
pub const WEIGHTED_INPUT_TOL: f64 = 1e-8;

/// Rows per Rayon task in density accumulation.
const DENSITY_ROW_CHUNK: usize = 32_768;

/// Quadrature weights attached to a grid.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightMode {
    /// Same weight at every point (regular grids: the cell volume).
    Uniform(f64),
    /// One weight per grid point, in linear index order.
    PerPoint(Vec<f64>),
}

/// Rectangular grid with spacing and quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dims: [usize; 3],
    spacing: [f64; 3],
    weights: WeightMode,
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], weights: WeightMode) -> Result<Grid> {
        if dims.iter().any(|&d| d == 0) {
            return Err(ScdmError::InvalidParam {
                name: "dims",
                reason: format!("all dimensions must be positive, got {dims:?}"),
            });
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(ScdmError::InvalidParam {
                name: "spacing",
                reason: format!("spacings must be positive and finite, got {spacing:?}"),
            });
        }
        let n = dims[0] * dims[1] * dims[2];
        match &weights {
            WeightMode::Uniform(w) => {
                if !(w.is_finite() && *w > 0.0) {
                    return Err(ScdmError::InvalidParam {
                        name: "weights",
                        reason: format!("uniform weight must be positive and finite, got {w}"),
                    });
                }
            }
            WeightMode::PerPoint(v) => {
                if v.len() != n {
                    return Err(ScdmError::InvalidParam {
                        name: "weights",
                        reason: format!("{} weights for {} grid points", v.len(), n),
                    });
                }
                if let Some(j) = v.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(ScdmError::InvalidParam {
                        name: "weights",
                        reason: format!("weight {} at point {j} must be positive and finite", v[j]),
                    });
                }
            }
        }
        Ok(Grid {
            dims,
            spacing,
            weights,
        })
    }

    /// Unit-spaced grid with unit weights; the common case in tests and
    /// file round trips.
    pub fn unit(dims: [usize; 3]) -> Grid {
        Grid::new(dims, [1.0; 3], WeightMode::Uniform(1.0)).expect("unit grid is always valid")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn weights(&self) -> &WeightMode {
        &self.weights
    }

    pub fn n_points(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn linear_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        debug_assert!(ix < self.dims[0] && iy < self.dims[1] && iz < self.dims[2]);
        ix + self.dims[0] * (iy + self.dims[1] * iz)
    }

    /// Inverse of [`Self::linear_index`].
    pub fn grid_coords(&self, j: usize) -> [usize; 3] {
        let ix = j % self.dims[0];
        let rest = j / self.dims[0];
        [ix, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Physical coordinates of point j.
    pub fn point_coords(&self, j: usize) -> [f64; 3] {
        let [ix, iy, iz] = self.grid_coords(j);
        [
            ix as f64 * self.spacing[0],
            iy as f64 * self.spacing[1],
            iz as f64 * self.spacing[2],
        ]
    }

    pub fn weight(&self, j: usize) -> f64 {
        match &self.weights {
            WeightMode::Uniform(w) => *w,
            WeightMode::PerPoint(v) => v[j],
        }
    }

    pub fn same_layout(&self, other: &Grid) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }
}

/// Weight-absorbed orthonormal orbitals on a grid.
///
/// `psi` is n_points x n_orbitals with Psi^T Psi = I to
/// [`ORTHONORMALITY_TOL`]; the quadrature weights are already inside the
/// values.
#[derive(Debug, Clone)]
pub struct OrbitalSet {
    grid: Grid,
    psi: Matrix,
}

impl OrbitalSet {
    /// Validates shape, finiteness, and orthonormality.
    pub fn new(grid: Grid, psi: Matrix) -> Result<OrbitalSet> {
        if psi.rows() != grid.n_points() {
            return Err(ScdmError::DimensionMismatch {
                op: "OrbitalSet::new",
                details: format!(
                    "{} orbital rows for a grid of {} points",
                    psi.rows(),
                    grid.n_points()
                ),
            });
        }
        if psi.cols() == 0 || psi.cols() > psi.rows() {
            return Err(ScdmError::InvalidParam {
                name: "n_orbitals",
                reason: format!(
                    "need 1..={} orbitals on this grid, got {}",
                    psi.rows(),
                    psi.cols()
                ),
            });
        }
        psi.validate_finite()?;
        let gram = gemm_tn(&psi, &psi)?;
        let (dev, row, col) = gram.max_abs_diff_from_identity();
        if dev > ORTHONORMALITY_TOL {
            return Err(ScdmError::NotOrthonormal {
                row,
                col,
                deviation: dev,
                tolerance: ORTHONORMALITY_TOL,
            });
        }
        Ok(OrbitalSet { grid, psi })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn psi(&self) -> &Matrix {
        &self.psi
    }

    pub fn n_points(&self) -> usize {
        self.psi.rows()
    }

    pub fn n_orbitals(&self) -> usize {
        self.psi.cols()
    }

    pub fn into_parts(self) -> (Grid, Matrix) {
        (self.grid, self.psi)
    }
}

/// Scales raw orbital values by sqrt(w_j) so plain dot products realize
/// the weighted inner product, then validates the result.
///
/// The input must be orthonormal under the weighted inner product to
/// [`WEIGHTED_INPUT_TOL`]; the constructed set is still held to the
/// tighter [`ORTHONORMALITY_TOL`], so inputs between the two tolerances
/// are rejected rather than silently degraded.
pub fn weight_absorb(grid: Grid, mut raw: Matrix) -> Result<OrbitalSet> {
    if raw.rows() != grid.n_points() {
        return Err(ScdmError::DimensionMismatch {
            op: "weight_absorb",
            details: format!(
                "{} orbital rows for a grid of {} points",
                raw.rows(),
                grid.n_points()
            ),
        });
    }
    raw.validate_finite()?;

    match grid.weights() {
        WeightMode::Uniform(w) => {
            let s = w.sqrt();
            for v in raw.data_mut() {
                *v *= s;
            }
        }
        WeightMode::PerPoint(ws) => {
            let ne = raw.cols();
            let roots: Vec<f64> = ws.iter().map(|w| w.sqrt()).collect();
            for j in 0..ne {
                for (v, r) in raw.col_mut(j).iter_mut().zip(&roots) {
                    *v *= r;
                }
            }
        }
    }

    // The Gram of the absorbed matrix equals the weighted Gram of the
    // input to rounding, so one product serves the loose input check.
    let gram = gemm_tn(&raw, &raw)?;
    let (dev, row, col) = gram.max_abs_diff_from_identity();
    if dev > WEIGHTED_INPUT_TOL {
        return Err(ScdmError::NotOrthonormal {
            row,
            col,
            deviation: dev,
            tolerance: WEIGHTED_INPUT_TOL,
        });
    }

    OrbitalSet::new(grid, raw)
}

/// Pointwise electron density of an orbital set.
#[derive(Debug, Clone)]
pub struct ElectronDensity {
    values: Vec<f64>,
    total: f64,
}

impl ElectronDensity {
    /// Wraps externally supplied density values (loaded from a file or
    /// synthesized for sampling tests). Entries must be finite and
    /// nonnegative; zero entries are fine.
    pub fn from_values(values: Vec<f64>) -> Result<ElectronDensity> {
        if let Some(j) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(ScdmError::InvalidParam {
                name: "density",
                reason: format!("value {} at index {j} is not a finite nonnegative number", values[j]),
            });
        }
        let total = compensated_sum(values.iter().copied());
        Ok(ElectronDensity { values, total })
    }

    /// rho(j) = sum_i psi(j, i)^2.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Compensated sum of the values; equals the orbital count to within
    /// the orthonormality tolerance.
    pub fn total(&self) -> f64 {
        self.total
    }
}

/// Row-wise squared mass of the orbital matrix. Deterministic across
/// thread counts: every row's accumulation order is fixed.
pub fn compute_density(set: &OrbitalSet) -> ElectronDensity {
    let psi = set.psi();
    let n = psi.rows();
    let ne = psi.cols();
    let mut values = vec![0.0f64; n];
    values
        .par_chunks_mut(DENSITY_ROW_CHUNK)
        .enumerate()
        .for_each(|(ci, chunk)| {
            let r0 = ci * DENSITY_ROW_CHUNK;
            for i in 0..ne {
                let col = &psi.col(i)[r0..r0 + chunk.len()];
                for (v, &x) in chunk.iter_mut().zip(col) {
                    *v += x * x;
                }
            }
        });
    let total = compensated_sum(values.iter().copied());
    ElectronDensity { values, total }
}

/// Haar-distributed orthogonal matrix: QR of a seeded Gaussian matrix
/// with the positive-diagonal convention fixing the gauge.
pub fn random_unitary(n: usize, seed: u64) -> Matrix {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n * n)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let g = Matrix::from_col_major(n, n, data).expect("square gaussian");
    householder_qr(g).q_thin()
}
