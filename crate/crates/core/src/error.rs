use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScdmError {
    #[error("dimension mismatch in {op}: {details}")]
    DimensionMismatch { op: &'static str, details: String },

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("matrix not positive definite: leading minor {index} has pivot {value:.3e}")]
    NotPositiveDefinite { index: usize, value: f64 },

    #[error(
        "columns not orthonormal: |G[{row},{col}] - I[{row},{col}]| = {deviation:.3e} \
         exceeds {tolerance:.1e}"
    )]
    NotOrthonormal {
        row: usize,
        col: usize,
        deviation: f64,
        tolerance: f64,
    },

    #[error(
        "selected rows are rank deficient: |R[{index},{index}]| = {value:.3e} \
         below {threshold:.3e}"
    )]
    RankDeficient {
        index: usize,
        value: f64,
        threshold: f64,
    },

    #[error(
        "selected rows are ill-conditioned: condition estimate {kappa:.3e} \
         exceeds {limit:.1e}"
    )]
    IllConditioned { kappa: f64, limit: f64 },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("density is identically zero; nothing to sample")]
    ZeroDensity,

    #[error(
        "sample set has {unique} distinct grid points but {needed} are needed; \
         lower gamma or delta to draw more samples"
    )]
    NotEnoughSamples { unique: usize, needed: usize },

    #[error(
        "candidate column union has {got} points but {needed} are needed; \
         epsilon truncates too aggressively"
    )]
    NotEnoughCandidates { got: usize, needed: usize },

    #[error(
        "orbital group of size {rows} spans only {cols} support columns; \
         epsilon truncates too aggressively"
    )]
    GroupTooNarrow { rows: usize, cols: usize },

    #[error(
        "placed only {placed} of {requested} centers at min separation {min_separation}; \
         enlarge the grid or reduce the separation"
    )]
    LayoutInfeasible {
        requested: usize,
        placed: usize,
        min_separation: f64,
    },

    #[error(
        "bump overlap matrix is near singular (condition estimate {kappa:.3e}); \
         increase center separation or decay"
    )]
    GramIllConditioned { kappa: f64 },

    #[error("grids do not match: {details}")]
    GridMismatch { details: String },
}

pub type Result<T> = std::result::Result<T, ScdmError>;
