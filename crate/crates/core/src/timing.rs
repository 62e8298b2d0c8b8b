//! Per-stage wall-clock accounting for the localization pipelines.
//!
//! Stages accumulate under stable string keys in first-recorded order so
//! reports read in pipeline order. The final basis product Phi = Psi * Q
//! is booked under [`stage::GEMM`] and reported separately from the
//! transform construction: it is the unavoidable cost floor shared by
//! every method, so speedup comparisons exclude it.

use std::time::{Duration, Instant};

/// Canonical stage keys. Methods record the subset they execute.
pub mod stage {
    /// Density-weighted candidate sampling.
    pub const SAMPLING: &str = "sampling";
    /// QRCP restricted to the sampled grid points.
    pub const RESTRICTED_QRCP: &str = "restricted_qrcp";
    /// QRCP of the full transposed orbital matrix.
    pub const FULL_QRCP: &str = "full_qrcp";
    /// Small QR orthogonalizing the selected rows.
    pub const ORTHOGONALIZE: &str = "orthogonalize";
    /// Support-set extraction from the approximate basis.
    pub const SUPPORTS: &str = "supports";
    /// Overlap-graph and group construction.
    pub const OVERLAP_GRAPH: &str = "overlap_graph";
    /// Per-group local QRCPs.
    pub const LOCAL_QRCP: &str = "local_qrcp";
    /// Final QRCP over the candidate union.
    pub const FINAL_QRCP: &str = "final_qrcp";
    /// Basis product Phi = Psi * Q (the T_mult floor).
    pub const GEMM: &str = "gemm";
}

#[derive(Debug, Clone, Default)]
pub struct StageTimings {
    entries: Vec<(&'static str, Duration)>,
}

impl StageTimings {
    pub fn new() -> Self {
        StageTimings::default()
    }

    /// Adds to the stage's accumulated time, keeping insertion order.
    pub fn record(&mut self, key: &'static str, elapsed: Duration) {
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some((_, d)) => *d += elapsed,
            None => self.entries.push((key, elapsed)),
        }
    }

    /// Times a closure into `key` and passes its value through.
    pub fn time<T>(&mut self, key: &'static str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record(key, start.elapsed());
        out
    }

    pub fn get(&self, key: &str) -> Option<Duration> {
        self.entries.iter().find(|(k, _)| *k == key).map(|(_, d)| *d)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, Duration)> + '_ {
        self.entries.iter().copied()
    }

    /// Sum of every stage except [`stage::GEMM`]: the cost of building
    /// the orthogonal transform.
    pub fn transform_total(&self) -> Duration {
        self.entries
            .iter()
            .filter(|(k, _)| *k != stage::GEMM)
            .map(|(_, d)| *d)
            .sum()
    }

    /// Sum of all stages including the basis product.
    pub fn total(&self) -> Duration {
        self.entries.iter().map(|(_, d)| *d).sum()
    }

    /// Folds another run's stages into this one (used when composing
    /// pipelines).
    pub fn absorb(&mut self, other: &StageTimings) {
        for (k, d) in other.iter() {
            self.record(k, d);
        }
    }
}
