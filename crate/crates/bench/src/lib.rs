//! Shared instance builders for the benchmark targets.

use scdm_core::{synth_generate, OrbitalSet, SynthSpec};

/// Deterministic cube instance with default layout and a Haar gauge.
pub fn instance(n_e: usize, side: usize, seed: u64) -> OrbitalSet {
    let spec = SynthSpec::new(n_e, [side; 3], seed);
    let (set, _) = synth_generate(&spec).expect("bench instance is feasible");
    set
}
