//! Randomized column selection driven by the electron density.
//!
//! Instead of pivoting over every grid point, draw
//! m = ceil((n_e/gamma) * ln(n_e/delta)) points i.i.d. from rho/n_e and
//! pivot only within the sample. Localized orbitals concentrate density
//! on their supports, so a sample of this size hits every orbital's
//! gamma-support with probability at least 1 - delta (eta = 1 case);
//! [`coverage_trial`] measures that failure rate directly.

use crate::error::{Result, ScdmError};
use crate::linalg::{compensated_sum, Matrix};
use crate::orbitals::{ElectronDensity, OrbitalSet};
use crate::scdm::{scdm_on_rows, LocalizedBasis, SelectionMethod};
use crate::timing::{stage, StageTimings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Walker/Vose alias table: O(n) build, O(1) per draw, shareable across
/// threads.
#[derive(Debug, Clone)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasTable {
    /// Builds from nonnegative weights; zero-weight entries are never
    /// drawn.
    pub fn new(weights: &[f64]) -> Result<AliasTable> {
        if let Some(j) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(ScdmError::InvalidParam {
                name: "weights",
                reason: format!("weight {} at index {j} is not a finite nonnegative value", weights[j]),
            });
        }
        let total = compensated_sum(weights.iter().copied());
        if total <= 0.0 {
            return Err(ScdmError::ZeroDensity);
        }
        let n = weights.len();
        let scale = n as f64 / total;
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * scale).collect();
        let mut prob = vec![1.0f64; n];
        let mut alias: Vec<usize> = (0..n).collect();
        let mut small: Vec<usize> = Vec::new();
        let mut large: Vec<usize> = Vec::new();
        for (i, &s) in scaled.iter().enumerate() {
            if s < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            prob[s] = scaled[s];
            alias[s] = l;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // Leftovers on either stack are 1.0 up to rounding; prob stays 1.
        Ok(AliasTable { prob, alias })
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let k = rng.random_range(0..self.prob.len());
        if rng.random::<f64>() < self.prob[k] {
            k
        } else {
            self.alias[k]
        }
    }
}

/// m = ceil((n_e/gamma) * ln(n_e/delta)), natural log.
///
/// Degenerate but intentional: n_e = 1 with delta = 1 gives m = 0; the
/// formula is exposed exactly and downstream stages report when the
/// sample is too small rather than silently padding it.
pub fn sample_count(n_e: usize, gamma: f64, delta: f64) -> usize {
    ((n_e as f64 / gamma) * (n_e as f64 / delta).ln()).ceil() as usize
}

/// A multiset of density-weighted grid draws.
#[derive(Debug, Clone)]
pub struct SampleSet {
    indices: Vec<usize>,
    m_requested: usize,
    gamma: f64,
    delta: f64,
    seed: u64,
}

impl SampleSet {
    /// Draws in draw order, duplicates included.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn m_requested(&self) -> usize {
        self.m_requested
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Distinct sampled indices, ascending.
    pub fn unique_sorted(&self) -> Vec<usize> {
        let mut u = self.indices.clone();
        u.sort_unstable();
        u.dedup();
        u
    }
}

fn validate_rates(gamma: f64, delta: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(ScdmError::InvalidParam {
            name: "gamma",
            reason: format!("must be in (0, 1), got {gamma}"),
        });
    }
    // delta = 1 is allowed: it is the documented default giving the
    // (n_e/gamma) ln(n_e) budget.
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(ScdmError::InvalidParam {
            name: "delta",
            reason: format!("must be in (0, 1], got {delta}"),
        });
    }
    Ok(())
}

fn draw_indices(table: &AliasTable, m: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m).map(|_| table.sample(&mut rng)).collect()
}

/// Draws the formula-sized sample from Pr({j}) = rho(j) / n_e.
pub fn sample_candidates(
    rho: &ElectronDensity,
    n_e: usize,
    gamma: f64,
    delta: f64,
    seed: u64,
) -> Result<SampleSet> {
    validate_rates(gamma, delta)?;
    if n_e == 0 {
        return Err(ScdmError::InvalidParam {
            name: "n_e",
            reason: "must be positive".into(),
        });
    }
    let table = AliasTable::new(rho.values())?;
    let m = sample_count(n_e, gamma, delta);
    Ok(SampleSet {
        indices: draw_indices(&table, m, seed),
        m_requested: m,
        gamma,
        delta,
        seed,
    })
}

/// Randomized SCDM: density-weighted sample, QRCP restricted to it,
/// basis from the winning points.
pub fn randomized_scdm(
    orbitals: &OrbitalSet,
    rho: &ElectronDensity,
    gamma: f64,
    delta: f64,
    seed: u64,
) -> Result<LocalizedBasis> {
    randomized_scdm_timed(orbitals, rho, gamma, delta, seed).map(|(basis, _)| basis)
}

pub fn randomized_scdm_timed(
    orbitals: &OrbitalSet,
    rho: &ElectronDensity,
    gamma: f64,
    delta: f64,
    seed: u64,
) -> Result<(LocalizedBasis, StageTimings)> {
    let mut timings = StageTimings::new();
    let ne = orbitals.n_orbitals();
    let unique = timings.time(stage::SAMPLING, || -> Result<Vec<usize>> {
        let samples = sample_candidates(rho, ne, gamma, delta, seed)?;
        Ok(samples.unique_sorted())
    })?;
    if unique.len() < ne {
        return Err(ScdmError::NotEnoughSamples {
            unique: unique.len(),
            needed: ne,
        });
    }
    let basis = scdm_on_rows(
        orbitals,
        &unique,
        SelectionMethod::Randomized,
        stage::RESTRICTED_QRCP,
        &mut timings,
    )?;
    Ok((basis, timings))
}

/// Smallest index sets carrying a gamma fraction of each orbital's mass.
#[derive(Debug, Clone)]
pub struct GammaSupport {
    sets: Vec<Vec<usize>>,
    gamma: f64,
}

impl GammaSupport {
    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn set(&self, i: usize) -> &[usize] {
        &self.sets[i]
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn n_orbitals(&self) -> usize {
        self.sets.len()
    }
}

/// Greedy descending-|phi|^2 prefix per orbital column; ties broken by
/// lower grid index. gamma = 1 yields the full (nonzero) support.
pub fn gamma_support(phi: &Matrix, gamma: f64) -> Result<GammaSupport> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(ScdmError::InvalidParam {
            name: "gamma",
            reason: format!("must be in (0, 1], got {gamma}"),
        });
    }
    let sets = (0..phi.cols())
        .map(|i| {
            let col = phi.col(i);
            let mut order: Vec<usize> = (0..col.len()).filter(|&j| col[j] != 0.0).collect();
            order.sort_unstable_by(|&a, &b| {
                let wa = col[a] * col[a];
                let wb = col[b] * col[b];
                wb.partial_cmp(&wa).unwrap().then(a.cmp(&b))
            });
            // Target computed by summing in the same order as the prefix
            // walk, so gamma = 1 terminates exactly at the last nonzero.
            let total = compensated_sum(order.iter().map(|&j| col[j] * col[j]));
            let target = gamma * total;
            let mut acc = 0.0;
            let mut keep = Vec::new();
            for &j in &order {
                keep.push(j);
                acc += col[j] * col[j];
                if acc >= target {
                    break;
                }
            }
            keep.sort_unstable();
            keep
        })
        .collect();
    Ok(GammaSupport { sets, gamma })
}

/// Fraction of sampling rounds whose draw cannot cover every orbital's
/// gamma-support with distinct representatives.
///
/// Each trial draws a fresh formula-sized sample (seed + trial index)
/// and looks for a perfect matching of orbitals to distinct sampled
/// points inside their supports.
pub fn coverage_trial(
    rho: &ElectronDensity,
    n_e: usize,
    gamma: f64,
    delta: f64,
    supports: &GammaSupport,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    validate_rates(gamma, delta)?;
    if trials == 0 {
        return Err(ScdmError::InvalidParam {
            name: "trials",
            reason: "must be positive".into(),
        });
    }
    let table = AliasTable::new(rho.values())?;
    let m = sample_count(n_e, gamma, delta);
    let failures: usize = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut drawn = draw_indices(&table, m, seed.wrapping_add(t));
            drawn.sort_unstable();
            drawn.dedup();
            if covers_all_supports(supports, &drawn) {
                0
            } else {
                1
            }
        })
        .sum();
    Ok(failures as f64 / trials as f64)
}

/// Perfect-matching test (Kuhn's augmenting paths): can each orbital be
/// assigned a distinct sampled point inside its support set?
fn covers_all_supports(supports: &GammaSupport, sampled_sorted: &[usize]) -> bool {
    let ne = supports.n_orbitals();
    if sampled_sorted.len() < ne {
        return false;
    }
    // Adjacency as compact right-side ids via binary search.
    let adj: Vec<Vec<usize>> = supports
        .sets()
        .iter()
        .map(|set| {
            set.iter()
                .filter_map(|&j| sampled_sorted.binary_search(&j).ok())
                .collect()
        })
        .collect();
    let mut matched_right = vec![usize::MAX; sampled_sorted.len()];
    let mut visited = vec![false; sampled_sorted.len()];
    for i in 0..ne {
        visited.fill(false);
        if !augment(i, &adj, &mut visited, &mut matched_right) {
            return false;
        }
    }
    true
}

fn augment(
    i: usize,
    adj: &[Vec<usize>],
    visited: &mut [bool],
    matched_right: &mut [usize],
) -> bool {
    for &r in &adj[i] {
        if visited[r] {
            continue;
        }
        visited[r] = true;
        if matched_right[r] == usize::MAX || augment(matched_right[r], adj, visited, matched_right)
        {
            matched_right[r] = i;
            return true;
        }
    }
    false
}
