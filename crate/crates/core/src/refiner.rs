//! Refinement of an approximately localized basis.
//!
//! Truncate each orbital to its significant entries, group orbitals
//! whose truncated supports touch, pivot locally inside each group, and
//! settle the winners with one small global QRCP over the pooled
//! candidates. Every heavy step happens on index sets whose size tracks
//! the orbital supports, not the grid.

use crate::error::{Result, ScdmError};
use crate::linalg::{gemm, qrcp, Matrix};
use crate::orbitals::{ElectronDensity, OrbitalSet};
use crate::sampler::randomized_scdm_timed;
use crate::scdm::{orthobasis_on_matrix, select_on_rows, LocalizedBasis, SelectionMethod};
use crate::timing::{stage, StageTimings};
use rayon::prelude::*;

/// Default relative truncation threshold.
pub const EPSILON_DEFAULT: f64 = 5e-2;

/// Connected orbital clusters at most this large run as one pooled
/// local QRCP instead of one factorization per member.
pub const MERGE_THRESHOLD_DEFAULT: usize = 8;

/// Grid points per occupancy-bitmap cell in overlap detection. Support
/// lists only meet when some cell is occupied by both, so the cheap
/// bitmap AND prunes almost every pair before the exact merge check.
const OVERLAP_CELL: usize = 4096;

/// Refinement knobs.
#[derive(Debug, Clone, Copy)]
pub struct RefineParams {
    /// Entries below epsilon times the orbital's peak are truncated.
    pub epsilon: f64,
    /// Cluster size up to which grouped orbitals share one QRCP.
    pub merge_threshold: usize,
}

impl Default for RefineParams {
    fn default() -> Self {
        RefineParams {
            epsilon: EPSILON_DEFAULT,
            merge_threshold: MERGE_THRESHOLD_DEFAULT,
        }
    }
}

/// Per-orbital significant-entry index sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSets {
    sets: Vec<Vec<usize>>,
    epsilon: f64,
}

impl SupportSets {
    /// Sorted ascending, one set per orbital, never empty.
    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn set(&self, i: usize) -> &[usize] {
        &self.sets[i]
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn n_orbitals(&self) -> usize {
        self.sets.len()
    }
}

/// j is kept for orbital i iff |phi_i(j)| > epsilon * max_k |phi_i(k)|.
pub fn support_sets(phi_tilde: &LocalizedBasis, epsilon: f64) -> Result<SupportSets> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(ScdmError::InvalidParam {
            name: "epsilon",
            reason: format!("must be in (0, 1), got {epsilon}"),
        });
    }
    let phi = phi_tilde.phi();
    let sets: Vec<Vec<usize>> = (0..phi.cols())
        .into_par_iter()
        .map(|i| {
            let col = phi.col(i);
            let peak = col.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
            let cut = epsilon * peak;
            (0..col.len()).filter(|&j| col[j].abs() > cut).collect()
        })
        .collect();
    Ok(SupportSets { sets, epsilon })
}

/// One pooled local factorization: `rows` are orbital indices, `cols`
/// are the grid points their supports reach.
#[derive(Debug, Clone)]
pub struct Group {
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl Group {
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }
}

/// Which orbitals' supports touch, and the grouping of the local
/// factorizations derived from it.
#[derive(Debug, Clone)]
pub struct OverlapGraph {
    neighbors: Vec<Vec<usize>>,
    unions: Vec<Vec<usize>>,
    groups: Vec<Group>,
    merge_threshold: usize,
}

impl OverlapGraph {
    /// R_i: orbitals whose support meets orbital i's (including i).
    pub fn neighbor_set(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn neighbors(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    /// L_i: union of supports over R_i.
    pub fn union_set(&self, i: usize) -> &[usize] {
        &self.unions[i]
    }

    pub fn unions(&self) -> &[Vec<usize>] {
        &self.unions
    }

    /// Deduplicated / merged work items for the local stage.
    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn merge_threshold(&self) -> usize {
        self.merge_threshold
    }

    pub fn n_orbitals(&self) -> usize {
        self.neighbors.len()
    }
}

/// Overlap graph with the default merge threshold.
pub fn overlap_graph(supports: &SupportSets) -> OverlapGraph {
    overlap_graph_with(supports, MERGE_THRESHOLD_DEFAULT)
}

/// Overlap graph with an explicit merge threshold. Threshold 0 disables
/// merging entirely: groups are exactly the distinct neighbor sets.
pub fn overlap_graph_with(supports: &SupportSets, merge_threshold: usize) -> OverlapGraph {
    let sets = supports.sets();
    let ne = sets.len();

    // Coarse occupancy bitmap per orbital; exact sorted-merge check only
    // for pairs whose bitmaps collide.
    let span = sets
        .iter()
        .filter_map(|s| s.last())
        .max()
        .map_or(0, |&m| m + 1);
    let words = span.div_ceil(OVERLAP_CELL).div_ceil(64).max(1);
    let mut maps = vec![0u64; ne * words];
    for (i, s) in sets.iter().enumerate() {
        let map = &mut maps[i * words..(i + 1) * words];
        for &j in s {
            let cell = j / OVERLAP_CELL;
            map[cell / 64] |= 1u64 << (cell % 64);
        }
    }

    let mut neighbors: Vec<Vec<usize>> = (0..ne).map(|i| vec![i]).collect();
    for i in 0..ne {
        for j in i + 1..ne {
            let mi = &maps[i * words..(i + 1) * words];
            let mj = &maps[j * words..(j + 1) * words];
            if mi.iter().zip(mj).all(|(a, b)| a & b == 0) {
                continue;
            }
            if sorted_intersects(&sets[i], &sets[j]) {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
    }
    for r in &mut neighbors {
        r.sort_unstable();
    }

    let unions: Vec<Vec<usize>> = neighbors
        .iter()
        .map(|r| sorted_union(r.iter().map(|&k| sets[k].as_slice())))
        .collect();

    // Connected clusters of the overlap relation; a cluster's neighbor
    // sets never reach outside it, so its loop instances are separable
    // from the rest.
    let mut component = vec![usize::MAX; ne];
    let mut order: Vec<Vec<usize>> = Vec::new();
    for start in 0..ne {
        if component[start] != usize::MAX {
            continue;
        }
        let id = order.len();
        let mut stack = vec![start];
        let mut members = Vec::new();
        component[start] = id;
        while let Some(i) = stack.pop() {
            members.push(i);
            for &j in &neighbors[i] {
                if component[j] == usize::MAX {
                    component[j] = id;
                    stack.push(j);
                }
            }
        }
        members.sort_unstable();
        order.push(members);
    }

    let mut groups = Vec::new();
    for members in order {
        if members.len() <= merge_threshold {
            let cols = sorted_union(members.iter().map(|&k| sets[k].as_slice()));
            groups.push(Group {
                rows: members,
                cols,
            });
        } else {
            // Keep one instance per distinct neighbor set; duplicates
            // would redo the identical factorization.
            let mut seen: Vec<&[usize]> = Vec::new();
            for &i in &members {
                if seen.iter().any(|s| *s == neighbors[i].as_slice()) {
                    continue;
                }
                seen.push(&neighbors[i]);
                groups.push(Group {
                    rows: neighbors[i].clone(),
                    cols: unions[i].clone(),
                });
            }
        }
    }

    OverlapGraph {
        neighbors,
        unions,
        groups,
        merge_threshold,
    }
}

fn sorted_intersects(a: &[usize], b: &[usize]) -> bool {
    let (mut x, mut y) = (0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

fn sorted_union<'a>(lists: impl Iterator<Item = &'a [usize]>) -> Vec<usize> {
    let mut out: Vec<usize> = lists.flatten().copied().collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Candidate grid points pooled from the local factorizations.
#[derive(Debug, Clone)]
pub struct CandidateColumns {
    per_group: Vec<Vec<usize>>,
    union_sorted: Vec<usize>,
}

impl CandidateColumns {
    /// Per-group winners in pivot order, global grid indices.
    pub fn per_group(&self) -> &[Vec<usize>] {
        &self.per_group
    }

    /// Distinct candidates, ascending.
    pub fn union_sorted(&self) -> &[usize] {
        &self.union_sorted
    }
}

/// Per-group QRCP of the group's orbital rows restricted to its column
/// union; each group yields as many winners as it has orbitals.
pub fn local_candidates(
    phi_tilde: &LocalizedBasis,
    graph: &OverlapGraph,
) -> Result<CandidateColumns> {
    let phi = phi_tilde.phi();
    let per_group: Vec<Vec<usize>> = graph
        .groups()
        .par_iter()
        .map(|g| group_candidates(phi, g))
        .collect::<Result<_>>()?;
    let union_sorted = sorted_union(per_group.iter().map(|c| c.as_slice()));
    Ok(CandidateColumns {
        per_group,
        union_sorted,
    })
}

fn group_candidates(phi: &Matrix, g: &Group) -> Result<Vec<usize>> {
    let (nr, nc) = (g.rows.len(), g.cols.len());
    if nc < nr {
        return Err(ScdmError::GroupTooNarrow { rows: nr, cols: nc });
    }
    // (Phi^T) restricted to this group: orbitals are rows, grid points
    // are the pivot candidates.
    let mut block = Matrix::zeros(nr, nc);
    for (c, &gj) in g.cols.iter().enumerate() {
        for (r, &gi) in g.rows.iter().enumerate() {
            block[(r, c)] = phi[(gj, gi)];
        }
    }
    let fac = qrcp(block);
    Ok(fac.pivots().map()[..nr].iter().map(|&p| g.cols[p]).collect())
}

/// Refine with the default merge threshold.
pub fn refine(phi_tilde: &LocalizedBasis, epsilon: f64) -> Result<LocalizedBasis> {
    refine_with(
        phi_tilde,
        &RefineParams {
            epsilon,
            ..RefineParams::default()
        },
    )
    .map(|(basis, _)| basis)
}

pub fn refine_timed(
    phi_tilde: &LocalizedBasis,
    epsilon: f64,
) -> Result<(LocalizedBasis, StageTimings)> {
    refine_with(
        phi_tilde,
        &RefineParams {
            epsilon,
            ..RefineParams::default()
        },
    )
}

/// Full pipeline: supports, overlap graph, local QRCPs, final QRCP over
/// the candidate union, basis formation pinned to the final selection.
pub fn refine_with(
    phi_tilde: &LocalizedBasis,
    params: &RefineParams,
) -> Result<(LocalizedBasis, StageTimings)> {
    let mut timings = StageTimings::new();
    let ne = phi_tilde.n_orbitals();
    let supports = timings.time(stage::SUPPORTS, || {
        support_sets(phi_tilde, params.epsilon)
    })?;
    let graph = timings.time(stage::OVERLAP_GRAPH, || {
        overlap_graph_with(&supports, params.merge_threshold)
    });
    let cands = timings.time(stage::LOCAL_QRCP, || {
        local_candidates(phi_tilde, &graph)
    })?;
    if cands.union_sorted().len() < ne {
        return Err(ScdmError::NotEnoughCandidates {
            got: cands.union_sorted().len(),
            needed: ne,
        });
    }
    let sel = select_on_rows(
        phi_tilde.phi(),
        cands.union_sorted(),
        SelectionMethod::TwoStage,
        stage::FINAL_QRCP,
        &mut timings,
    )?;
    let (phi, q2) = orthobasis_on_matrix(phi_tilde.phi(), &sel, &mut timings)?;
    // Cumulative rotation from the original orbitals: phi = psi (q1 q2).
    let gauge = gemm(phi_tilde.gauge(), &q2)?;
    Ok((LocalizedBasis::from_parts(phi, sel, gauge), timings))
}

/// Randomized selection followed by refinement, with per-stage wall
/// time pooled across both stages.
pub fn two_stage(
    orbitals: &OrbitalSet,
    rho: &ElectronDensity,
    gamma: f64,
    delta: f64,
    epsilon: f64,
    seed: u64,
) -> Result<LocalizedBasis> {
    two_stage_timed(orbitals, rho, gamma, delta, epsilon, seed).map(|(basis, _)| basis)
}

pub fn two_stage_timed(
    orbitals: &OrbitalSet,
    rho: &ElectronDensity,
    gamma: f64,
    delta: f64,
    epsilon: f64,
    seed: u64,
) -> Result<(LocalizedBasis, StageTimings)> {
    let (coarse, mut timings) = randomized_scdm_timed(orbitals, rho, gamma, delta, seed)?;
    let (refined, t2) = refine_timed(&coarse, epsilon)?;
    timings.absorb(&t2);
    Ok((refined, timings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gemm_tn, sym_eigh};
    use crate::orbitals::{compute_density, random_unitary, Grid, OrbitalSet};
    use crate::scdm::{scdm_full, ColumnSelection};
    use crate::synth::{synth_generate, SynthSpec};

    /// Wraps an orthonormal matrix as a basis; selection and gauge are
    /// placeholders (support/overlap/candidate stages read only phi).
    fn basis_of(phi: Matrix) -> LocalizedBasis {
        let ne = phi.cols();
        let n = phi.rows();
        let sel = ColumnSelection::new((0..ne).collect(), SelectionMethod::Full, n).unwrap();
        LocalizedBasis::from_parts(phi, sel, Matrix::identity(ne))
    }

    fn generic_basis(n: usize, ne: usize, seed: u64) -> (OrbitalSet, LocalizedBasis) {
        let q = random_unitary(n, seed);
        let psi = q.select_cols(&(0..ne).collect::<Vec<_>>());
        let set = OrbitalSet::new(Grid::unit([n, 1, 1]), psi).unwrap();
        let basis = scdm_full(&set).unwrap();
        (set, basis)
    }

    /// Overlapping triangular bumps on a line, orthonormalized by the
    /// symmetric (Loewdin) transform so mixing stays local: bump i peaks
    /// at 2 + 4i with radius 3, sharing exactly one point with each
    /// adjacent bump and nothing with anyone further.
    fn hat_chain(ne: usize) -> LocalizedBasis {
        let n = 4 * ne + 1;
        let mut a = Matrix::zeros(n, ne);
        for i in 0..ne {
            let c = 2 + 4 * i;
            for (j, v) in a.col_mut(i).iter_mut().enumerate() {
                let d = (j as f64 - c as f64).abs();
                *v = (1.0 - d / 3.0).max(0.0);
            }
        }
        let s = gemm_tn(&a, &a).unwrap();
        let (evals, evecs) = sym_eigh(&s);
        let mut vs = Matrix::zeros(ne, ne);
        for j in 0..ne {
            let sc = 1.0 / evals[j].sqrt();
            for i in 0..ne {
                vs[(i, j)] = evecs[(i, j)] * sc;
            }
        }
        let s_inv_half = gemm(&vs, &evecs.transpose()).unwrap();
        basis_of(gemm(&a, &s_inv_half).unwrap())
    }

    #[test]
    fn support_threshold_is_strict_and_relative() {
        let phi = Matrix::from_col_major(3, 1, vec![1.0, 0.04, 0.06]).unwrap();
        let s = support_sets(&basis_of(phi), 0.05).unwrap();
        assert_eq!(s.set(0), &[0, 2]);
    }

    #[test]
    fn unit_vector_support_is_its_point() {
        let mut phi = Matrix::zeros(6, 2);
        phi[(3, 0)] = 1.0;
        phi[(5, 1)] = -1.0;
        for eps in [0.01, 0.5, 0.99] {
            let s = support_sets(&basis_of(phi.clone()), eps).unwrap();
            assert_eq!(s.set(0), &[3]);
            assert_eq!(s.set(1), &[5]);
        }
    }

    #[test]
    fn support_epsilon_bounds_enforced() {
        let phi = Matrix::from_col_major(2, 1, vec![1.0, 0.0]).unwrap();
        assert!(support_sets(&basis_of(phi.clone()), 0.0).is_err());
        assert!(support_sets(&basis_of(phi), 1.0).is_err());
    }

    #[test]
    fn disjoint_supports_give_singleton_neighborhoods() {
        let mut phi = Matrix::zeros(8, 3);
        phi[(1, 0)] = 1.0;
        phi[(4, 1)] = 1.0;
        phi[(6, 2)] = 1.0;
        let s = support_sets(&basis_of(phi), 0.1).unwrap();
        let g = overlap_graph(&s);
        for i in 0..3 {
            assert_eq!(g.neighbor_set(i), &[i]);
            assert_eq!(g.union_set(i), s.set(i));
        }
        assert_eq!(g.groups().len(), 3);
        for (i, grp) in g.groups().iter().enumerate() {
            assert_eq!(grp.rows(), &[i]);
        }
    }

    #[test]
    fn chain_overlap_matches_expected_neighborhoods() {
        let basis = hat_chain(3);
        let s = support_sets(&basis, 0.05).unwrap();
        // Adjacent bumps share points, non-adjacent do not.
        assert!(sorted_intersects(s.set(0), s.set(1)));
        assert!(sorted_intersects(s.set(1), s.set(2)));
        assert!(!sorted_intersects(s.set(0), s.set(2)));
        let g = overlap_graph(&s);
        assert_eq!(g.neighbor_set(0), &[0, 1]);
        assert_eq!(g.neighbor_set(1), &[0, 1, 2]);
        assert_eq!(g.neighbor_set(2), &[1, 2]);
        let l1 = sorted_union([s.set(0), s.set(1), s.set(2)].into_iter());
        assert_eq!(g.union_set(1), l1.as_slice());
    }

    #[test]
    fn overlap_symmetry_matches_brute_force() {
        let (_, basis) = generic_basis(40, 7, 13);
        let s = support_sets(&basis, 0.3).unwrap();
        let g = overlap_graph(&s);
        for i in 0..7 {
            assert!(g.neighbor_set(i).contains(&i));
            for j in 0..7 {
                let expect = sorted_intersects(s.set(i), s.set(j));
                assert_eq!(g.neighbor_set(i).contains(&j), expect, "pair ({i},{j})");
                assert_eq!(
                    g.neighbor_set(j).contains(&i),
                    expect,
                    "symmetry ({i},{j})"
                );
            }
            let l = sorted_union(g.neighbor_set(i).iter().map(|&k| s.set(k)));
            assert_eq!(g.union_set(i), l.as_slice());
        }
    }

    #[test]
    fn identical_neighbor_sets_share_one_group() {
        let h = 0.5f64.sqrt();
        let phi = Matrix::from_col_major(4, 2, vec![h, h, 0.0, 0.0, h, -h, 0.0, 0.0]).unwrap();
        let s = support_sets(&basis_of(phi), 0.1).unwrap();
        // Merging off: dedup alone must collapse the two identical
        // neighbor sets into a single work item.
        let g = overlap_graph_with(&s, 0);
        assert_eq!(g.neighbor_set(0), &[0, 1]);
        assert_eq!(g.neighbor_set(1), &[0, 1]);
        assert_eq!(g.groups().len(), 1);
        assert_eq!(g.groups()[0].rows(), &[0, 1]);
        assert_eq!(g.groups()[0].cols(), &[0, 1]);
    }

    #[test]
    fn small_cluster_merges_into_one_group() {
        let basis = hat_chain(3);
        let s = support_sets(&basis, 0.05).unwrap();
        // The 3-chain is one cluster; threshold 8 pools it.
        let g = overlap_graph(&s);
        assert_eq!(g.groups().len(), 1);
        assert_eq!(g.groups()[0].rows(), &[0, 1, 2]);
        // Threshold below the cluster size keeps per-orbital instances
        // (all distinct here).
        let g0 = overlap_graph_with(&s, 2);
        assert_eq!(g0.groups().len(), 3);
    }

    #[test]
    fn singleton_groups_pick_the_peak_entry() {
        let mut phi = Matrix::zeros(9, 3);
        // Two-point supports with a clear peak each.
        let (big, small) = (0.96f64, 0.28);
        for (i, (p, q)) in [(1usize, 2usize), (4, 3), (7, 8)].iter().enumerate() {
            phi[(*p, i)] = big;
            phi[(*q, i)] = small;
        }
        let basis = basis_of(phi);
        let s = support_sets(&basis, 0.1).unwrap();
        let g = overlap_graph(&s);
        let c = local_candidates(&basis, &g).unwrap();
        assert_eq!(c.union_sorted(), &[1, 4, 7]);
        assert_eq!(c.union_sorted().len(), 3);
    }

    #[test]
    fn narrow_group_is_rejected() {
        let mut phi = Matrix::zeros(4, 2);
        phi[(0, 0)] = 1.0;
        phi[(1, 1)] = 1.0;
        let basis = basis_of(phi);
        let graph = OverlapGraph {
            neighbors: vec![vec![0, 1], vec![0, 1]],
            unions: vec![vec![0], vec![0]],
            groups: vec![Group {
                rows: vec![0, 1],
                cols: vec![0],
            }],
            merge_threshold: 0,
        };
        match local_candidates(&basis, &graph) {
            Err(ScdmError::GroupTooNarrow { rows: 2, cols: 1 }) => {}
            other => panic!("expected GroupTooNarrow, got {other:?}"),
        }
    }

    #[test]
    fn candidates_match_naive_per_orbital_loop() {
        let basis = hat_chain(6);
        let s = support_sets(&basis, 0.05).unwrap();
        let g = overlap_graph_with(&s, 0);
        let c = local_candidates(&basis, &g).unwrap();

        // Naive reference: one QRCP per orbital, no dedup, no merging.
        let phi = basis.phi();
        let mut naive: Vec<usize> = Vec::new();
        for i in 0..6 {
            let rows: Vec<usize> = (0..6)
                .filter(|&j| sorted_intersects(s.set(i), s.set(j)))
                .collect();
            let cols = sorted_union(rows.iter().map(|&k| s.set(k)));
            let mut block = Matrix::zeros(rows.len(), cols.len());
            for (cc, &gj) in cols.iter().enumerate() {
                for (rr, &gi) in rows.iter().enumerate() {
                    block[(rr, cc)] = phi[(gj, gi)];
                }
            }
            let fac = qrcp(block);
            naive.extend(fac.pivots().map()[..rows.len()].iter().map(|&p| cols[p]));
        }
        naive.sort_unstable();
        naive.dedup();
        assert_eq!(c.union_sorted(), naive.as_slice());
    }

    #[test]
    fn refine_keeps_orthonormality_and_span() {
        let (set, basis) = generic_basis(36, 6, 29);
        let refined = refine(&basis, 0.2).unwrap();
        assert_eq!(refined.selection().method(), SelectionMethod::TwoStage);
        let gram = gemm_tn(refined.phi(), refined.phi()).unwrap();
        assert!(gram.max_abs_diff_from_identity().0 < 1e-12);
        let coeff = gemm_tn(set.psi(), refined.phi()).unwrap();
        let proj = gemm(set.psi(), &coeff).unwrap();
        assert!(proj.max_abs_diff(refined.phi()) < 1e-12);
        // Cumulative gauge reproduces phi from the original orbitals.
        let via_gauge = gemm(set.psi(), refined.gauge()).unwrap();
        assert!(via_gauge.max_abs_diff(refined.phi()) < 1e-13);
    }

    #[test]
    fn final_selection_comes_from_candidate_union() {
        let (_, basis) = generic_basis(32, 5, 41);
        let eps = 0.15;
        let s = support_sets(&basis, eps).unwrap();
        let g = overlap_graph(&s);
        let c = local_candidates(&basis, &g).unwrap();
        let refined = refine(&basis, eps).unwrap();
        let all_l = sorted_union((0..5).map(|i| g.union_set(i)));
        for &j in refined.selection().indices() {
            assert!(c.union_sorted().binary_search(&j).is_ok());
            assert!(all_l.binary_search(&j).is_ok());
        }
    }

    #[test]
    fn vanishing_epsilon_recovers_full_pipeline() {
        let (set, basis) = generic_basis(30, 5, 3);
        let full = scdm_full(&set).unwrap();
        let refined = refine(&basis, 1e-300).unwrap();
        let mut a = full.selection().indices().to_vec();
        let mut b = refined.selection().indices().to_vec();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
        assert!(refined.phi().max_abs_diff(full.phi()) < 1e-10);
        assert!(refined.gauge().max_abs_diff(full.gauge()) < 1e-10);
    }

    #[test]
    fn refining_a_full_scdm_basis_is_idempotent_on_localized_input() {
        let spec = SynthSpec::new(8, [16, 16, 16], 77);
        let (set, _) = synth_generate(&spec).unwrap();
        let full = scdm_full(&set).unwrap();
        let refined = refine(&full, EPSILON_DEFAULT).unwrap();
        let mut a = full.selection().indices().to_vec();
        let mut b = refined.selection().indices().to_vec();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn orbital_permutation_leaves_selection_set_unchanged() {
        let spec = SynthSpec::new(6, [14, 14, 14], 5);
        let (set, _) = synth_generate(&spec).unwrap();
        let full = scdm_full(&set).unwrap();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let permuted = basis_of(full.phi().select_cols(&perm));
        let a = refine(&full, 0.05).unwrap();
        let b = refine(&permuted, 0.05).unwrap();
        let mut sa = a.selection().indices().to_vec();
        let mut sb = b.selection().indices().to_vec();
        sa.sort_unstable();
        sb.sort_unstable();
        assert_eq!(sa, sb);
    }

    #[test]
    fn epsilon_continuity_gives_bit_identical_output() {
        let (_, basis) = generic_basis(28, 4, 19);
        // Pick two epsilons inside the widest gap of the per-orbital
        // relative magnitude spectrum: same supports by construction.
        let phi = basis.phi();
        let mut ratios: Vec<f64> = Vec::new();
        for i in 0..4 {
            let col = phi.col(i);
            let peak = col.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
            ratios.extend(col.iter().map(|&x| x.abs() / peak));
        }
        ratios.retain(|r| *r > 0.02 && *r < 0.9);
        ratios.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let (mut lo, mut hi) = (ratios[0], ratios[1]);
        for w in ratios.windows(2) {
            if w[1] - w[0] > hi - lo {
                lo = w[0];
                hi = w[1];
            }
        }
        let e1 = lo + (hi - lo) * 0.25;
        let e2 = lo + (hi - lo) * 0.75;
        assert!(
            support_sets(&basis, e1).unwrap().sets() == support_sets(&basis, e2).unwrap().sets(),
            "gap construction must give equal supports"
        );
        let a = refine(&basis, e1).unwrap();
        let b = refine(&basis, e2).unwrap();
        assert_eq!(a.selection().indices(), b.selection().indices());
        assert!(a.phi().max_abs_diff(b.phi()) == 0.0);
        assert!(a.gauge().max_abs_diff(b.gauge()) == 0.0);
    }

    #[test]
    fn too_few_candidates_is_reported() {
        let basis = hat_chain(4);
        let graph = OverlapGraph {
            neighbors: vec![vec![0], vec![1], vec![2], vec![3]],
            unions: vec![vec![5], vec![5], vec![5], vec![5]],
            groups: vec![
                Group {
                    rows: vec![0],
                    cols: vec![5],
                },
                Group {
                    rows: vec![1],
                    cols: vec![5],
                },
            ],
            merge_threshold: 0,
        };
        let cands = local_candidates(&basis, &graph).unwrap();
        assert_eq!(cands.union_sorted(), &[5]);
        // Drive refine's candidate check directly through the public
        // path: a one-point union cannot seat four orbitals.
        let sel = select_on_rows(
            basis.phi(),
            cands.union_sorted(),
            SelectionMethod::TwoStage,
            stage::FINAL_QRCP,
            &mut StageTimings::new(),
        );
        assert!(matches!(sel, Err(ScdmError::NotEnoughSamples { .. })));
    }

    #[test]
    fn two_stage_equals_manual_composition() {
        let q = random_unitary(48, 17);
        let psi = q.select_cols(&(0..6).collect::<Vec<_>>());
        let set = OrbitalSet::new(Grid::unit([48, 1, 1]), psi).unwrap();
        let rho = compute_density(&set);
        let (gamma, delta, eps, seed) = (0.5, 0.5, 0.15, 23);
        let composed = two_stage(&set, &rho, gamma, delta, eps, seed).unwrap();
        let coarse = crate::sampler::randomized_scdm(&set, &rho, gamma, delta, seed).unwrap();
        let manual = refine(&coarse, eps).unwrap();
        assert_eq!(
            composed.selection().indices(),
            manual.selection().indices()
        );
        assert!(composed.phi().max_abs_diff(manual.phi()) == 0.0);
        assert!(composed.gauge().max_abs_diff(manual.gauge()) == 0.0);
        assert_eq!(composed.selection().method(), SelectionMethod::TwoStage);
    }

    #[test]
    fn two_stage_timings_cover_both_stages() {
        let q = random_unitary(48, 31);
        let psi = q.select_cols(&(0..5).collect::<Vec<_>>());
        let set = OrbitalSet::new(Grid::unit([48, 1, 1]), psi).unwrap();
        let rho = compute_density(&set);
        let (_, t) = two_stage_timed(&set, &rho, 0.5, 0.5, 0.2, 7).unwrap();
        for key in [
            stage::SAMPLING,
            stage::RESTRICTED_QRCP,
            stage::SUPPORTS,
            stage::OVERLAP_GRAPH,
            stage::LOCAL_QRCP,
            stage::FINAL_QRCP,
            stage::ORTHOGONALIZE,
            stage::GEMM,
        ] {
            assert!(t.get(key).is_some(), "missing stage {key}");
        }
    }
}
