//! End-to-end acceptance gates. Each test prints one PASS/FAIL line
//! (visible with `--nocapture`) and asserts the same condition, so the
//! suite both documents and enforces the bar.
//!
//! The tests serialize on a global lock: several measure wall time or
//! run at memory scale, and interleaving them would distort both.

use scdm_core::*;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

static GATE: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(num: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {num} ({name}): {verdict} - {detail}");
    assert!(pass, "criterion {num} ({name}) failed: {detail}");
}

fn haar_instance(n_e: usize, dims: [usize; 3], seed: u64) -> OrbitalSet {
    let spec = SynthSpec::new(n_e, dims, seed);
    let (set, _) = synth_generate(&spec).unwrap();
    set
}

fn bits_equal(a: &Matrix, b: &Matrix) -> bool {
    a.rows() == b.rows()
        && a.cols() == b.cols()
        && a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

fn sorted(v: &[usize]) -> Vec<usize> {
    let mut s = v.to_vec();
    s.sort_unstable();
    s
}

#[test]
fn criterion_1_vanishing_threshold_matches_full_pipeline() {
    let _g = serial();
    let t0 = Instant::now();
    let set = haar_instance(16, [32, 32, 32], 101);
    let rho = compute_density(&set);

    let full = scdm_full(&set).unwrap();
    let coarse = randomized_scdm(&set, &rho, 1.0 / 3.0, 1.0, 7).unwrap();
    // Small enough that every entry of every orbital survives: supports
    // are the whole grid and refinement degenerates to one global QRCP.
    let eps = 1e-300;
    let supports = support_sets(&coarse, eps).unwrap();
    let n = set.n_points();
    let all_full = supports.sets().iter().all(|s| s.len() == n);
    let refined = refine(&coarse, eps).unwrap();

    let same_set = sorted(refined.selection().indices()) == sorted(full.selection().indices());
    let phi_dev = refined.phi().max_abs_diff(full.phi());
    let elapsed = t0.elapsed();
    let pass = all_full && same_set && phi_dev <= 1e-10 && elapsed < Duration::from_secs(30);
    report(
        1,
        "vanishing-threshold equivalence",
        pass,
        &format!(
            "supports full: {all_full}, selection sets equal: {same_set}, \
             max |phi - phi_full| = {phi_dev:.2e} (tol 1e-10), elapsed {:.1?} (limit 30s)",
            elapsed
        ),
    );
}

#[test]
fn criterion_2_gauge_invariance() {
    let _g = serial();
    let t0 = Instant::now();
    let mut spec = SynthSpec::new(12, [20, 20, 20], 55);
    spec.gauge = GaugeSpec::Identity;
    let (set, _) = synth_generate(&spec).unwrap();
    let reference = scdm_full(&set).unwrap();

    let mut max_dev = 0.0f64;
    let mut selections_match = true;
    for g in 0..20u64 {
        let u = random_unitary(12, 1000 + g);
        let rotated = OrbitalSet::new(
            set.grid().clone(),
            scdm_core::linalg::gemm(set.psi(), &u).unwrap(),
        )
        .unwrap();
        let basis = scdm_full(&rotated).unwrap();
        selections_match &= basis.selection().indices() == reference.selection().indices();
        max_dev = max_dev.max(basis.phi().max_abs_diff(reference.phi()));
    }
    let elapsed = t0.elapsed();
    let pass = selections_match && max_dev <= 1e-10 && elapsed < Duration::from_secs(60);
    report(
        2,
        "gauge invariance",
        pass,
        &format!(
            "20 random gauges: selections identical: {selections_match}, \
             max entrywise deviation {max_dev:.2e} (tol 1e-10), elapsed {:.1?} (limit 60s)",
            elapsed
        ),
    );
}

#[test]
fn criterion_3_locality_parity() {
    let _g = serial();
    let mut pass = true;
    let mut details = Vec::new();
    for (n_e, dims, seed) in [(16usize, [24usize, 24, 24], 31u64), (64, [40, 40, 40], 37)] {
        // decay * separation = 1.0 * 4.0 = 4 with the default spec.
        let set = haar_instance(n_e, dims, seed);
        let rho = compute_density(&set);
        let full = scdm_full(&set).unwrap();
        let coarse = randomized_scdm(&set, &rho, 1.0 / 3.0, 1.0, seed + 1).unwrap();
        let refined = refine(&coarse, EPSILON_DEFAULT).unwrap();

        let ts_full = truncated_sparsity(full.phi(), TAU_DEFAULT).unwrap();
        let ts_two = truncated_sparsity(refined.phi(), TAU_DEFAULT).unwrap();
        let ts_rand = truncated_sparsity(coarse.phi(), TAU_DEFAULT).unwrap();

        let med_ok = (ts_two.median() - ts_full.median()).abs() <= 0.10 * ts_full.median();
        let max_ok = (ts_two.max() - ts_full.max()).abs() <= 0.10 * ts_full.max();
        let rand_ok =
            ts_rand.median() <= 2.0 * ts_full.median() && ts_rand.max() <= 2.0 * ts_full.max();
        pass &= med_ok && max_ok && rand_ok;
        details.push(format!(
            "n_e={n_e}: median full/two-stage/randomized = {:.4}/{:.4}/{:.4}, \
             max = {:.4}/{:.4}/{:.4}",
            ts_full.median(),
            ts_two.median(),
            ts_rand.median(),
            ts_full.max(),
            ts_two.max(),
            ts_rand.max()
        ));
    }
    report(
        3,
        "locality parity",
        pass,
        &format!(
            "two-stage within 10% of full, randomized within 2x; {}",
            details.join("; ")
        ),
    );
}

#[test]
fn criterion_4_coverage_monte_carlo() {
    let _g = serial();
    let t0 = Instant::now();
    let mut spec = SynthSpec::new(16, [24, 24, 24], 71);
    spec.gauge = GaugeSpec::Identity;
    spec.min_separation = 5.0;
    spec.decay_rate = 1.2;
    let (set, truth) = synth_generate(&spec).unwrap();
    let supports = gamma_support(&truth.phi_ref, 0.5).unwrap();

    // The bound presumes disjoint supports; verify before measuring.
    let mut disjoint = true;
    for i in 0..16 {
        for j in i + 1..16 {
            let a = supports.set(i);
            let b = supports.set(j);
            disjoint &= a.iter().all(|x| b.binary_search(x).is_err());
        }
    }
    let rho = compute_density(&set);
    let rate = coverage_trial(&rho, 16, 0.5, 0.5, &supports, 200, 4242).unwrap();
    let elapsed = t0.elapsed();
    let pass = disjoint && rate <= 0.5 && elapsed < Duration::from_secs(120);
    report(
        4,
        "coverage bound",
        pass,
        &format!(
            "gamma=1/2 supports disjoint: {disjoint}, failure rate {rate:.3} over 200 trials \
             (bound 0.5), elapsed {:.1?} (limit 120s)",
            elapsed
        ),
    );
}

fn median3(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[v.len() / 2]
}

#[test]
fn criterion_5_speedup_at_scale() {
    let _g = serial();
    let n_e = 128;
    let set = haar_instance(n_e, [96, 96, 96], 808);
    let rho = compute_density(&set);

    // Accounting convention: each method is charged its time to produce
    // the localizing transform; the final tall product Psi*Q is the
    // shared floor every method pays and is reported separately. The
    // two-stage total does include the one intermediate product that
    // materializes the coarse basis, since refinement cannot start
    // without it.
    let mut full_times = Vec::new();
    let mut two_times = Vec::new();
    let mut rand_times = Vec::new();
    let mut gemm_times = Vec::new();
    for _ in 0..3 {
        let (_, t_full) = scdm_full_timed(&set).unwrap();
        full_times.push(t_full.transform_total());

        let (coarse, t1) = randomized_scdm_timed(&set, &rho, 1.0 / 3.0, 1.0, 99).unwrap();
        let (_, t2) = refine_timed(&coarse, EPSILON_DEFAULT).unwrap();
        rand_times.push(t1.transform_total());
        gemm_times.push(t1.get(stage::GEMM).unwrap());
        two_times.push(t1.total() + t2.transform_total());
    }
    let full = median3(full_times);
    let two = median3(two_times);
    let rand = median3(rand_times);
    let gemm = median3(gemm_times);
    let speedup = full.as_secs_f64() / two.as_secs_f64();
    let pass = two <= full / 3 && rand <= gemm;
    report(
        5,
        "speedup at scale",
        pass,
        &format!(
            "N=96^3, n_e=128, 3-run medians: full transform {:.2}s, two-stage total {:.2}s \
             (speedup {speedup:.1}x, need >= 3), randomized stage {:.3}s vs product {:.2}s",
            full.as_secs_f64(),
            two.as_secs_f64(),
            rand.as_secs_f64(),
            gemm.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_6_selection_conditioning() {
    let _g = serial();
    let mut instances: Vec<(String, OrbitalSet)> = Vec::new();
    instances.push((
        "random-16".into(),
        haar_instance(16, [24, 24, 24], 31),
    ));
    instances.push(("random-64".into(), haar_instance(64, [40, 40, 40], 37)));
    // Cluster anchors sit three separations apart, so the box must be
    // roomy enough to hold three of them.
    let mut clustered = SynthSpec::new(12, [32, 32, 32], 13);
    clustered.layout = CenterLayout::Clustered;
    instances.push((
        "clustered-12".into(),
        synth_generate(&clustered).unwrap().0,
    ));
    let mut lattice = SynthSpec::new(8, [16, 16, 16], 17);
    lattice.layout = CenterLayout::Lattice;
    lattice.gauge = GaugeSpec::Identity;
    instances.push(("lattice-8".into(), synth_generate(&lattice).unwrap().0));

    let mut pass = true;
    let mut rows = Vec::new();
    for (name, set) in &instances {
        let rho = compute_density(set);
        let n_e = set.n_orbitals();
        let full = scdm_full(set).unwrap();
        let coarse = randomized_scdm(set, &rho, 1.0 / 3.0, 1.0, 5).unwrap();
        let refined = refine(&coarse, EPSILON_DEFAULT).unwrap();
        let mut kappas = Vec::new();
        for basis in [&full, &coarse, &refined] {
            let k = selection_condition(set, basis.selection());
            pass &= k <= 10.0;
            kappas.push(format!("{k:.2}"));
        }
        rows.push(format!("{name} (n_e={n_e}): full/rand/two-stage kappa = {}", kappas.join("/")));
    }
    report(
        6,
        "selection conditioning",
        pass,
        &format!("all <= 10; {}", rows.join("; ")),
    );
}

#[test]
fn criterion_7_structural_invariants() {
    let _g = serial();
    let t0 = Instant::now();
    let set = haar_instance(16, [24, 24, 24], 311);
    let rho = compute_density(&set);
    let n_e = set.n_orbitals() as f64;

    let density_dev = (rho.total() - n_e).abs();
    let mut ortho_dev = 0.0f64;
    let mut span_dev = 0.0f64;
    let full = scdm_full(&set).unwrap();
    let coarse = randomized_scdm(&set, &rho, 1.0 / 3.0, 1.0, 9).unwrap();
    let refined = refine(&coarse, EPSILON_DEFAULT).unwrap();
    for basis in [&full, &coarse, &refined] {
        let gram = scdm_core::linalg::gemm_tn(basis.phi(), basis.phi()).unwrap();
        ortho_dev = ortho_dev.max(gram.max_abs_diff_from_identity().0);
        span_dev = span_dev.max(span_residual(&set, basis.phi()).unwrap());
    }

    // Pivot sequences against an independent re-orthogonalizing
    // reference on 200 random shapes up to 50 x 200.
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let mut pivots_ok = true;
    for _ in 0..200 {
        let m = rng.random_range(1..=50);
        let n = rng.random_range(1..=200);
        let data: Vec<f64> = (0..m * n)
            .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng))
            .collect();
        let a = Matrix::from_col_major(m, n, data).unwrap();
        let fac = scdm_core::linalg::qrcp(a.clone());
        let oracle = pivot_oracle(&a);
        pivots_ok &= fac.pivots().map()[..oracle.len()] == oracle[..];
    }
    let elapsed = t0.elapsed();
    let pass = ortho_dev <= 1e-10
        && span_dev <= 1e-10
        && density_dev <= 1e-10
        && pivots_ok
        && elapsed < Duration::from_secs(300);
    report(
        7,
        "structural invariants",
        pass,
        &format!(
            "max orthonormality deviation {ortho_dev:.2e}, max span residual {span_dev:.2e}, \
             density total off by {density_dev:.2e} (all tol 1e-10), \
             200 pivot sequences match reference: {pivots_ok}, elapsed {:.1?} (limit 300s)",
            elapsed
        ),
    );
}

/// Independent pivot reference: explicit residual matrix, re-orthogonalized
/// at every step, ties to the lowest original index.
fn pivot_oracle(a: &Matrix) -> Vec<usize> {
    let m = a.rows();
    let n = a.cols();
    let mut resid = a.clone();
    let mut alive: Vec<usize> = (0..n).collect();
    let mut chosen = Vec::new();
    for _ in 0..m.min(n) {
        let mut best: Option<(f64, usize)> = None;
        for &j in &alive {
            let nj: f64 = resid.col(j).iter().map(|v| v * v).sum();
            let better = match best {
                None => true,
                Some((bn, bj)) => nj > bn || (nj == bn && j < bj),
            };
            if better {
                best = Some((nj, j));
            }
        }
        let (bn, bj) = best.unwrap();
        chosen.push(bj);
        alive.retain(|&j| j != bj);
        if bn == 0.0 {
            continue;
        }
        let q: Vec<f64> = resid.col(bj).iter().map(|v| v / bn.sqrt()).collect();
        for &j in &alive {
            let dot: f64 = q.iter().zip(resid.col(j)).map(|(x, y)| x * y).sum();
            for (qi, rj) in q.iter().zip(resid.col_mut(j)) {
                *rj -= dot * qi;
            }
        }
    }
    chosen
}

#[test]
fn criterion_8_determinism() {
    let _g = serial();
    let spec = SynthSpec::new(12, [20, 20, 20], 404);
    let mut pass = true;
    let mut notes = Vec::new();

    let (set0, _) = synth_generate(&spec).unwrap();
    for _ in 0..2 {
        let (set, _) = synth_generate(&spec).unwrap();
        pass &= bits_equal(set.psi(), set0.psi());
    }
    notes.push("generator".to_string());

    let rho = compute_density(&set0);
    let full0 = scdm_full(&set0).unwrap();
    let coarse0 = randomized_scdm(&set0, &rho, 1.0 / 3.0, 1.0, 66).unwrap();
    let two0 = two_stage(&set0, &rho, 1.0 / 3.0, 1.0, EPSILON_DEFAULT, 66).unwrap();
    for _ in 0..2 {
        let full = scdm_full(&set0).unwrap();
        pass &= full.selection().indices() == full0.selection().indices()
            && bits_equal(full.phi(), full0.phi())
            && bits_equal(full.gauge(), full0.gauge());
        let coarse = randomized_scdm(&set0, &rho, 1.0 / 3.0, 1.0, 66).unwrap();
        pass &= coarse.selection().indices() == coarse0.selection().indices()
            && bits_equal(coarse.phi(), coarse0.phi());
        let two = two_stage(&set0, &rho, 1.0 / 3.0, 1.0, EPSILON_DEFAULT, 66).unwrap();
        pass &= two.selection().indices() == two0.selection().indices()
            && bits_equal(two.phi(), two0.phi())
            && bits_equal(two.gauge(), two0.gauge());
    }
    notes.push("full/randomized/two-stage pipelines".to_string());

    let rho2 = compute_density(&set0);
    pass &= rho.values() == rho2.values();
    notes.push("density".to_string());

    report(
        8,
        "determinism",
        pass,
        &format!(
            "byte-identical across 3 repeats with fixed seeds: {}",
            notes.join(", ")
        ),
    );
}
