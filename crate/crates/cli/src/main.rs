//! `scdm`: synthetic instances, localization runs, quality reports, and
//! a timing ladder, over the on-disk formats in [`io`].
//!
//! Exit codes: 0 success, 1 runtime failure (I/O, corrupt files,
//! infeasible or ill-conditioned inputs), 2 usage errors.

mod bench;
mod io;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use scdm_core::*;
use serde_json::json;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

#[derive(Parser)]
#[command(name = "scdm", version, about = "Localized orthonormal bases via column selection")]
struct Cli {
    /// Worker threads for matrix kernels (default: SCDM_THREADS, then
    /// all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a synthetic orbital set and write it to disk
    Generate(GenerateArgs),
    /// Read an orbital file, select columns, write the localized basis
    Localize(LocalizeArgs),
    /// Quality reports for a basis file
    Metrics(MetricsArgs),
    /// Timing ladder across instance sizes
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of orbitals
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    ne: u32,
    /// Grid dimensions as nx,ny,nz
    #[arg(long, value_parser = parse_dims, default_value = "24,24,24")]
    dims: [usize; 3],
    /// Exponential decay rate of each bump
    #[arg(long, default_value_t = 1.0)]
    decay: f64,
    /// Minimum center separation
    #[arg(long, default_value_t = 4.0)]
    min_separation: f64,
    #[arg(long, value_enum, default_value_t = LayoutArg::Random)]
    layout: LayoutArg,
    #[arg(long, value_enum, default_value_t = GaugeArg::Haar)]
    gauge: GaugeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Orbital file to write; the density and the localized reference
    /// go next to it with _rho and _ref tags
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LocalizeArgs {
    /// Input orbital file
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::TwoStage)]
    method: MethodArg,
    /// Sampling rate: draws n_e/gamma * ln(n_e/delta) candidates
    #[arg(long, default_value_t = 1.0 / 3.0)]
    gamma: f64,
    /// Coverage failure bound for the sample budget
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    /// Relative support truncation threshold for refinement
    #[arg(long, default_value_t = EPSILON_DEFAULT)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix for <prefix>_phi.orb, <prefix>_selection.txt,
    /// <prefix>_timing.json (default: input path minus extension)
    #[arg(long)]
    out_prefix: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Basis file to evaluate
    phi: PathBuf,
    /// Original orbital file, enabling span-residual and conditioning
    /// reports
    #[arg(long)]
    psi: Option<PathBuf>,
    /// Selection list (needs --psi) for the conditioning report
    #[arg(long)]
    selection: Option<PathBuf>,
    /// Second basis file for a matched-pair comparison
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Relative threshold for the occupied-fraction report
    #[arg(long, default_value_t = TAU_DEFAULT)]
    tau: f64,
    /// Output prefix for <prefix>_locality.csv and <prefix>_report.json
    /// (default: basis path minus extension)
    #[arg(long)]
    out_prefix: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Cube sides of the instance ladder
    #[arg(long, value_delimiter = ',', default_value = "16,24,32")]
    sides: Vec<usize>,
    /// Orbital counts, one per ladder point
    #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
    ne: Vec<usize>,
    /// Timed repetitions per method; the median row is kept
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    reps: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Full,
    Randomized,
    TwoStage,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Random,
    Lattice,
    Clustered,
}

#[derive(Clone, Copy, ValueEnum)]
enum GaugeArg {
    Haar,
    Identity,
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected nx,ny,nz, got {s:?}"));
    }
    let mut dims = [0usize; 3];
    for (d, p) in dims.iter_mut().zip(&parts) {
        *d = p
            .trim()
            .parse()
            .map_err(|e| format!("bad dimension {p:?}: {e}"))?;
        if *d == 0 {
            return Err("dimensions must be positive".into());
        }
    }
    Ok(dims)
}

/// Argument combinations clap cannot rule out statically; reported with
/// the usage exit code.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = resolve_threads(cli.threads) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: setting up {n} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn resolve_threads(flag: Option<usize>) -> Option<usize> {
    if flag.is_some() {
        return flag;
    }
    let raw = std::env::var("SCDM_THREADS").ok()?;
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => Some(n),
        _ => {
            eprintln!("warning: ignoring unparseable SCDM_THREADS={raw:?}");
            None
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate(args) => run_generate(args),
        Command::Localize(args) => run_localize(args),
        Command::Metrics(args) => run_metrics(args),
        Command::Bench(args) => run_bench(args),
    }
}

fn run_generate(args: GenerateArgs) -> Result<()> {
    let mut spec = SynthSpec::new(args.ne as usize, args.dims, args.seed);
    spec.decay_rate = args.decay;
    spec.min_separation = args.min_separation;
    spec.layout = match args.layout {
        LayoutArg::Random => CenterLayout::RandomMinSeparation,
        LayoutArg::Lattice => CenterLayout::Lattice,
        LayoutArg::Clustered => CenterLayout::Clustered,
    };
    spec.gauge = match args.gauge {
        GaugeArg::Haar => GaugeSpec::HaarRandom,
        GaugeArg::Identity => GaugeSpec::Identity,
    };
    let (set, truth) = synth_generate(&spec)?;
    let rho = compute_density(&set);

    io::write_orbital_file(&args.out, set.grid(), set.psi())?;
    let rho_path = io::tagged_path(&args.out, "rho");
    let rho_matrix = Matrix::from_col_major(set.n_points(), 1, rho.values().to_vec())?;
    io::write_orbital_file(&rho_path, set.grid(), &rho_matrix)?;
    let ref_path = io::tagged_path(&args.out, "ref");
    io::write_orbital_file(&ref_path, set.grid(), &truth.phi_ref)?;

    println!(
        "instance: {} points ({}x{}x{}), {} orbitals, layout {:?}, gauge {:?}, seed {}",
        set.n_points(),
        args.dims[0],
        args.dims[1],
        args.dims[2],
        args.ne,
        spec.layout,
        spec.gauge,
        args.seed
    );
    println!("wrote {}", args.out.display());
    println!("wrote {} (density)", rho_path.display());
    println!("wrote {} (localized reference)", ref_path.display());
    Ok(())
}

/// Stage seconds plus the two headline numbers: the transform cost the
/// method is charged, and the final basis product it shares with every
/// other method.
struct RunTimes {
    stages: Vec<(String, f64)>,
    charged: Duration,
    final_gemm: Duration,
    total: Duration,
}

fn localize_run(set: &OrbitalSet, args: &LocalizeArgs) -> Result<(LocalizedBasis, RunTimes)> {
    let secs = |t: &StageTimings| -> Vec<(String, f64)> {
        t.iter()
            .map(|(k, d)| (k.to_string(), d.as_secs_f64()))
            .collect()
    };
    match args.method {
        MethodArg::Full => {
            let (basis, t) = scdm_full_timed(set)?;
            let times = RunTimes {
                stages: secs(&t),
                charged: t.transform_total(),
                final_gemm: t.get(stage::GEMM).unwrap_or_default(),
                total: t.total(),
            };
            Ok((basis, times))
        }
        MethodArg::Randomized => {
            let rho = compute_density(set);
            let (basis, t) =
                randomized_scdm_timed(set, &rho, args.gamma, args.delta, args.seed)?;
            let times = RunTimes {
                stages: secs(&t),
                charged: t.transform_total(),
                final_gemm: t.get(stage::GEMM).unwrap_or_default(),
                total: t.total(),
            };
            Ok((basis, times))
        }
        MethodArg::TwoStage => {
            let rho = compute_density(set);
            let (coarse, t1) =
                randomized_scdm_timed(set, &rho, args.gamma, args.delta, args.seed)?;
            let (basis, t2) = refine_timed(&coarse, args.epsilon)?;
            // The product materializing the coarse basis is a real cost
            // of this method; only the final product is the shared floor.
            let mut stages = secs(&t1);
            for (k, _) in stages.iter_mut() {
                if k == stage::GEMM {
                    *k = "coarse_gemm".to_string();
                }
            }
            // Both stages orthogonalize; fold same-named entries so the
            // stage sum stays equal to the reported total.
            for (k, v) in secs(&t2) {
                match stages.iter_mut().find(|(existing, _)| *existing == k) {
                    Some((_, acc)) => *acc += v,
                    None => stages.push((k, v)),
                }
            }
            let times = RunTimes {
                stages,
                charged: t1.total() + t2.transform_total(),
                final_gemm: t2.get(stage::GEMM).unwrap_or_default(),
                total: t1.total() + t2.total(),
            };
            Ok((basis, times))
        }
    }
}

fn run_localize(args: LocalizeArgs) -> Result<()> {
    let (grid, psi) = io::read_orbital_file(&args.input)?;
    let set = OrbitalSet::new(grid, psi).context("validating input orbitals")?;
    let (basis, times) = localize_run(&set, &args)?;

    let prefix = args
        .out_prefix
        .clone()
        .unwrap_or_else(|| args.input.with_extension(""));
    let phi_path = suffixed(&prefix, "_phi.orb");
    let sel_path = suffixed(&prefix, "_selection.txt");
    let timing_path = suffixed(&prefix, "_timing.json");

    io::write_orbital_file(&phi_path, set.grid(), basis.phi())?;
    io::write_selection_file(&sel_path, set.grid(), basis.selection().indices())?;

    let method_name = match args.method {
        MethodArg::Full => "full",
        MethodArg::Randomized => "randomized",
        MethodArg::TwoStage => "two-stage",
    };
    let stages: serde_json::Map<String, serde_json::Value> = times
        .stages
        .iter()
        .map(|(k, v)| (k.clone(), json!(v)))
        .collect();
    io::write_json(
        &timing_path,
        &json!({
            "method": method_name,
            "seed": args.seed,
            "gamma": args.gamma,
            "delta": args.delta,
            "epsilon": args.epsilon,
            "threads": rayon::current_num_threads(),
            "stages": stages,
            "transform_seconds": times.charged.as_secs_f64(),
            "basis_product_seconds": times.final_gemm.as_secs_f64(),
            "total_seconds": times.total.as_secs_f64(),
        }),
    )?;

    println!(
        "{}: {} orbitals on {} points: transform {:.4}s, basis product {:.4}s, total {:.4}s",
        method_name,
        basis.n_orbitals(),
        set.n_points(),
        times.charged.as_secs_f64(),
        times.final_gemm.as_secs_f64(),
        times.total.as_secs_f64()
    );
    println!("wrote {}", phi_path.display());
    println!("wrote {}", sel_path.display());
    println!("wrote {}", timing_path.display());
    Ok(())
}

fn run_metrics(args: MetricsArgs) -> Result<()> {
    let (grid, phi) = io::read_orbital_file(&args.phi)?;
    let locality = truncated_sparsity(&phi, args.tau)?;
    let spread_report = spread(&phi, &grid)?;

    let mut report = json!({
        "tau": args.tau,
        "occupied_fraction": {
            "median": locality.median(),
            "max": locality.max(),
            "per_orbital": locality.fractions(),
        },
        "spread": {
            "total": spread_report.total(),
            "per_orbital": spread_report.spreads(),
        },
    });
    println!(
        "occupied fraction at tau={}: median {:.4}, max {:.4}; total spread {:.3}",
        args.tau,
        locality.median(),
        locality.max(),
        spread_report.total()
    );

    if let Some(psi_path) = &args.psi {
        let (psi_grid, psi) = io::read_orbital_file(psi_path)?;
        if !psi_grid.same_layout(&grid) {
            bail!(
                "grid mismatch: {} and {} describe different grids",
                args.phi.display(),
                psi_path.display()
            );
        }
        let set = OrbitalSet::new(psi_grid, psi).context("validating original orbitals")?;
        let residual = span_residual(&set, &phi)?;
        report["span_residual"] = json!(residual);
        println!("span residual vs {}: {:.3e}", psi_path.display(), residual);

        if let Some(sel_path) = &args.selection {
            let rows = io::read_selection_file(sel_path, set.n_points())?;
            let kappa = rows_condition(&set, &rows);
            report["selection_condition"] = json!(kappa);
            println!("selected-row condition number: {kappa:.4}");
        }
    } else if args.selection.is_some() {
        return Err(usage("--selection needs --psi to evaluate against"));
    }

    if let Some(cmp_path) = &args.compare {
        let (cmp_grid, other) = io::read_orbital_file(cmp_path)?;
        if !cmp_grid.same_layout(&grid) {
            bail!(
                "grid mismatch: {} and {} describe different grids",
                args.phi.display(),
                cmp_path.display()
            );
        }
        let pairing = match_orbitals(&phi, &other)?;
        let worst = pairing
            .correlations()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        report["match"] = json!({
            "permutation": pairing.permutation(),
            "correlations": pairing.correlations(),
        });
        println!(
            "matched against {}: weakest |correlation| {:.4}",
            cmp_path.display(),
            worst
        );
    }

    let prefix = args
        .out_prefix
        .clone()
        .unwrap_or_else(|| args.phi.with_extension(""));
    let csv_path = suffixed(&prefix, "_locality.csv");
    let json_path = suffixed(&prefix, "_report.json");
    write_locality_csv(&csv_path, &locality)?;
    io::write_json(&json_path, &report)?;
    println!("wrote {}", csv_path.display());
    println!("wrote {}", json_path.display());
    Ok(())
}

fn write_locality_csv(path: &Path, locality: &LocalityReport) -> Result<()> {
    let mut text = String::from("bin_lo,bin_hi,count\n");
    for (lo, hi, count) in locality.histogram() {
        text.push_str(&format!("{lo},{hi},{count}\n"));
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn run_bench(args: BenchArgs) -> Result<()> {
    if args.sides.len() != args.ne.len() {
        return Err(usage(format!(
            "--sides lists {} points but --ne lists {}",
            args.sides.len(),
            args.ne.len()
        )));
    }
    if args.sides.is_empty() {
        return Err(usage("the ladder needs at least one point"));
    }
    eprintln!(
        "ladder: {} points, {} reps, {} threads",
        args.sides.len(),
        args.reps,
        rayon::current_num_threads()
    );
    let rows = bench::run_ladder(&args.sides, &args.ne, args.reps as usize, args.seed)?;
    match &args.out {
        Some(path) => {
            let file = std::fs::File::create(path)
                .with_context(|| format!("creating {}", path.display()))?;
            bench::write_csv(std::io::BufWriter::new(file), &rows)?;
            println!("wrote {}", path.display());
        }
        None => bench::write_csv(std::io::stdout().lock(), &rows)?,
    }
    if let Some(slope) = bench::full_scaling_slope(&rows) {
        println!("full transform scales like N^{slope:.2} across the ladder");
    }
    if let Some(last) = rows.last() {
        let full = rows
            .iter()
            .rfind(|r| r.method == "full" && r.n_points == last.n_points)
            .unwrap();
        let two = rows
            .iter()
            .rfind(|r| r.method == "two-stage" && r.n_points == last.n_points)
            .unwrap();
        println!(
            "largest point: full {:.3}s vs two-stage {:.3}s ({:.1}x)",
            full.charged, two.charged, two.speedup_vs_full
        );
    }
    Ok(())
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}
