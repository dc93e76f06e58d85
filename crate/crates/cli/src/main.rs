//! Command-line harness: single runs, solver comparisons, and
//! config-driven experiments. Exit code 0 only when every in-run
//! assertion passes.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use stircp_core::harness::{
    self, couple_decay, oracle_default_lattices, oracle_default_params, oracle_tv, pde_compare,
    spec_hash, ExperimentSpec,
};
use stircp_core::kmc::{simulate, EventCounter, EventLogger, Observer};
use stircp_core::lattice::{BoundaryMode, Configuration, Geometry};
use stircp_core::measure::{
    ledger_csv, sample_product_measure, CompensatorTracker, CurrentLedger, Profile,
};
use stircp_core::params::{ModelParams, ParamWarning};
use stircp_core::pde::{snapshot_csv, solve_pde, PdeGrid};
use stircp_core::rng::StreamSeed;
use stircp_core::spectral::{duhamel_solve, SpectralOptions};

#[derive(Parser)]
#[command(
    name = "stircp",
    about = "Stirred contact process with reservoirs: exact simulation and hydrodynamic checks"
)]
struct Cli {
    /// Worker threads for replica dispatch (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one trajectory and report final occupancies.
    Simulate(SimulateArgs),
    /// Solve the reaction-diffusion system and export snapshots.
    Pde(PdeArgs),
    /// Solve with the spectral oracle and export a sampled snapshot.
    Spectral(SpectralArgs),
    /// Cross-validate the finite-difference and spectral solvers.
    Compare(CompareArgs),
    /// Coupling decay experiment over an N grid.
    Couple(CoupleArgs),
    /// Tiny-lattice exactness check against uniformization.
    Oracle(OracleArgs),
    /// Run an experiment described by a flat key = value spec file.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 2.0)]
    lambda1: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda2: f64,
    #[arg(long, default_value_t = 0.5)]
    r: f64,
    /// Bath densities b1,b2,b3.
    #[arg(long, default_value = "0.3,0.2,0.1", value_parser = parse_triple)]
    b: Triple,
}

#[derive(Clone, Copy)]
struct Triple([f64; 3]);

fn parse_triple(s: &str) -> Result<Triple, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("bad number in {s:?}")))
        .collect::<Result<_, _>>()?;
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got {s:?}"));
    }
    Ok(Triple([parts[0], parts[1], parts[2]]))
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("bad number in {s:?}")))
        .collect()
}

impl ModelArgs {
    fn params(&self, scale_n: u32) -> Result<ModelParams> {
        let params = ModelParams::new(self.lambda1, self.lambda2, self.r, self.b.0, scale_n);
        for warning in params.validate().context("invalid model parameters")? {
            match warning {
                ParamWarning::Lambda2NotSlower => eprintln!(
                    "warning: lambda2 >= lambda1; doubly occupied sites are not slowed"
                ),
                ParamWarning::DegenerateBath => {
                    eprintln!("warning: a bath density is zero")
                }
            }
        }
        Ok(params)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1)]
    d: u8,
    /// Half-width N of the e1 axis (sites -N..N).
    #[arg(long, default_value_t = 32)]
    n: u32,
    /// Sites per transverse direction (d = 2).
    #[arg(long, default_value_t = 1)]
    transverse: u32,
    /// Periodic in every direction, no reservoirs.
    #[arg(long)]
    torus: bool,
    #[arg(long, default_value_t = 0.1)]
    t_end: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "parabolic-blend")]
    profile: String,
    /// NDJSON event log destination (off by default; hot path).
    #[arg(long)]
    events: Option<PathBuf>,
    /// Write the final configuration snapshot here.
    #[arg(long)]
    snapshot_out: Option<PathBuf>,
    /// Write the current ledgers (with compensators) as CSV here.
    #[arg(long)]
    ledger_out: Option<PathBuf>,
}

#[derive(Args)]
struct PdeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1.0 / 128.0)]
    h: f64,
    #[arg(long)]
    torus: bool,
    /// Snapshot times, comma separated.
    #[arg(long, default_value = "0.05,0.1,0.25", value_parser = parse_list)]
    snapshots: Vec<Vec<f64>>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, default_value = "parabolic-blend")]
    profile: String,
}

#[derive(Args)]
struct SpectralArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0.25)]
    t_end: f64,
    #[arg(long, default_value_t = 400)]
    modes: usize,
    #[arg(long, default_value_t = 1.0 / 128.0)]
    h: f64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, default_value = "parabolic-blend")]
    profile: String,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0.25)]
    t_end: f64,
    #[arg(long, default_value_t = 1.0 / 128.0)]
    h: f64,
    #[arg(long, default_value = "parabolic-blend")]
    profile: String,
}

#[derive(Args)]
struct CoupleArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "8,16,32", value_parser = parse_list)]
    n_grid: Vec<Vec<f64>>,
    #[arg(long, default_value_t = 16)]
    replicas: u32,
    #[arg(long, default_value_t = 0.1)]
    t: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "parabolic-blend")]
    profile: String,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 200_000)]
    replicas: u64,
    #[arg(long, default_value_t = 0.5)]
    t: f64,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Path of the flat key = value spec file.
    #[arg(long)]
    spec: PathBuf,
    /// Override the spec's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override the spec's base seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("thread pool")?;
    }
    match cli.cmd {
        Cmd::Simulate(args) => run_simulate(args),
        Cmd::Pde(args) => run_pde(args),
        Cmd::Spectral(args) => run_spectral(args),
        Cmd::Compare(args) => run_compare(args),
        Cmd::Couple(args) => run_couple(args),
        Cmd::Oracle(args) => run_oracle(args),
        Cmd::Experiment(args) => run_experiment_cmd(args),
    }
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let mode = if args.torus {
        BoundaryMode::Torus
    } else {
        BoundaryMode::Reservoirs
    };
    let geom = Geometry::new(args.d, args.n, args.transverse, mode)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let params = args.model.params(args.n.max(1))?;
    let profile = Profile::parse(&args.profile).map_err(|e| anyhow::anyhow!("{e}"))?;
    let init = sample_product_measure(&profile, geom, StreamSeed::new(args.seed, 0))
        .map_err(|e| anyhow::anyhow!("{e}"))?;

    let mut counter = EventCounter::default();
    let mut logger = args
        .events
        .as_ref()
        .map(|path| -> Result<EventLogger<BufWriter<File>>> {
            Ok(EventLogger::new(BufWriter::new(
                File::create(path).context("event log")?,
            )))
        })
        .transpose()?;
    let mut ledger_pair = args.ledger_out.as_ref().map(|_| {
        (
            CurrentLedger::new(geom),
            CompensatorTracker::new(&init, params),
        )
    });
    let final_cfg = {
        let mut observers: Vec<&mut dyn Observer> = vec![&mut counter];
        if let Some(logger) = logger.as_mut() {
            observers.push(logger);
        }
        if let Some((ledger, tracker)) = ledger_pair.as_mut() {
            observers.push(ledger);
            observers.push(tracker);
        }
        simulate(
            &init,
            &params,
            args.t_end,
            StreamSeed::new(args.seed, 1),
            &mut observers,
        )?
    };
    if let (Some(path), Some((ledger, tracker))) = (&args.ledger_out, &ledger_pair) {
        std::fs::write(path, ledger_csv(ledger, Some(tracker)))?;
        println!("ledger written to {}", path.display());
    }
    let counts = final_cfg.occupancy_counts();
    println!(
        "t = {}: occupancies [empty, wild, sterile, both] = {:?}",
        args.t_end, counts
    );
    println!(
        "events: {} exchange, {} reaction, {} boundary",
        counter.exchange, counter.reaction, counter.boundary
    );
    if let Some(path) = args.snapshot_out {
        std::fs::write(&path, final_cfg.write_snapshot())?;
        println!("snapshot written to {}", path.display());
    }
    Ok(())
}

fn run_pde(args: PdeArgs) -> Result<()> {
    let times = args.snapshots.first().cloned().unwrap_or_default();
    let grid = PdeGrid::new(1, args.torus, args.h).map_err(|e| anyhow::anyhow!("{e}"))?;
    let params = args.model.params(1)?;
    let profile = Profile::parse(&args.profile).map_err(|e| anyhow::anyhow!("{e}"))?;
    let traj = solve_pde(&profile, grid, &params, &times, grid.cfl_limit())
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    std::fs::create_dir_all(&args.out_dir)?;
    for (k, state) in traj.states.iter().enumerate() {
        let path = args.out_dir.join(format!("pde_t{:.4}.csv", state.t));
        std::fs::write(&path, snapshot_csv(&grid, state))?;
        println!("snapshot {k} (t = {}) -> {}", state.t, path.display());
    }
    println!(
        "steps = {}, max simplex defect = {:.3e}",
        traj.steps, traj.max_simplex_defect
    );
    Ok(())
}

fn run_spectral(args: SpectralArgs) -> Result<()> {
    let params = args.model.params(1)?;
    let profile = Profile::parse(&args.profile).map_err(|e| anyhow::anyhow!("{e}"))?;
    let opts = SpectralOptions {
        m_modes: args.modes,
        ..Default::default()
    };
    let sol =
        duhamel_solve(&profile, &params, args.t_end, &opts).map_err(|e| anyhow::anyhow!("{e}"))?;
    std::fs::create_dir_all(&args.out_dir)?;
    let nodes = (2.0 / args.h).round() as usize;
    let mut csv = String::from("u1,rho1,rho2,rho3\n");
    for j in 0..=nodes {
        let u = -1.0 + j as f64 * args.h;
        let s = sol.sample(u);
        csv.push_str(&format!(
            "{:.12e},{:.12e},{:.12e},{:.12e}\n",
            u, s[0], s[1], s[2]
        ));
    }
    let path = args.out_dir.join(format!("spectral_t{:.4}.csv", args.t_end));
    std::fs::write(&path, csv)?;
    println!(
        "spectral solution at t = {} -> {} (picard sweeps per segment: {:?})",
        args.t_end,
        path.display(),
        sol.picard_iterations
    );
    Ok(())
}

fn run_compare(args: CompareArgs) -> Result<()> {
    let params = args.model.params(1)?;
    let profile = Profile::parse(&args.profile).map_err(|e| anyhow::anyhow!("{e}"))?;
    let report =
        pde_compare(&params, &profile, args.t_end, args.h).map_err(|e| anyhow::anyhow!("{e}"))?;
    println!(
        "sup |FTCS - spectral| at t = {}: {:.3e}",
        args.t_end, report.sup_distance
    );
    println!("pure-heat decay error: {:.3e}", report.heat_decay_err);
    println!("max simplex defect: {:.3e}", report.max_simplex_defect);
    if report.sup_distance > 1e-3 || report.heat_decay_err > 1e-3 {
        bail!("solver cross-validation failed");
    }
    Ok(())
}

fn run_couple(args: CoupleArgs) -> Result<()> {
    let n_grid: Vec<u32> = args
        .n_grid
        .first()
        .cloned()
        .unwrap_or_default()
        .into_iter()
        .map(|x| x as u32)
        .collect();
    let profile = Profile::parse(&args.profile).map_err(|e| anyhow::anyhow!("{e}"))?;
    let rows = couple_decay(
        (args.model.lambda1, args.model.lambda2),
        args.model.r,
        args.model.b.0,
        &n_grid,
        args.t,
        args.replicas,
        args.seed,
        &profile,
    )
    .map_err(|e| anyhow::anyhow!("{e}"))?;
    println!("n,m,t,mean_h,stderr");
    for row in &rows {
        println!(
            "{},{},{},{:.6e},{:.6e}",
            row.n, row.m, row.t, row.mean_h, row.stderr
        );
    }
    let means: Vec<f64> = rows.iter().map(|r| r.mean_h).collect();
    if !means.windows(2).all(|w| w[1] < w[0]) {
        bail!("discrepancy did not decrease over the N grid: {means:?}");
    }
    Ok(())
}

fn run_oracle(args: OracleArgs) -> Result<()> {
    let mut worst: f64 = 0.0;
    println!("lattice,params,tv");
    for (lname, geom, states) in oracle_default_lattices() {
        let init = Configuration::from_states(geom, &states);
        for (pname, params) in oracle_default_params() {
            let tv = oracle_tv(geom, &params, &init, args.t, args.replicas, args.seed)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            println!("{lname},{pname},{tv:.6e}");
            worst = worst.max(tv);
        }
    }
    println!("worst TV: {worst:.6e}");
    if worst >= 0.01 {
        bail!("exactness check failed (TV {worst:.4} >= 0.01)");
    }
    Ok(())
}

fn run_experiment_cmd(args: ExperimentArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.spec)
        .with_context(|| format!("reading {}", args.spec.display()))?;
    let mut spec = ExperimentSpec::parse(&text).map_err(|e| anyhow::anyhow!("{e}"))?;
    if let Some(dir) = args.out_dir {
        spec.out_dir = dir;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    println!("spec {} (sha256 {})", args.spec.display(), spec_hash(&text));
    let outcome = harness::run_experiment(&spec).map_err(|e| anyhow::anyhow!("{e}"))?;
    for file in &outcome.files {
        println!("wrote {}", file.display());
    }
    for message in &outcome.messages {
        eprintln!("assertion: {message}");
    }
    if !outcome.pass {
        bail!("experiment assertions failed");
    }
    println!("all in-run assertions passed");
    Ok(())
}
