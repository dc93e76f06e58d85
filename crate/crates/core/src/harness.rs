//! Configuration-driven experiment runners.
//!
//! Experiments are described by a flat `key = value` text file (no nested
//! structure, diff-friendly provenance). Every emitted CSV carries the
//! full parameter echo and the SHA-256 of the spec text, so any row is
//! reproducible from the file and the base seed alone. Replicas are
//! dispatched to a worker pool and aggregated in replica order; outputs
//! do not depend on the pool size.

use crate::coupling::{discrepancy_total, simulate_coupled, CoupledConfiguration};
use crate::generator;
use crate::kmc::{simulate, Event, Observer};
use crate::lattice::{BoundaryMode, Configuration, Geometry, TransverseBox};
use crate::measure::{
    empirical_pairing, sample_product_measure, CurrentLedger, Profile, TestFunction, TestTriple,
};
use crate::params::ModelParams;
use crate::pde::{reaction_f_raw, snapshot_csv, solve_pde, space_pairing, PdeGrid, PdeTrajectory};
use crate::rng::StreamSeed;
use crate::spectral::{duhamel_solve, SpectralOptions};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config line {line}: {reason}")]
    BadConfig { line: usize, reason: String },
    #[error("missing key {0}")]
    MissingKey(&'static str),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Measure(#[from] crate::measure::MeasureError),
    #[error(transparent)]
    Pde(#[from] crate::pde::PdeError),
    #[error(transparent)]
    Spectral(#[from] crate::spectral::SpectralError),
    #[error(transparent)]
    Sim(#[from] crate::kmc::SimError),
    #[error(transparent)]
    Params(#[from] crate::params::ParamError),
    #[error(transparent)]
    Oracle(#[from] generator::OracleError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    HydroConverge,
    CurrentsLln,
    OracleCheck,
    CoupleDecay,
    PdeCompare,
}

impl ExperimentKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "hydro-converge" => Some(Self::HydroConverge),
            "currents-lln" => Some(Self::CurrentsLln),
            "oracle-check" => Some(Self::OracleCheck),
            "couple-decay" => Some(Self::CoupleDecay),
            "pde-compare" => Some(Self::PdeCompare),
            _ => None,
        }
    }
}

/// Parsed experiment description plus the raw key/value echo.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub d: u8,
    pub lambda1: f64,
    pub lambda2: f64,
    pub r: f64,
    pub b: [f64; 3],
    pub n_grid: Vec<u32>,
    pub replicas: u32,
    pub seed: u64,
    pub profile: String,
    pub test_functions: Vec<String>,
    pub snapshot_times: Vec<f64>,
    pub current_time: f64,
    pub pde_h: f64,
    pub t_end: f64,
    pub out_dir: PathBuf,
    pub raw: Vec<(String, String)>,
    pub hash: String,
}

pub fn spec_hash(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        write!(hex, "{byte:02x}").unwrap();
    }
    hex
}

impl ExperimentSpec {
    /// Parse the flat `key = value` format. Unknown keys are an error;
    /// `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut raw = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(HarnessError::BadConfig {
                line: idx + 1,
                reason: "expected key = value".into(),
            })?;
            raw.push((key.trim().to_string(), value.trim().to_string()));
        }
        let get = |key: &'static str| -> Option<&str> {
            raw.iter()
                .rev()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
        };
        let parse_f64 = |key: &'static str, default: f64| -> Result<f64, HarnessError> {
            match get(key) {
                None => Ok(default),
                Some(v) => v.parse().map_err(|_| HarnessError::InvalidSpec(format!("{key} = {v}"))),
            }
        };
        let kind_str = get("kind").ok_or(HarnessError::MissingKey("kind"))?;
        let kind = ExperimentKind::parse(kind_str)
            .ok_or_else(|| HarnessError::InvalidSpec(format!("kind = {kind_str}")))?;
        let d = parse_f64("d", 1.0)? as u8;
        let lambda1 = parse_f64("lambda1", 2.0)?;
        let lambda2 = parse_f64("lambda2", 1.0)?;
        let r = parse_f64("r", 0.5)?;
        let b = [
            parse_f64("b1", 0.3)?,
            parse_f64("b2", 0.2)?,
            parse_f64("b3", 0.1)?,
        ];
        let list = |key: &'static str, default: &str| -> Result<Vec<f64>, HarnessError> {
            let v = get(key).unwrap_or(default);
            v.split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| HarnessError::InvalidSpec(format!("{key} = {v}")))
        };
        let n_grid: Vec<u32> = list("n_grid", "32,64,128")?
            .into_iter()
            .map(|x| x as u32)
            .collect();
        let replicas = parse_f64("replicas", 64.0)? as u32;
        let seed = get("seed")
            .unwrap_or("20240701")
            .parse()
            .map_err(|_| HarnessError::InvalidSpec("seed".into()))?;
        let profile = get("profile").unwrap_or("parabolic-blend").to_string();
        let test_functions: Vec<String> = get("test_functions")
            .unwrap_or("sine:1,sine:2,sine:3")
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let snapshot_times = list("snapshot_times", "0.05,0.1,0.2")?;
        let current_time = parse_f64("current_time", 0.1)?;
        let pde_h = parse_f64("pde_h", 1.0 / 256.0)?;
        let t_end = parse_f64("t_end", 0.25)?;
        let out_dir = PathBuf::from(get("out_dir").unwrap_or("out"));
        Ok(Self {
            kind,
            d,
            lambda1,
            lambda2,
            r,
            b,
            n_grid,
            replicas,
            seed,
            profile,
            test_functions,
            snapshot_times,
            current_time,
            pde_h,
            t_end,
            out_dir,
            raw,
            hash: spec_hash(text),
        })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(HarnessError::InvalidSpec(
                "n_grid must be strictly increasing".into(),
            ));
        }
        if self.replicas == 0 {
            return Err(HarnessError::InvalidSpec("replicas must be >= 1".into()));
        }
        if self.d != 1 && self.d != 2 {
            return Err(HarnessError::InvalidSpec("d must be 1 or 2".into()));
        }
        self.params(1).validate()?;
        Ok(())
    }

    pub fn params(&self, scale_n: u32) -> ModelParams {
        ModelParams::new(self.lambda1, self.lambda2, self.r, self.b, scale_n)
    }
}

/// Replica stream id: experiments index replicas within each lattice size
/// so streams never collide across the `N` grid.
fn replica_stream(n_index: usize, replica: u32) -> u64 {
    ((n_index as u64) << 32) | replica as u64
}

// ---------------------------------------------------------------------------
// Observers used by the experiment loops
// ---------------------------------------------------------------------------

/// Records empirical pairings against several test triples at fixed times.
pub struct PairingProbe {
    triples: Vec<TestTriple>,
    times: Vec<f64>,
    next: usize,
    /// `values[time_idx][triple_idx]`.
    pub values: Vec<Vec<f64>>,
}

impl PairingProbe {
    pub fn new(triples: Vec<TestTriple>, times: Vec<f64>) -> Self {
        Self {
            triples,
            times,
            next: 0,
            values: Vec::new(),
        }
    }

    fn record(&mut self, cfg: &Configuration, tau: f64) {
        let row = self
            .triples
            .iter()
            .map(|g| empirical_pairing(cfg, g, tau))
            .collect();
        self.values.push(row);
    }
}

impl Observer for PairingProbe {
    fn on_event(&mut self, t: f64, _event: &Event, before: &Configuration) {
        while self.next < self.times.len() && self.times[self.next] < t {
            let tau = self.times[self.next];
            self.record(before, tau);
            self.next += 1;
        }
    }

    fn finalize(&mut self, t_end: f64, final_config: &Configuration) {
        while self.next < self.times.len() && self.times[self.next] <= t_end {
            let tau = self.times[self.next];
            self.record(final_config, tau);
            self.next += 1;
        }
    }
}

/// Maintains the current ledger and records its pairings at fixed times.
pub struct CurrentProbe {
    ledger: CurrentLedger,
    g: TestTriple,
    h: TestTriple,
    times: Vec<f64>,
    next: usize,
    pub w_values: Vec<f64>,
    pub q_values: Vec<f64>,
}

impl CurrentProbe {
    pub fn new(geom: Geometry, g: TestTriple, h: TestTriple, times: Vec<f64>) -> Self {
        Self {
            ledger: CurrentLedger::new(geom),
            g,
            h,
            times,
            next: 0,
            w_values: Vec::new(),
            q_values: Vec::new(),
        }
    }

    fn flush(&mut self, up_to: f64, inclusive: bool) {
        while self.next < self.times.len() {
            let tau = self.times[self.next];
            if tau < up_to || (inclusive && tau <= up_to) {
                self.w_values.push(self.ledger.current_pairing(&self.g, tau));
                self.q_values.push(self.ledger.q_pairing(&self.h, tau));
                self.next += 1;
            } else {
                break;
            }
        }
    }
}

impl Observer for CurrentProbe {
    fn on_event(&mut self, t: f64, event: &Event, before: &Configuration) {
        self.flush(t, false);
        self.ledger
            .apply(event, before)
            .expect("ledger saw an impossible event");
    }

    fn finalize(&mut self, t_end: f64, _final_config: &Configuration) {
        self.flush(t_end, true);
    }
}

// ---------------------------------------------------------------------------
// Hydrodynamic / currents experiment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct HydroSetup {
    pub lambda1: f64,
    pub lambda2: f64,
    pub r: f64,
    pub b: [f64; 3],
    pub n_grid: Vec<u32>,
    pub replicas: u32,
    pub seed: u64,
    pub profile: Profile,
    /// Density test triples compared at `snapshot_times`.
    pub density_tests: Vec<TestTriple>,
    /// e1 vector components paired against the conservative current.
    pub current_test: TestTriple,
    /// Scalars paired against the creation current.
    pub q_test: TestTriple,
    pub snapshot_times: Vec<f64>,
    pub current_time: f64,
    pub pde_h: f64,
}

impl HydroSetup {
    /// The standard desk-scale setting.
    pub fn standard() -> Self {
        let bump = TestFunction::parse("bump:0.8").unwrap();
        Self {
            lambda1: 2.0,
            lambda2: 1.0,
            r: 0.5,
            b: [0.3, 0.2, 0.1],
            n_grid: vec![32, 64, 128],
            replicas: 64,
            seed: 99_2207,
            profile: Profile::default_blend(),
            density_tests: vec![
                crate::measure::single_type_triple(0, TestFunction::parse("sine:1").unwrap()),
                crate::measure::single_type_triple(1, TestFunction::parse("sine:2").unwrap()),
                crate::measure::single_type_triple(2, TestFunction::parse("sine:3").unwrap()),
            ],
            current_test: [bump; 3],
            q_test: [bump; 3],
            snapshot_times: vec![0.05, 0.1, 0.2],
            current_time: 0.1,
            pde_h: 1.0 / 256.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HydroRow {
    pub n: u32,
    pub t: f64,
    pub test_idx: usize,
    pub mean_abs_err: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone)]
pub struct CurrentRow {
    pub n: u32,
    pub w_mean_abs_err: f64,
    pub w_stderr: f64,
    pub q_mean_abs_err: f64,
    pub q_stderr: f64,
}

#[derive(Debug, Clone)]
pub struct HydroReport {
    pub rows: Vec<HydroRow>,
    pub current_rows: Vec<CurrentRow>,
    pub pde_simplex_defect: f64,
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Run the density-convergence and currents experiment in one sweep: for
/// each `N`, `replicas` runs from the product measure of the profile, the
/// empirical pairings compared against the reference solution, and the
/// current pairings compared against the gradient and reaction integrals
/// of the same reference.
pub fn run_hydro(setup: &HydroSetup) -> Result<HydroReport, HarnessError> {
    let t_max = setup
        .snapshot_times
        .iter()
        .chain(std::iter::once(&setup.current_time))
        .cloned()
        .fold(0.0, f64::max);

    // Reference solution on a fine time mesh that contains the snapshot
    // times and the current horizon.
    let mut times: Vec<f64> = (0..=400).map(|k| t_max * k as f64 / 400.0).collect();
    times.extend_from_slice(&setup.snapshot_times);
    times.push(setup.current_time);
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let grid = PdeGrid::strip_1d(setup.pde_h)?;
    let params_pde = ModelParams::new(setup.lambda1, setup.lambda2, setup.r, setup.b, 1);
    let traj = solve_pde(&setup.profile, grid, &params_pde, &times, grid.cfl_limit())?;

    let find_state = |t: f64| -> &crate::pde::PdeState {
        traj.states
            .iter()
            .min_by(|a, b| {
                (a.t - t).abs().partial_cmp(&(b.t - t).abs()).unwrap()
            })
            .unwrap()
    };

    // Density targets per (snapshot, test).
    let mut density_targets = Vec::new();
    for &t in &setup.snapshot_times {
        let state = find_state(t);
        let row: Vec<f64> = setup
            .density_tests
            .iter()
            .map(|g| space_pairing(&grid, state, g, t))
            .collect();
        density_targets.push(row);
    }

    // Current targets: time integrals of <-grad rho, G> and <F(rho), H>
    // over [0, current_time], trapezoid over the stored mesh, centered
    // differences in space.
    let e1 = grid.e1_nodes();
    let grad_integrand = |state: &crate::pde::PdeState, t: f64| -> f64 {
        let mut acc = 0.0;
        for j in 1..e1 - 1 {
            let u = grid.u1(j);
            for c in 0..3 {
                let drho = (state.rho[c][j + 1] - state.rho[c][j - 1]) / (2.0 * setup.pde_h);
                acc += -drho * setup.current_test[c].eval(t, u) * setup.pde_h;
            }
        }
        acc
    };
    let reaction_integrand = |state: &crate::pde::PdeState, t: f64| -> f64 {
        let mut acc = 0.0;
        for j in 0..e1 {
            let u = grid.u1(j);
            let w = grid.quad_weight(j);
            let rho = [state.rho[0][j], state.rho[1][j], state.rho[2][j]];
            let f = reaction_f_raw(rho, setup.lambda1, setup.lambda2, setup.r, 1);
            for c in 0..3 {
                acc += w * f[c] * setup.q_test[c].eval(t, u);
            }
        }
        acc
    };
    let mut target_w = 0.0;
    let mut target_q = 0.0;
    {
        let upto: Vec<&crate::pde::PdeState> = traj
            .states
            .iter()
            .filter(|s| s.t <= setup.current_time + 1e-12)
            .collect();
        for pair in upto.windows(2) {
            let dt = pair[1].t - pair[0].t;
            target_w += 0.5
                * dt
                * (grad_integrand(pair[0], pair[0].t) + grad_integrand(pair[1], pair[1].t));
            target_q += 0.5
                * dt
                * (reaction_integrand(pair[0], pair[0].t)
                    + reaction_integrand(pair[1], pair[1].t));
        }
    }

    struct ReplicaOut {
        density_errs: Vec<Vec<f64>>, // [snapshot][test]
        w_err: f64,
        q_err: f64,
    }

    let mut rows = Vec::new();
    let mut current_rows = Vec::new();
    for (n_idx, &n) in setup.n_grid.iter().enumerate() {
        let geom = Geometry::strip_1d(n);
        let params = ModelParams::new(setup.lambda1, setup.lambda2, setup.r, setup.b, n);
        let outs: Vec<ReplicaOut> = (0..setup.replicas)
            .into_par_iter()
            .map(|replica| {
                let seed = StreamSeed::new(setup.seed, replica_stream(n_idx, replica));
                let init = sample_product_measure(&setup.profile, geom, seed)
                    .expect("profile outside the simplex");
                let mut probe =
                    PairingProbe::new(setup.density_tests.clone(), setup.snapshot_times.clone());
                let mut currents = CurrentProbe::new(
                    geom,
                    setup.current_test,
                    setup.q_test,
                    vec![setup.current_time],
                );
                // Dynamics stream: offset the sampling stream to keep the
                // two independent.
                let dyn_seed = StreamSeed::new(
                    setup.seed ^ 0x9e37_79b9_7f4a_7c15,
                    replica_stream(n_idx, replica),
                );
                simulate(
                    &init,
                    &params,
                    t_max,
                    dyn_seed,
                    &mut [&mut probe, &mut currents],
                )
                .expect("simulation failed");
                let density_errs: Vec<Vec<f64>> = probe
                    .values
                    .iter()
                    .zip(&density_targets)
                    .map(|(vals, targets)| {
                        vals.iter()
                            .zip(targets)
                            .map(|(v, t)| (v - t).abs())
                            .collect()
                    })
                    .collect();
                ReplicaOut {
                    density_errs,
                    w_err: (currents.w_values[0] - target_w).abs(),
                    q_err: (currents.q_values[0] - target_q).abs(),
                }
            })
            .collect();

        for (t_idx, &t) in setup.snapshot_times.iter().enumerate() {
            for test_idx in 0..setup.density_tests.len() {
                let errs: Vec<f64> = outs
                    .iter()
                    .map(|o| o.density_errs[t_idx][test_idx])
                    .collect();
                let (mean, stderr) = mean_stderr(&errs);
                rows.push(HydroRow {
                    n,
                    t,
                    test_idx,
                    mean_abs_err: mean,
                    stderr,
                });
            }
        }
        let w_errs: Vec<f64> = outs.iter().map(|o| o.w_err).collect();
        let q_errs: Vec<f64> = outs.iter().map(|o| o.q_err).collect();
        let (w_mean, w_stderr) = mean_stderr(&w_errs);
        let (q_mean, q_stderr) = mean_stderr(&q_errs);
        current_rows.push(CurrentRow {
            n,
            w_mean_abs_err: w_mean,
            w_stderr,
            q_mean_abs_err: q_mean,
            q_stderr,
        });
    }

    Ok(HydroReport {
        rows,
        current_rows,
        pde_simplex_defect: traj.max_simplex_defect,
    })
}

// ---------------------------------------------------------------------------
// Oracle check
// ---------------------------------------------------------------------------

/// Total variation between the empirical time-`t` law over `replicas`
/// runs and the uniformization transient, both started from `init`.
pub fn oracle_tv(
    geom: Geometry,
    params: &ModelParams,
    init: &Configuration,
    t: f64,
    replicas: u64,
    base_seed: u64,
) -> Result<f64, HarnessError> {
    let gen = generator::build_generator(geom, params)?;
    let mut delta = vec![0.0; gen.dim()];
    delta[generator::index_of_config(init)] = 1.0;
    let expected = generator::transient_distribution(&gen, &delta, t);

    let counts = (0..replicas)
        .into_par_iter()
        .fold(
            || vec![0u64; gen.dim()],
            |mut acc, rep| {
                let out = simulate(init, params, t, StreamSeed::replica(base_seed, rep), &mut [])
                    .expect("simulation failed");
                acc[generator::index_of_config(&out)] += 1;
                acc
            },
        )
        .reduce(
            || vec![0u64; gen.dim()],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    let empirical: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 / replicas as f64)
        .collect();
    Ok(generator::total_variation(&empirical, &expected))
}

/// The tiny lattices (at most 3 sites) and the parameter grid used by the
/// exactness checks.
pub fn oracle_default_lattices() -> Vec<(String, Geometry, Vec<crate::lattice::State>)> {
    vec![
        ("strip-1d-1site".into(), Geometry::strip_1d(0), vec![1]),
        ("strip-1d-3site".into(), Geometry::strip_1d(1), vec![1, 0, 2]),
        ("torus-1d-1site".into(), Geometry::torus_1d(0), vec![3]),
        ("torus-1d-3site".into(), Geometry::torus_1d(1), vec![2, 1, 0]),
        (
            "strip-2d-2site".into(),
            Geometry::new(2, 0, 2, BoundaryMode::Reservoirs).unwrap(),
            vec![1, 0],
        ),
        (
            "strip-2d-3site".into(),
            Geometry::new(2, 0, 3, BoundaryMode::Reservoirs).unwrap(),
            vec![1, 2, 3],
        ),
        (
            "torus-2d-2site".into(),
            Geometry::new(2, 0, 2, BoundaryMode::Torus).unwrap(),
            vec![3, 0],
        ),
        (
            "torus-2d-3site".into(),
            Geometry::new(2, 0, 3, BoundaryMode::Torus).unwrap(),
            vec![0, 3, 2],
        ),
    ]
}

/// Parameter settings covering the edge cases (fast `lambda2`, `r = 0`,
/// single-channel runs).
pub fn oracle_default_params() -> Vec<(String, ModelParams)> {
    let mut out = Vec::new();
    out.push((
        "standard".into(),
        ModelParams::new(2.0, 1.0, 0.5, [0.3, 0.2, 0.1], 1),
    ));
    out.push((
        "fast-lambda2".into(),
        ModelParams::new(1.0, 3.0, 0.7, [0.2, 0.3, 0.2], 1),
    ));
    out.push((
        "r-zero".into(),
        ModelParams::new(2.0, 1.0, 0.0, [0.3, 0.2, 0.1], 1),
    ));
    let mut no_exchange = ModelParams::new(1.5, 0.5, 1.0, [0.25, 0.25, 0.25], 1);
    no_exchange.exchange_on = false;
    out.push(("no-exchange".into(), no_exchange));
    let mut no_boundary = ModelParams::new(2.0, 2.0, 0.25, [0.3, 0.2, 0.1], 1);
    no_boundary.boundary_on = false;
    out.push(("no-boundary".into(), no_boundary));
    let mut no_reaction = ModelParams::new(2.0, 1.0, 0.5, [0.25, 0.25, 0.25], 1);
    no_reaction.reaction_on = false;
    out.push(("no-reaction".into(), no_reaction));
    out
}

// ---------------------------------------------------------------------------
// Coupling decay
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DecayRow {
    pub n: u32,
    pub m: u32,
    pub t: f64,
    pub mean_h: f64,
    pub stderr: f64,
}

/// Mean total discrepancy of the coupled pair at time `t` over the `N`
/// grid, with `M = N^(1 + 1/d)` and the transverse length `2M + 2` (one
/// column outside the box seeds the decoupling). Runs in d = 2.
#[allow(clippy::too_many_arguments)]
pub fn couple_decay(
    lambda: (f64, f64),
    r: f64,
    b: [f64; 3],
    n_grid: &[u32],
    t: f64,
    replicas: u32,
    base_seed: u64,
    profile: &Profile,
) -> Result<Vec<DecayRow>, HarnessError> {
    let mut rows = Vec::new();
    for (n_idx, &n) in n_grid.iter().enumerate() {
        let box_m = TransverseBox::scaling(n, 2);
        let transverse = 2 * box_m.radius + 2;
        let geom = Geometry::new(2, n, transverse, BoundaryMode::Reservoirs)
            .expect("geometry");
        let params = ModelParams::new(lambda.0, lambda.1, r, b, n);
        let hs: Vec<f64> = (0..replicas)
            .into_par_iter()
            .map(|replica| {
                let seed = StreamSeed::new(base_seed, replica_stream(n_idx, replica));
                let init = sample_product_measure(profile, geom, seed)
                    .expect("profile outside the simplex");
                let pair = CoupledConfiguration::diagonal(init, box_m);
                let dyn_seed = StreamSeed::new(
                    base_seed ^ 0x9e37_79b9_7f4a_7c15,
                    replica_stream(n_idx, replica),
                );
                let out = simulate_coupled(&pair, &params, t, dyn_seed, &mut [])
                    .expect("coupled simulation failed");
                discrepancy_total(&out)
            })
            .collect();
        let (mean, stderr) = mean_stderr(&hs);
        rows.push(DecayRow {
            n,
            m: box_m.radius,
            t,
            mean_h: mean,
            stderr,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// PDE cross-validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PdeCompareReport {
    /// Sup distance between the finite-difference and spectral solutions.
    pub sup_distance: f64,
    /// | FTCS sup-norm decay of the first Dirichlet mode - exact |.
    pub heat_decay_err: f64,
    pub max_simplex_defect: f64,
    pub spectral_picard_iterations: Vec<u32>,
}

/// Cross-validate the two solvers on the full reaction system, and check
/// the pure-heat decay rate of the finite-difference scheme.
pub fn pde_compare(
    params: &ModelParams,
    profile: &Profile,
    t: f64,
    h: f64,
) -> Result<PdeCompareReport, HarnessError> {
    let grid = PdeGrid::strip_1d(h)?;
    let traj = solve_pde(profile, grid, params, &[t], grid.cfl_limit())?;
    let state = traj.states.last().unwrap();
    let spectral = duhamel_solve(profile, params, t, &SpectralOptions::default())?;
    let mut sup = 0.0f64;
    for j in 0..grid.e1_nodes() {
        let s = spectral.sample(grid.u1(j));
        for c in 0..3 {
            sup = sup.max((state.rho[c][j] - s[c]).abs());
        }
    }

    // Pure heat: first Dirichlet mode under zero baths.
    let mut heat_params = ModelParams::new(0.0, 0.0, 0.0, [0.0, 0.0, 0.0], 1);
    heat_params.reaction_on = false;
    let heat_grid = PdeGrid::strip_1d(1.0 / 256.0)?;
    let mut solver = crate::pde::PdeSolver::new(
        &Profile::ParabolicBlend {
            base: [0.0; 3],
            amp: [0.0; 3],
        },
        heat_grid,
        heat_params,
    )?;
    for j in 0..heat_grid.e1_nodes() {
        solver.rho[0][j] = crate::measure::Shape::SineMode(1).eval(heat_grid.u1(j));
    }
    let t_heat = 0.1;
    solver.run_to(t_heat, heat_grid.cfl_limit())?;
    let sup_heat = solver.rho[0].iter().cloned().fold(0.0, f64::max);
    let alpha1 = std::f64::consts::PI * std::f64::consts::PI / 4.0;
    let heat_decay_err = (sup_heat - (-alpha1 * t_heat).exp()).abs();

    Ok(PdeCompareReport {
        sup_distance: sup,
        heat_decay_err,
        max_simplex_defect: traj.max_simplex_defect,
        spectral_picard_iterations: spectral.picard_iterations,
    })
}

// ---------------------------------------------------------------------------
// File emission and the top-level driver
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub pass: bool,
    pub messages: Vec<String>,
    pub files: Vec<PathBuf>,
}

fn csv_header(spec: &ExperimentSpec) -> String {
    let mut out = String::new();
    for (k, v) in &spec.raw {
        writeln!(out, "# {k} = {v}").unwrap();
    }
    writeln!(out, "# spec_sha256 = {}", spec.hash).unwrap();
    writeln!(out, "# base_seed = {}", spec.seed).unwrap();
    out
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn monotone_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

/// Run an experiment from its parsed spec; emits CSV reports into the
/// spec's output directory and returns the in-run assertion verdict.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome, HarnessError> {
    spec.validate()?;
    let mut messages = Vec::new();
    let mut files = Vec::new();
    let mut pass = true;
    match spec.kind {
        ExperimentKind::HydroConverge | ExperimentKind::CurrentsLln => {
            let mut setup = HydroSetup::standard();
            setup.lambda1 = spec.lambda1;
            setup.lambda2 = spec.lambda2;
            setup.r = spec.r;
            setup.b = spec.b;
            setup.n_grid = spec.n_grid.clone();
            setup.replicas = spec.replicas;
            setup.seed = spec.seed;
            setup.profile = Profile::parse(&spec.profile)?;
            setup.snapshot_times = spec.snapshot_times.clone();
            setup.current_time = spec.current_time;
            setup.pde_h = spec.pde_h;
            if spec.kind == ExperimentKind::HydroConverge {
                let parsed: Result<Vec<TestFunction>, _> = spec
                    .test_functions
                    .iter()
                    .map(|s| TestFunction::parse(s))
                    .collect();
                setup.density_tests = parsed?
                    .into_iter()
                    .enumerate()
                    .map(|(i, f)| crate::measure::single_type_triple(i % 3, f))
                    .collect();
            }
            let report = run_hydro(&setup)?;

            let mut csv = csv_header(spec);
            csv.push_str("n,t,test_idx,mean_abs_err,stderr\n");
            for row in &report.rows {
                writeln!(
                    csv,
                    "{},{:.6e},{},{:.10e},{:.10e}",
                    row.n, row.t, row.test_idx, row.mean_abs_err, row.stderr
                )
                .unwrap();
            }
            files.push(write_file(&spec.out_dir, "hydro_convergence.csv", &csv)?);

            let mut ccsv = csv_header(spec);
            ccsv.push_str("n,w_mean_abs_err,w_stderr,q_mean_abs_err,q_stderr\n");
            for row in &report.current_rows {
                writeln!(
                    ccsv,
                    "{},{:.10e},{:.10e},{:.10e},{:.10e}",
                    row.n, row.w_mean_abs_err, row.w_stderr, row.q_mean_abs_err, row.q_stderr
                )
                .unwrap();
            }
            files.push(write_file(&spec.out_dir, "currents_lln.csv", &ccsv)?);

            if spec.kind == ExperimentKind::HydroConverge {
                for (t_idx, &t) in setup.snapshot_times.iter().enumerate() {
                    for test_idx in 0..setup.density_tests.len() {
                        let series: Vec<f64> = setup
                            .n_grid
                            .iter()
                            .map(|&n| {
                                report
                                    .rows
                                    .iter()
                                    .find(|r| r.n == n && r.test_idx == test_idx && r.t == t)
                                    .unwrap()
                                    .mean_abs_err
                            })
                            .collect();
                        if !monotone_decreasing(&series) {
                            pass = false;
                            messages.push(format!(
                                "density error not decreasing at t index {t_idx}, test {test_idx}: {series:?}"
                            ));
                        }
                    }
                }
            } else {
                let w: Vec<f64> = report.current_rows.iter().map(|r| r.w_mean_abs_err).collect();
                let q: Vec<f64> = report.current_rows.iter().map(|r| r.q_mean_abs_err).collect();
                if !monotone_decreasing(&w) {
                    pass = false;
                    messages.push(format!("W error not decreasing: {w:?}"));
                }
                if !monotone_decreasing(&q) {
                    pass = false;
                    messages.push(format!("Q error not decreasing: {q:?}"));
                }
            }
        }
        ExperimentKind::OracleCheck => {
            let mut csv = csv_header(spec);
            csv.push_str("lattice,params,tv\n");
            for (lname, geom, states) in oracle_default_lattices() {
                let init = Configuration::from_states(geom, &states);
                for (pname, params) in oracle_default_params() {
                    let tv = oracle_tv(geom, &params, &init, 0.5, spec.replicas as u64, spec.seed)?;
                    writeln!(csv, "{lname},{pname},{tv:.10e}").unwrap();
                    if tv >= 0.01 {
                        pass = false;
                        messages.push(format!("{lname}/{pname}: TV {tv:.4}"));
                    }
                }
            }
            files.push(write_file(&spec.out_dir, "oracle_check.csv", &csv)?);
        }
        ExperimentKind::CoupleDecay => {
            let profile = Profile::parse(&spec.profile)?;
            let rows = couple_decay(
                (spec.lambda1, spec.lambda2),
                spec.r,
                spec.b,
                &spec.n_grid,
                spec.current_time,
                spec.replicas,
                spec.seed,
                &profile,
            )?;
            let mut csv = csv_header(spec);
            csv.push_str("n,m,t,mean_h,stderr\n");
            for row in &rows {
                writeln!(
                    csv,
                    "{},{},{:.6e},{:.10e},{:.10e}",
                    row.n, row.m, row.t, row.mean_h, row.stderr
                )
                .unwrap();
            }
            files.push(write_file(&spec.out_dir, "couple_decay.csv", &csv)?);
            let means: Vec<f64> = rows.iter().map(|r| r.mean_h).collect();
            if !monotone_decreasing(&means) {
                pass = false;
                messages.push(format!("discrepancy not decreasing: {means:?}"));
            }
        }
        ExperimentKind::PdeCompare => {
            let params = spec.params(1);
            let profile = Profile::parse(&spec.profile)?;
            let report = pde_compare(&params, &profile, spec.t_end, spec.pde_h)?;
            let mut csv = csv_header(spec);
            csv.push_str("sup_distance,heat_decay_err,max_simplex_defect\n");
            writeln!(
                csv,
                "{:.10e},{:.10e},{:.10e}",
                report.sup_distance, report.heat_decay_err, report.max_simplex_defect
            )
            .unwrap();
            files.push(write_file(&spec.out_dir, "pde_compare.csv", &csv)?);
            if report.sup_distance > 1e-3 {
                pass = false;
                messages.push(format!("solver disagreement {:.3e}", report.sup_distance));
            }
            if report.heat_decay_err > 1e-3 {
                pass = false;
                messages.push(format!("heat decay off by {:.3e}", report.heat_decay_err));
            }
        }
    }
    Ok(ExperimentOutcome {
        pass,
        messages,
        files,
    })
}

/// Export one reference-solution snapshot (CLI `pde` subcommand).
pub fn pde_snapshot_file(
    spec: &ExperimentSpec,
    traj: &PdeTrajectory,
    which: usize,
) -> Result<PathBuf, HarnessError> {
    let body = snapshot_csv(&traj.grid, &traj.states[which]);
    let mut contents = csv_header(spec);
    contents.push_str(&body);
    write_file(
        &spec.out_dir,
        &format!("pde_snapshot_{which}.csv"),
        &contents,
    )
}
