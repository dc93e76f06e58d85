//! Acceptance suite. One test per criterion (the hydrodynamic and
//! currents criteria share their simulation sweep), each printing a
//! PASS/FAIL line; run with `--nocapture` to see them.

use std::collections::BTreeMap;
use std::time::Instant;

use num_rational::Ratio;
use num_traits::{One, Zero};
use rayon::prelude::*;

use stircp_core::coupling::{
    coupled_boundary_moves, coupled_reaction_moves, right_only_reaction_moves, simulate_coupled,
    CoupledConfiguration,
};
use stircp_core::generator::{
    build_generator, build_generator_in_box, index_of_config, total_variation,
    transient_distribution,
};
use stircp_core::harness::{couple_decay, oracle_default_lattices, oracle_default_params, oracle_tv, pde_compare, run_hydro, HydroSetup};
use stircp_core::kmc::{simulate, Event, Observer};
use stircp_core::lattice::{BoundaryMode, Configuration, Geometry, State, TransverseBox};
use stircp_core::measure::{
    sample_product_measure, CompensatorTracker, CurrentLedger, Profile, Shape, TestFunction,
};
use stircp_core::params::ModelParams;
use stircp_core::pde::{solve_pde, weak_residual, PdeGrid, SOLVER_SIMPLEX_TOL};
use stircp_core::rates;
use stircp_core::rng::StreamSeed;

fn standard_params(scale_n: u32) -> ModelParams {
    ModelParams::new(2.0, 1.0, 0.5, [0.3, 0.2, 0.1], scale_n)
}

fn report(criterion: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("acceptance criterion {criterion:2} ({name}): {verdict} — {detail}");
    assert!(pass, "criterion {criterion} ({name}) failed: {detail}");
}

// ---------------------------------------------------------------------------
// 1. Exact-oracle equivalence
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_exact_oracle_equivalence() {
    let start = Instant::now();
    let replicas = 1_000_000u64;
    let mut worst: f64 = 0.0;
    let mut combos = 0u32;
    for (lname, geom, states) in oracle_default_lattices() {
        let init = Configuration::from_states(geom, &states);
        for (pname, params) in oracle_default_params() {
            let tv = oracle_tv(geom, &params, &init, 0.5, replicas, 0xACC1)
                .expect("oracle comparison failed");
            assert!(
                tv < 0.01,
                "TV {tv:.4} for {lname}/{pname} at {replicas} replicas"
            );
            worst = worst.max(tv);
            combos += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        1,
        "exact-oracle equivalence",
        worst < 0.01 && elapsed < 600.0,
        &format!(
            "{combos} lattice/parameter combos at 10^6 replicas, worst TV {worst:.2e}, {elapsed:.0} s"
        ),
    );
}

// ---------------------------------------------------------------------------
// 2. Continuity bookkeeping
// ---------------------------------------------------------------------------

struct ContinuityChecker {
    init: Configuration,
    shadow: Configuration,
    ledger: CurrentLedger,
    events: u64,
    worst_defect: i64,
}

impl ContinuityChecker {
    fn new(init: &Configuration) -> Self {
        Self {
            init: init.clone(),
            shadow: init.clone(),
            ledger: CurrentLedger::new(*init.geometry()),
            events: 0,
            worst_defect: 0,
        }
    }
}

impl Observer for ContinuityChecker {
    fn on_event(&mut self, _t: f64, event: &Event, before: &Configuration) {
        self.ledger
            .apply(event, before)
            .expect("inconsistent event");
        match *event {
            Event::Exchange { tail, head, .. } => {
                self.shadow.swap(tail, head);
                for site in [tail, head] {
                    self.worst_defect = self.worst_defect.max(
                        self.ledger
                            .continuity_defect_at(site, &self.init, &self.shadow),
                    );
                }
            }
            Event::Reaction { site, to, .. } | Event::Boundary { site, to, .. } => {
                self.shadow.set(site, to);
                self.worst_defect = self.worst_defect.max(
                    self.ledger
                        .continuity_defect_at(site, &self.init, &self.shadow),
                );
            }
        }
        self.events += 1;
    }

    fn finalize(&mut self, _t_end: f64, final_config: &Configuration) {
        assert!(self.shadow == *final_config, "shadow drifted");
        self.worst_defect = self
            .worst_defect
            .max(self.ledger.continuity_defect(&self.init, final_config));
    }
}

#[test]
fn criterion_02_continuity_bookkeeping() {
    let geom = Geometry::new(2, 8, 16, BoundaryMode::Reservoirs).unwrap();
    let params = standard_params(8);
    let init = sample_product_measure(&Profile::default_blend(), geom, StreamSeed::new(0xC2, 0))
        .unwrap();
    let mut checker = ContinuityChecker::new(&init);
    simulate(&init, &params, 460.0, StreamSeed::new(0xC2, 1), &mut [&mut checker]).unwrap();
    report(
        2,
        "continuity bookkeeping",
        checker.events >= 10_000_000 && checker.worst_defect == 0,
        &format!(
            "{} events, worst integer defect {}",
            checker.events, checker.worst_defect
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. Martingale tests
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_martingale_tests() {
    // Smallest lattice with a bond: two sites joined by the transverse
    // pair of bonds, both on the reservoir boundary.
    let geom = Geometry::new(2, 0, 2, BoundaryMode::Reservoirs).unwrap();
    let params = standard_params(1);
    let init = Configuration::from_states(geom, &[1, 0]);
    let replicas = 100_000u64;
    let t_end = 0.5;

    let n_bonds = geom.bonds().len();
    let n_sites = geom.site_count();
    // Per replica: (W - comp, qvar) per bond/type and (Q - comp, qvar)
    // per site/type, flattened.
    let per_replica: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|rep| {
            let mut ledger = CurrentLedger::new(geom);
            let mut tracker = CompensatorTracker::new(&init, params);
            simulate(
                &init,
                &params,
                t_end,
                StreamSeed::replica(0x3A57, rep),
                &mut [&mut ledger, &mut tracker],
            )
            .unwrap();
            let mut row = Vec::with_capacity((n_bonds + n_sites) * 6);
            for b in 0..n_bonds {
                for i in 0..3 {
                    row.push(ledger.w[b][i] as f64 - tracker.w_comp[b][i]);
                    row.push(tracker.w_qvar[b][i]);
                }
            }
            for s in 0..n_sites {
                for i in 0..3 {
                    row.push(ledger.q_bulk[s][i] as f64 - tracker.q_comp[s][i]);
                    row.push(tracker.q_qvar[s][i]);
                }
            }
            row
        })
        .collect();

    let width = (n_bonds + n_sites) * 6;
    let mut sums = vec![0.0f64; width];
    for row in &per_replica {
        for (acc, v) in sums.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let r = replicas as f64;
    let mut worst_sigma: f64 = 0.0;
    for k in 0..width / 2 {
        let mean_dev = sums[2 * k] / r;
        let mean_qvar = sums[2 * k + 1] / r;
        if mean_qvar == 0.0 {
            assert_eq!(mean_dev, 0.0, "quiet martingale {k} has nonzero mean");
            continue;
        }
        let se = (mean_qvar / r).sqrt();
        worst_sigma = worst_sigma.max(mean_dev.abs() / se);
    }
    report(
        3,
        "martingale tests",
        worst_sigma < 3.0,
        &format!(
            "{} tracked martingales over {replicas} replicas, worst |mean|/SE = {worst_sigma:.2}",
            width / 2
        ),
    );
}

// ---------------------------------------------------------------------------
// 4 + 5. Hydrodynamic convergence and currents LLN
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_and_05_hydro_and_currents() {
    let start = Instant::now();
    let setup = HydroSetup::standard();
    let reportn = run_hydro(&setup).expect("hydro sweep failed");

    // Criterion 4: per (snapshot, test function) the mean error decreases
    // over the N grid and is below 0.05 at N = 128.
    let mut hydro_pass = true;
    let mut hydro_detail = String::new();
    for &t in &setup.snapshot_times {
        for test_idx in 0..setup.density_tests.len() {
            let series: Vec<f64> = setup
                .n_grid
                .iter()
                .map(|&n| {
                    reportn
                        .rows
                        .iter()
                        .find(|row| row.n == n && row.t == t && row.test_idx == test_idx)
                        .unwrap()
                        .mean_abs_err
                })
                .collect();
            let monotone = series.windows(2).all(|w| w[1] < w[0]);
            let small_at_finest = *series.last().unwrap() < 0.05;
            if !monotone || !small_at_finest {
                hydro_pass = false;
                hydro_detail = format!("t = {t}, test {test_idx}: {series:?}");
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let finest: Vec<f64> = reportn
        .rows
        .iter()
        .filter(|row| row.n == 128)
        .map(|row| row.mean_abs_err)
        .collect();
    let worst_finest = finest.iter().cloned().fold(0.0, f64::max);
    report(
        4,
        "hydrodynamic convergence",
        hydro_pass && elapsed < 3600.0,
        &if hydro_pass {
            format!(
                "9 series monotone in N, worst N=128 error {worst_finest:.3} < 0.05, {elapsed:.0} s"
            )
        } else {
            hydro_detail
        },
    );

    // Criterion 5: the current errors decrease over the same grid.
    let w: Vec<f64> = reportn.current_rows.iter().map(|r| r.w_mean_abs_err).collect();
    let q: Vec<f64> = reportn.current_rows.iter().map(|r| r.q_mean_abs_err).collect();
    let w_ok = w.windows(2).all(|p| p[1] < p[0]);
    let q_ok = q.windows(2).all(|p| p[1] < p[0]);
    report(
        5,
        "currents law of large numbers",
        w_ok && q_ok,
        &format!("W errors {w:?}, Q errors {q:?}"),
    );
}

// ---------------------------------------------------------------------------
// 6. PDE cross-validation
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_pde_cross_validation() {
    let params = standard_params(1);
    let cmp = pde_compare(&params, &Profile::default_blend(), 0.25, 1.0 / 128.0)
        .expect("comparison failed");
    report(
        6,
        "PDE cross-validation",
        cmp.sup_distance <= 1e-3 && cmp.heat_decay_err <= 1e-3,
        &format!(
            "sup |FTCS - spectral| = {:.2e} at t = 0.25 (h = 1/128), heat-mode decay error {:.2e}",
            cmp.sup_distance, cmp.heat_decay_err
        ),
    );
}

// ---------------------------------------------------------------------------
// 7. Weak-form residual
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_weak_form_residual() {
    let params = standard_params(1);
    let times: Vec<f64> = (0..=100).map(|k| 0.25 * k as f64 / 100.0).collect();
    let triples = [
        [
            TestFunction::of(Shape::SineMode(1)),
            TestFunction::of(Shape::SineMode(2)),
            TestFunction::of(Shape::SineMode(3)),
        ],
        [
            TestFunction {
                shape: Shape::Parabola,
                time: stircp_core::measure::TimeFactor::ExpDecay(1.0),
            },
            TestFunction {
                shape: Shape::SineMode(1),
                time: stircp_core::measure::TimeFactor::ExpDecay(1.0),
            },
            TestFunction {
                shape: Shape::Parabola,
                time: stircp_core::measure::TimeFactor::ExpDecay(1.0),
            },
        ],
        [
            TestFunction::of(Shape::Bump { radius: 0.9 }),
            TestFunction::of(Shape::Parabola),
            TestFunction::of(Shape::SineMode(2)),
        ],
    ];
    let mut all_series = Vec::new();
    let mut pass = true;
    for (gi, g) in triples.iter().enumerate() {
        let mut series = Vec::new();
        for h in [1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0] {
            let grid = PdeGrid::strip_1d(h).unwrap();
            let traj = solve_pde(&Profile::default_blend(), grid, &params, &times, grid.cfl_limit())
                .expect("solve failed");
            series.push(weak_residual(&traj, g, &params).expect("residual failed"));
        }
        if !series.windows(2).all(|w| w[1] < w[0]) {
            pass = false;
        }
        all_series.push(format!(
            "G{gi}: [{:.2e}, {:.2e}, {:.2e}]",
            series[0], series[1], series[2]
        ));
    }
    report(
        7,
        "weak-form residual refinement",
        pass,
        &all_series.join("; "),
    );
}

// ---------------------------------------------------------------------------
// 8. Coupling marginal fidelity
// ---------------------------------------------------------------------------

type Q = Ratio<i64>;

fn q(n: i64, d: i64) -> Q {
    Ratio::new(n, d)
}

/// Rate map keyed by target state.
fn rate_map(entries: impl IntoIterator<Item = (State, Q)>) -> BTreeMap<State, Q> {
    let mut map = BTreeMap::new();
    for (state, rate) in entries {
        if !rate.is_zero() {
            *map.entry(state).or_insert_with(Q::zero) += rate;
        }
    }
    map.retain(|_, v| !v.is_zero());
    map
}

fn beta_of(states: &[State], lambda1: Q, lambda2: Q) -> Q {
    rates::beta_from_states(states.iter().copied(), &lambda1, &lambda2)
}

#[test]
fn criterion_08_coupling_marginal_fidelity() {
    // Part (a): exhaustive rational projection check on 3-site lattices.
    let lambda1 = q(2, 1);
    let lambda2 = q(1, 2);
    let r = q(1, 3);
    let weights = [q(2, 5), q(3, 10), q(1, 5), q(1, 10)];

    let lattices: Vec<(Geometry, TransverseBox)> = vec![
        (Geometry::strip_1d(1), TransverseBox::new(1)),
        (Geometry::torus_1d(1), TransverseBox::new(1)),
        (
            Geometry::new(2, 0, 3, BoundaryMode::Reservoirs).unwrap(),
            TransverseBox::new(0),
        ),
    ];

    let mut cases = 0u64;
    for (geom, bound_box) in &lattices {
        for site in 0..geom.site_count() {
            let nbrs = geom.neighbors(site);
            let m = nbrs.len();
            let in_box = bound_box.contains(geom, site);
            let assignments = 4usize.pow(m as u32);
            for ls in 0..4u8 {
                for rs in 0..4u8 {
                    for left_asgn in 0..assignments {
                        for right_asgn in 0..assignments {
                            let decode = |mut a: usize| -> Vec<State> {
                                (0..m)
                                    .map(|_| {
                                        let s = (a % 4) as State;
                                        a /= 4;
                                        s
                                    })
                                    .collect()
                            };
                            let left_nb = decode(left_asgn);
                            let right_nb = decode(right_asgn);
                            let beta_left_box = beta_of(
                                &left_nb
                                    .iter()
                                    .zip(nbrs.iter())
                                    .filter(|(_, &n)| bound_box.contains(geom, n))
                                    .map(|(&s, _)| s)
                                    .collect::<Vec<_>>(),
                                lambda1,
                                lambda2,
                            );
                            let right_in: Vec<State> = right_nb
                                .iter()
                                .zip(nbrs.iter())
                                .filter(|(_, &n)| bound_box.contains(geom, n))
                                .map(|(&s, _)| s)
                                .collect();
                            let right_out: Vec<State> = right_nb
                                .iter()
                                .zip(nbrs.iter())
                                .filter(|(_, &n)| !bound_box.contains(geom, n))
                                .map(|(&s, _)| s)
                                .collect();
                            let beta_right_in = beta_of(&right_in, lambda1, lambda2);
                            let beta_right_out = beta_of(&right_out, lambda1, lambda2);
                            let beta_right_full = beta_right_in + beta_right_out;

                            let moves = if in_box {
                                coupled_reaction_moves(
                                    ls,
                                    rs,
                                    beta_left_box,
                                    beta_right_in,
                                    beta_right_out,
                                    r,
                                    Q::one(),
                                )
                                .to_vec()
                            } else {
                                right_only_reaction_moves(rs, beta_right_full, r, Q::one())
                                    .to_vec()
                            };

                            let left_proj = rate_map(
                                moves
                                    .iter()
                                    .filter_map(|mv| mv.left_to.map(|to| (to, mv.rate))),
                            );
                            let right_proj = rate_map(
                                moves
                                    .iter()
                                    .filter_map(|mv| mv.right_to.map(|to| (to, mv.rate))),
                            );
                            let left_expect = if in_box {
                                rate_map(rates::reaction_rates_from(
                                    ls,
                                    beta_left_box,
                                    r,
                                    Q::one(),
                                ))
                            } else {
                                BTreeMap::new()
                            };
                            let right_expect = rate_map(rates::reaction_rates_from(
                                rs,
                                beta_right_full,
                                r,
                                Q::one(),
                            ));
                            assert_eq!(
                                left_proj, left_expect,
                                "left reaction marginal at site {site} ({ls},{rs})"
                            );
                            assert_eq!(
                                right_proj, right_expect,
                                "right reaction marginal at site {site} ({ls},{rs})"
                            );
                            cases += 1;
                        }
                    }

                    if geom.is_boundary(site) {
                        let moves = coupled_boundary_moves(ls, rs, &weights, in_box);
                        let left_proj = rate_map(
                            moves
                                .iter()
                                .filter_map(|mv| mv.left_to.map(|to| (to, mv.rate))),
                        );
                        let right_proj = rate_map(
                            moves
                                .iter()
                                .filter_map(|mv| mv.right_to.map(|to| (to, mv.rate))),
                        );
                        let expect = |state: State, active: bool| -> BTreeMap<State, Q> {
                            if !active {
                                return BTreeMap::new();
                            }
                            rate_map(
                                (0..4u8)
                                    .filter(|&j| j != state)
                                    .map(|j| (j, weights[j as usize])),
                            )
                        };
                        assert_eq!(left_proj, expect(ls, in_box), "left bath marginal");
                        assert_eq!(right_proj, expect(rs, true), "right bath marginal");
                        cases += 1;
                    }
                }
            }
        }
    }

    // Part (b): coupled-simulation marginals against the single-process
    // oracles at 10^6 replicas, 0.01 TV. The box leaves one transverse
    // column unrestricted.
    let geom = Geometry::new(2, 0, 4, BoundaryMode::Reservoirs).unwrap();
    let bound_box = TransverseBox::new(1);
    let params = standard_params(1);
    let init = Configuration::from_states(geom, &[1, 0, 2, 3]);
    let pair0 = CoupledConfiguration::diagonal(init.clone(), bound_box);
    let t_end = 0.5;
    let replicas = 1_000_000u64;

    let full = build_generator(geom, &params).unwrap();
    let restricted = build_generator_in_box(geom, &params, Some(&bound_box)).unwrap();
    let mut delta = vec![0.0; full.dim()];
    delta[index_of_config(&init)] = 1.0;
    let expect_right = transient_distribution(&full, &delta, t_end);
    let expect_left = transient_distribution(&restricted, &delta, t_end);

    let counts = (0..replicas)
        .into_par_iter()
        .fold(
            || (vec![0u64; full.dim()], vec![0u64; full.dim()]),
            |mut acc, rep| {
                let out = simulate_coupled(
                    &pair0,
                    &params,
                    t_end,
                    StreamSeed::replica(0xC0_0B, rep),
                    &mut [],
                )
                .unwrap();
                acc.0[index_of_config(&out.left)] += 1;
                acc.1[index_of_config(&out.right)] += 1;
                acc
            },
        )
        .reduce(
            || (vec![0u64; full.dim()], vec![0u64; full.dim()]),
            |mut a, b| {
                for (x, y) in a.0.iter_mut().zip(b.0) {
                    *x += y;
                }
                for (x, y) in a.1.iter_mut().zip(b.1) {
                    *x += y;
                }
                a
            },
        );
    let to_dist = |c: &[u64]| -> Vec<f64> {
        c.iter().map(|&x| x as f64 / replicas as f64).collect()
    };
    let tv_left = total_variation(&to_dist(&counts.0), &expect_left);
    let tv_right = total_variation(&to_dist(&counts.1), &expect_right);

    report(
        8,
        "coupling marginal fidelity",
        tv_left < 0.01 && tv_right < 0.01,
        &format!(
            "{cases} exact rational projections; marginal TVs left {tv_left:.2e} / right {tv_right:.2e} at 10^6 replicas"
        ),
    );
}

// ---------------------------------------------------------------------------
// 9. Coupling decay
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_coupling_decay() {
    let rows = couple_decay(
        (2.0, 1.0),
        0.5,
        [0.3, 0.2, 0.1],
        &[8, 16, 32],
        0.1,
        16,
        0xDECA,
        &Profile::default_blend(),
    )
    .expect("decay experiment failed");
    let means: Vec<f64> = rows.iter().map(|r| r.mean_h).collect();
    let pass = means.windows(2).all(|w| w[1] < w[0]) && means[0] > 0.0;
    let detail: Vec<String> = rows
        .iter()
        .map(|r| format!("N={} M={}: {:.3e}±{:.1e}", r.n, r.m, r.mean_h, r.stderr))
        .collect();
    report(9, "coupling discrepancy decay", pass, &detail.join(", "));
}

// ---------------------------------------------------------------------------
// 10. Invariant region
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_invariant_region() {
    // Solver trajectories across the acceptance parameter grid stay in
    // the simplex within 1e-9.
    let mut worst_defect: f64 = 0.0;
    let times: Vec<f64> = (0..=50).map(|k| 0.25 * k as f64 / 50.0).collect();
    for (params, torus) in [
        (standard_params(1), false),
        (standard_params(1), true),
        (ModelParams::new(1.0, 3.0, 0.7, [0.2, 0.3, 0.2], 1), false),
        (ModelParams::new(2.0, 1.0, 0.0, [0.3, 0.2, 0.1], 1), false),
    ] {
        for h in [1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0] {
            let grid = PdeGrid::new(1, torus, h).unwrap();
            let traj = solve_pde(&Profile::default_blend(), grid, &params, &times, grid.cfl_limit())
                .expect("solve failed");
            worst_defect = worst_defect.max(traj.max_simplex_defect);
        }
    }

    // Simulated occupancies are indicator-valued by construction: every
    // site holds exactly one of the four states at all times.
    let geom = Geometry::new(2, 4, 8, BoundaryMode::Reservoirs).unwrap();
    let init = sample_product_measure(&Profile::default_blend(), geom, StreamSeed::new(10, 0))
        .unwrap();
    struct PartitionCheck;
    impl Observer for PartitionCheck {
        fn on_event(&mut self, _t: f64, _event: &Event, before: &Configuration) {
            debug_assert!(
                before.occupancy_counts().iter().sum::<usize>()
                    == before.geometry().site_count()
            );
        }
        fn finalize(&mut self, _t_end: f64, final_config: &Configuration) {
            let counts = final_config.occupancy_counts();
            assert_eq!(counts.iter().sum::<usize>(), final_config.geometry().site_count());
        }
    }
    let mut check = PartitionCheck;
    let out = simulate(
        &init,
        &standard_params(4),
        0.5,
        StreamSeed::new(10, 1),
        &mut [&mut check],
    )
    .unwrap();
    let partition_ok =
        out.occupancy_counts().iter().sum::<usize>() == geom.site_count();

    report(
        10,
        "invariant region",
        worst_defect <= SOLVER_SIMPLEX_TOL && partition_ok,
        &format!(
            "worst solver simplex defect {worst_defect:.2e} (tolerance 1e-9); occupancies partition every configuration"
        ),
    );
}
