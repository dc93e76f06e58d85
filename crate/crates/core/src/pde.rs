//! The limiting reaction-diffusion system.
//!
//! The macroscopic densities solve `d rho / dt = Lap rho + F(rho)` on
//! `(-1,1) x T^(d-1)` with the bath densities as Dirichlet data on the
//! faces (torus mode drops the boundary). The solver is forward Euler in
//! time with the second-order centered Laplacian in space; boundary nodes
//! are pinned from the first step on. Densities must remain in the
//! simplex `{rho_i >= 0, rho_1+rho_2+rho_3 <= 1}`; violations beyond
//! tolerance are reported as errors rather than clamped, so scheme bugs
//! surface instead of being masked.

use crate::measure::{Profile, TestTriple};
use crate::params::ModelParams;
use thiserror::Error;

/// Simplex slack for the strict reaction-term domain check.
pub const SIMPLEX_SLACK: f64 = 1e-12;

/// Simplex tolerance for solver trajectories.
pub const SOLVER_SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PdeError {
    #[error("grid spacing {h} does not divide the domain")]
    BadGrid { h: f64 },
    #[error("time step {dt} violates the CFL bound {limit}")]
    CflViolation { dt: f64, limit: f64 },
    #[error("density left the simplex at t = {t} (defect {defect})")]
    SimplexViolation { t: f64, defect: f64 },
    #[error("density {rho:?} outside the simplex")]
    OutsideSimplex { rho: [f64; 3] },
    #[error("test function does not vanish on the boundary")]
    NotBoundaryVanishing,
    #[error("snapshot times must be sorted, nonnegative, and nonempty")]
    BadSnapshotTimes,
    #[error("strip mode requires the boundary channel; torus mode ignores it")]
    UnsupportedBoundary,
}

/// Reaction term exactly as in the hydrodynamic system, as a polynomial in
/// the densities (no domain check):
///
/// * `F1 = 2d (l1 r1 + l2 r3) r0 + r3 - r1 (r + 1)`
/// * `F2 = r r0 + r3 - 2d (l1 r1 + l2 r3) r2 - r2`
/// * `F3 = 2d (l1 r1 + l2 r3) r2 + r r1 - 2 r3`
///
/// with `r0 = 1 - r1 - r2 - r3`.
#[inline]
pub fn reaction_f_raw(rho: [f64; 3], lambda1: f64, lambda2: f64, r: f64, d: u8) -> [f64; 3] {
    let rho0 = 1.0 - rho[0] - rho[1] - rho[2];
    let b = 2.0 * d as f64 * (lambda1 * rho[0] + lambda2 * rho[2]);
    [
        b * rho0 + rho[2] - rho[0] * (r + 1.0),
        r * rho0 + rho[2] - b * rho[1] - rho[1],
        b * rho[1] + r * rho[0] - 2.0 * rho[2],
    ]
}

/// [`reaction_f_raw`] with the strict simplex domain check.
pub fn reaction_f(rho: [f64; 3], params: &ModelParams, d: u8) -> Result<[f64; 3], PdeError> {
    let sum: f64 = rho.iter().sum();
    if rho.iter().any(|&x| x < -SIMPLEX_SLACK) || sum > 1.0 + SIMPLEX_SLACK {
        return Err(PdeError::OutsideSimplex { rho });
    }
    Ok(reaction_f_raw(rho, params.lambda1, params.lambda2, params.r, d))
}

/// Analytic Jacobian of the reaction term.
pub fn reaction_jacobian(rho: [f64; 3], params: &ModelParams, d: u8) -> [[f64; 3]; 3] {
    let (l1, l2, r) = (params.lambda1, params.lambda2, params.r);
    let twod = 2.0 * d as f64;
    let rho0 = 1.0 - rho[0] - rho[1] - rho[2];
    let b = twod * (l1 * rho[0] + l2 * rho[2]);
    let db1 = twod * l1;
    let db3 = twod * l2;
    [
        [
            db1 * rho0 - b - (r + 1.0),
            -b,
            db3 * rho0 - b + 1.0,
        ],
        [
            -r - db1 * rho[1],
            -r - b - 1.0,
            -r + 1.0 - db3 * rho[1],
        ],
        [db1 * rho[1] + r, b, db3 * rho[1] - 2.0],
    ]
}

/// Uniform mesh over `[-1,1] x [0,1)^(d-1)` with spacing `h` in every
/// direction; the e1 axis wraps in torus mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeGrid {
    pub d: u8,
    pub torus: bool,
    pub h: f64,
    n1: usize,
    n2: usize,
}

impl PdeGrid {
    pub fn new(d: u8, torus: bool, h: f64) -> Result<Self, PdeError> {
        let n1f = 2.0 / h;
        let n1 = n1f.round() as usize;
        if n1 < 2 || (n1 as f64 - n1f).abs() > 1e-9 {
            return Err(PdeError::BadGrid { h });
        }
        let n2 = if d == 2 {
            let n2f = 1.0 / h;
            let n2 = n2f.round() as usize;
            if n2 < 2 || (n2 as f64 - n2f).abs() > 1e-9 {
                return Err(PdeError::BadGrid { h });
            }
            n2
        } else {
            1
        };
        Ok(Self { d, torus, h, n1, n2 })
    }

    pub fn strip_1d(h: f64) -> Result<Self, PdeError> {
        Self::new(1, false, h)
    }

    pub fn torus_1d(h: f64) -> Result<Self, PdeError> {
        Self::new(1, true, h)
    }

    /// Nodes along e1 (`n1 + 1` on the strip, `n1` on the torus).
    #[inline]
    pub fn e1_nodes(&self) -> usize {
        if self.torus {
            self.n1
        } else {
            self.n1 + 1
        }
    }

    #[inline]
    pub fn transverse_nodes(&self) -> usize {
        self.n2
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.e1_nodes() * self.n2
    }

    #[inline]
    pub fn u1(&self, j: usize) -> f64 {
        -1.0 + j as f64 * self.h
    }

    #[inline]
    pub fn index(&self, j: usize, m: usize) -> usize {
        m * self.e1_nodes() + j
    }

    /// CFL bound `h^2 / (2 * 2d)` for the unit-diffusivity scheme with the
    /// customary factor-2 safety margin.
    #[inline]
    pub fn cfl_limit(&self) -> f64 {
        self.h * self.h / (4.0 * self.d as f64)
    }

    /// Trapezoid weight of a node (cell volume `h^d`, halved on pinned
    /// faces).
    #[inline]
    pub fn quad_weight(&self, j: usize) -> f64 {
        let mut w = self.h.powi(self.d as i32);
        if !self.torus && (j == 0 || j == self.n1) {
            w *= 0.5;
        }
        w
    }
}

/// Density fields at one time.
#[derive(Debug, Clone)]
pub struct PdeState {
    pub t: f64,
    pub rho: [Vec<f64>; 3],
}

impl PdeState {
    pub fn sample(&self, grid: &PdeGrid, j: usize, m: usize) -> [f64; 3] {
        let i = grid.index(j, m);
        [self.rho[0][i], self.rho[1][i], self.rho[2][i]]
    }
}

/// Snapshots of a solve plus simplex diagnostics.
#[derive(Debug, Clone)]
pub struct PdeTrajectory {
    pub grid: PdeGrid,
    pub states: Vec<PdeState>,
    /// Largest simplex defect seen at any node and step.
    pub max_simplex_defect: f64,
    pub steps: u64,
}

/// Forward-Euler / centered-difference stepper.
pub struct PdeSolver {
    pub grid: PdeGrid,
    params: ModelParams,
    pub rho: [Vec<f64>; 3],
    scratch: [Vec<f64>; 3],
    pub t: f64,
    pub max_simplex_defect: f64,
    pub steps: u64,
    /// Initial profile disagrees with the bath values on a face. Allowed
    /// (the scheme pins boundary nodes from the first step, matching the
    /// instantaneous Dirichlet condition for `t > 0`) but worth surfacing.
    pub boundary_mismatch: bool,
}

impl PdeSolver {
    pub fn new(gamma: &Profile, grid: PdeGrid, params: ModelParams) -> Result<Self, PdeError> {
        if !grid.torus && !params.boundary_on {
            return Err(PdeError::UnsupportedBoundary);
        }
        let nodes = grid.node_count();
        let mut rho = [vec![0.0; nodes], vec![0.0; nodes], vec![0.0; nodes]];
        for m in 0..grid.n2 {
            for j in 0..grid.e1_nodes() {
                let val = gamma.eval(grid.u1(j));
                let i = grid.index(j, m);
                for c in 0..3 {
                    rho[c][i] = val[c];
                }
            }
        }
        let mut boundary_mismatch = false;
        if !grid.torus {
            let gm = gamma.eval(-1.0);
            let gp = gamma.eval(1.0);
            let bm = params.b_hat.eval(crate::lattice::Face::Minus);
            let bp = params.b_hat.eval(crate::lattice::Face::Plus);
            for c in 0..3 {
                if (gm[c] - bm[c]).abs() > 1e-12 || (gp[c] - bp[c]).abs() > 1e-12 {
                    boundary_mismatch = true;
                }
            }
        }
        let scratch = rho.clone();
        Ok(Self {
            grid,
            params,
            rho,
            scratch,
            t: 0.0,
            max_simplex_defect: 0.0,
            steps: 0,
            boundary_mismatch,
        })
    }

    pub fn state(&self) -> PdeState {
        PdeState {
            t: self.t,
            rho: self.rho.clone(),
        }
    }

    /// One forward-Euler step.
    pub fn step(&mut self, dt: f64) -> Result<(), PdeError> {
        let limit = self.grid.cfl_limit();
        if dt > limit * (1.0 + 1e-12) {
            return Err(PdeError::CflViolation { dt, limit });
        }
        let grid = self.grid;
        let e1 = grid.e1_nodes();
        let inv_h2 = if self.params.exchange_on {
            1.0 / (grid.h * grid.h)
        } else {
            0.0
        };
        let d = grid.d;
        let mut defect = 0.0f64;
        for m in 0..grid.n2 {
            let (m_lo, m_hi) = if d == 2 {
                ((m + grid.n2 - 1) % grid.n2, (m + 1) % grid.n2)
            } else {
                (m, m)
            };
            for j in 0..e1 {
                let i = grid.index(j, m);
                let interior = grid.torus || (j > 0 && j < e1 - 1);
                if !interior {
                    for c in 0..3 {
                        self.scratch[c][i] = self.rho[c][i];
                    }
                    continue;
                }
                let (jl, jr) = if grid.torus {
                    ((j + e1 - 1) % e1, (j + 1) % e1)
                } else {
                    (j - 1, j + 1)
                };
                let here = [self.rho[0][i], self.rho[1][i], self.rho[2][i]];
                let f = if self.params.reaction_on {
                    reaction_f_raw(here, self.params.lambda1, self.params.lambda2, self.params.r, d)
                } else {
                    [0.0; 3]
                };
                let il = grid.index(jl, m);
                let ir = grid.index(jr, m);
                let (iu, idn) = (grid.index(j, m_lo), grid.index(j, m_hi));
                let mut sum = 0.0;
                for c in 0..3 {
                    let mut lap = self.rho[c][il] + self.rho[c][ir] - 2.0 * here[c];
                    if d == 2 {
                        lap += self.rho[c][iu] + self.rho[c][idn] - 2.0 * here[c];
                    }
                    let new = here[c] + dt * (lap * inv_h2 + f[c]);
                    self.scratch[c][i] = new;
                    defect = defect.max(-new);
                    sum += new;
                }
                defect = defect.max(sum - 1.0);
            }
        }
        if !grid.torus && self.params.boundary_on {
            for m in 0..grid.n2 {
                let bm = self.params.b_hat.eval(crate::lattice::Face::Minus);
                let bp = self.params.b_hat.eval(crate::lattice::Face::Plus);
                for c in 0..3 {
                    self.scratch[c][grid.index(0, m)] = bm[c];
                    self.scratch[c][grid.index(e1 - 1, m)] = bp[c];
                }
            }
        }
        for c in 0..3 {
            std::mem::swap(&mut self.rho[c], &mut self.scratch[c]);
        }
        self.t += dt;
        self.steps += 1;
        self.max_simplex_defect = self.max_simplex_defect.max(defect.max(0.0));
        if defect > SOLVER_SIMPLEX_TOL {
            return Err(PdeError::SimplexViolation { t: self.t, defect });
        }
        Ok(())
    }

    /// Step to `t_target` in uniform substeps no longer than `dt_max`.
    pub fn run_to(&mut self, t_target: f64, dt_max: f64) -> Result<(), PdeError> {
        let span = t_target - self.t;
        if span <= 0.0 {
            return Ok(());
        }
        let n = (span / dt_max).ceil().max(1.0) as u64;
        let dt = span / n as f64;
        for _ in 0..n {
            self.step(dt)?;
        }
        Ok(())
    }
}

/// Run the scheme and capture snapshots at the requested times (sorted,
/// nonnegative). `dt_max` is clipped to the CFL bound.
pub fn solve_pde(
    gamma: &Profile,
    grid: PdeGrid,
    params: &ModelParams,
    snapshot_times: &[f64],
    dt_max: f64,
) -> Result<PdeTrajectory, PdeError> {
    if snapshot_times.is_empty()
        || snapshot_times.windows(2).any(|w| w[1] < w[0])
        || snapshot_times[0] < 0.0
    {
        return Err(PdeError::BadSnapshotTimes);
    }
    let mut solver = PdeSolver::new(gamma, grid, *params)?;
    let dt = dt_max.min(grid.cfl_limit());
    let mut states = Vec::with_capacity(snapshot_times.len());
    for &t in snapshot_times {
        solver.run_to(t, dt)?;
        states.push(solver.state());
    }
    Ok(PdeTrajectory {
        grid,
        states,
        max_simplex_defect: solver.max_simplex_defect,
        steps: solver.steps,
    })
}

/// Spatial inner product `< rho_i , G_i >` summed over types, by the
/// trapezoid rule on the solver mesh.
pub fn space_pairing(grid: &PdeGrid, state: &PdeState, g: &TestTriple, t: f64) -> f64 {
    let mut acc = 0.0;
    for m in 0..grid.transverse_nodes() {
        for j in 0..grid.e1_nodes() {
            let w = grid.quad_weight(j);
            let u1 = grid.u1(j);
            let i = grid.index(j, m);
            for c in 0..3 {
                acc += w * state.rho[c][i] * g[c].eval(t, u1);
            }
        }
    }
    acc
}

/// Absolute residual of the weak formulation evaluated on a trajectory:
///
/// `| <rho_T, G_T> - <rho_0, G_0> - int <rho, ds G> - int <rho, Lap G>
///   - int <F(rho), G> + sum_i int_Gamma n1 b_i d1 G_i dS dt |`
///
/// by trapezoid quadrature in space and time on the solver mesh. The
/// Laplacian and boundary terms follow the diffusion toggle and the
/// reaction term the reaction toggle, so the residual always tests the
/// equation the solver actually ran.
pub fn weak_residual(
    traj: &PdeTrajectory,
    g: &TestTriple,
    params: &ModelParams,
) -> Result<f64, PdeError> {
    if g.iter().any(|f| !f.boundary_vanishing()) {
        return Err(PdeError::NotBoundaryVanishing);
    }
    if traj.states.len() < 2 {
        return Err(PdeError::BadSnapshotTimes);
    }
    let grid = &traj.grid;
    let first = &traj.states[0];
    let last = traj.states.last().unwrap();
    let mut residual = space_pairing(grid, last, g, last.t) - space_pairing(grid, first, g, first.t);

    // Time integrands at each snapshot node.
    let mut integrand = Vec::with_capacity(traj.states.len());
    for state in &traj.states {
        let t = state.t;
        let mut ds_term = 0.0;
        let mut lap_term = 0.0;
        let mut f_term = 0.0;
        for m in 0..grid.transverse_nodes() {
            for j in 0..grid.e1_nodes() {
                let w = grid.quad_weight(j);
                let u1 = grid.u1(j);
                let i = grid.index(j, m);
                let rho = [state.rho[0][i], state.rho[1][i], state.rho[2][i]];
                let f = if params.reaction_on {
                    reaction_f_raw(rho, params.lambda1, params.lambda2, params.r, grid.d)
                } else {
                    [0.0; 3]
                };
                for c in 0..3 {
                    ds_term += w * rho[c] * g[c].dt(t, u1);
                    lap_term += w * rho[c] * g[c].laplacian(t, u1);
                    f_term += w * f[c] * g[c].eval(t, u1);
                }
            }
        }
        let mut boundary_term = 0.0;
        if !grid.torus && params.exchange_on {
            let bp = params.b_hat.eval(crate::lattice::Face::Plus);
            let bm = params.b_hat.eval(crate::lattice::Face::Minus);
            for c in 0..3 {
                boundary_term += bp[c] * g[c].d1(t, 1.0) - bm[c] * g[c].d1(t, -1.0);
            }
        }
        let lap_on = if params.exchange_on { 1.0 } else { 0.0 };
        integrand.push(ds_term + lap_on * lap_term + f_term - boundary_term);
    }
    for (k, w) in traj.states.windows(2).enumerate() {
        let dt = w[1].t - w[0].t;
        residual -= 0.5 * dt * (integrand[k] + integrand[k + 1]);
    }
    Ok(residual.abs())
}

/// CSV snapshot export: `u1[,u2],rho1,rho2,rho3` per node.
pub fn snapshot_csv(grid: &PdeGrid, state: &PdeState) -> String {
    let mut out = if grid.d == 2 {
        String::from("u1,u2,rho1,rho2,rho3\n")
    } else {
        String::from("u1,rho1,rho2,rho3\n")
    };
    for m in 0..grid.transverse_nodes() {
        for j in 0..grid.e1_nodes() {
            let i = grid.index(j, m);
            if grid.d == 2 {
                out.push_str(&format!(
                    "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                    grid.u1(j),
                    m as f64 * grid.h,
                    state.rho[0][i],
                    state.rho[1][i],
                    state.rho[2][i]
                ));
            } else {
                out.push_str(&format!(
                    "{:.12e},{:.12e},{:.12e},{:.12e}\n",
                    grid.u1(j),
                    state.rho[0][i],
                    state.rho[1][i],
                    state.rho[2][i]
                ));
            }
        }
    }
    out
}
