//! Independent d = 1 solver built from the Dirichlet eigenbasis.
//!
//! The interval `(-1, 1)` carries the full Dirichlet system
//! `phi_n(u) = sin(n pi (u+1)/2)` with eigenvalues `alpha_n = (n pi / 2)^2`
//! (already L2-normalized). Nonhomogeneous bath values are removed by an
//! affine lift, the heat semigroup acts diagonally on mode coefficients,
//! and the semilinear term enters through the Duhamel convolution
//!
//! `w(t) = S(t) w0 + int_0^t S(t - s) F(rho_s) ds`
//!
//! iterated to a Picard fixed point on short segments and restarted
//! segment by segment over longer horizons. The Duhamel integral treats
//! the projected source as piecewise linear on a uniform time grid and
//! integrates the heat kernel against it exactly, with the grid halved
//! until the solution stops moving; node-weight quadrature of the bare
//! integrand is hopeless here because the kernel is stiff in the high
//! modes.
//!
//! Serves as the cross-validation oracle for the finite-difference solver.

use crate::measure::Profile;
use crate::params::ModelParams;
use crate::pde::reaction_f_raw;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("Picard iteration did not converge in segment {segment} after {iterations} sweeps")]
    NonConvergence { segment: usize, iterations: u32 },
    #[error("mode index must be >= 1")]
    BadMode,
}

/// One member of the Dirichlet eigenbasis on `(-1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletMode {
    pub n: u32,
    /// Eigenvalue `alpha_n = (n pi / 2)^2` of `-d^2/du^2`.
    pub alpha: f64,
}

impl DirichletMode {
    /// `sin(n pi (u + 1) / 2)`; vanishes at both endpoints and has unit
    /// L2 norm on `[-1, 1]`.
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        (self.n as f64 * std::f64::consts::FRAC_PI_2 * (u + 1.0)).sin()
    }
}

pub fn dirichlet_mode(n: u32) -> Result<DirichletMode, SpectralError> {
    if n == 0 {
        return Err(SpectralError::BadMode);
    }
    let k = n as f64 * std::f64::consts::FRAC_PI_2;
    Ok(DirichletMode { n, alpha: k * k })
}

/// Decay coefficient `n` (1-based slot `n-1`) by `exp(-alpha_n dt)`.
pub fn heat_propagate(coeffs: &mut [f64], dt: f64) {
    debug_assert!(dt >= 0.0);
    for (i, c) in coeffs.iter_mut().enumerate() {
        let alpha = dirichlet_mode(i as u32 + 1).unwrap().alpha;
        *c *= (-alpha * dt).exp();
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SpectralOptions {
    /// Mode cap of the expansion.
    pub m_modes: usize,
    /// Spatial quadrature intervals (uniform closed grid; the trapezoid
    /// rule is a discrete sine transform there, exact up to aliasing).
    pub quad_intervals: usize,
    /// Picard sweep cap per segment.
    pub picard_cap: u32,
    /// Fixed-point tolerance in sup norm over the time grid.
    pub tol: f64,
    /// Segment length cap for the restart chain; segments must be short
    /// enough that the Picard map contracts.
    pub segment_len: f64,
    /// Initial number of time intervals per segment (doubled until the
    /// segment-end solution moves by less than `tol / 10`).
    pub init_time_intervals: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            m_modes: 400,
            quad_intervals: 1024,
            picard_cap: 60,
            tol: 1e-6,
            segment_len: 0.05,
            init_time_intervals: 32,
        }
    }
}

/// Converged spectral solution at the final time.
#[derive(Debug, Clone)]
pub struct SpectralSolution {
    /// Affine boundary lift per component: `lift_c(u) = a_c + b_c u`.
    pub lift: [[f64; 2]; 3],
    /// Final-time mode coefficients per component.
    pub coeffs: [Vec<f64>; 3],
    pub t: f64,
    /// Picard sweep counts, one per segment.
    pub picard_iterations: Vec<u32>,
    /// Final time-interval counts, one per segment.
    pub time_intervals: Vec<usize>,
}

impl SpectralSolution {
    /// Reconstruct the density triple at a point. The mode sum runs in a
    /// fixed order, so evaluation is deterministic; the lift alone carries
    /// the boundary values, hence `rho(+-1) = b` to machine precision.
    pub fn sample(&self, u: f64) -> [f64; 3] {
        let mut out = [0.0; 3];
        for c in 0..3 {
            let mut acc = self.lift[c][0] + self.lift[c][1] * u;
            for (i, &a) in self.coeffs[c].iter().enumerate() {
                if a != 0.0 {
                    acc += a * dirichlet_mode(i as u32 + 1).unwrap().eval(u);
                }
            }
            out[c] = acc;
        }
        out
    }
}

struct Basis {
    modes: usize,
    grid: Vec<f64>,
    /// `phi[n][q]`, modes by grid nodes.
    phi: Vec<Vec<f64>>,
    alphas: Vec<f64>,
    weight: f64,
}

impl Basis {
    fn new(modes: usize, intervals: usize) -> Self {
        let grid: Vec<f64> = (0..=intervals)
            .map(|q| -1.0 + 2.0 * q as f64 / intervals as f64)
            .collect();
        let mut phi = Vec::with_capacity(modes);
        let mut alphas = Vec::with_capacity(modes);
        for n in 1..=modes {
            let mode = dirichlet_mode(n as u32).unwrap();
            phi.push(grid.iter().map(|&u| mode.eval(u)).collect());
            alphas.push(mode.alpha);
        }
        Self {
            modes,
            grid,
            phi,
            alphas,
            weight: 2.0 / intervals as f64,
        }
    }

    /// Trapezoid projection of grid values on each mode (the endpoint
    /// half-weights are moot since every mode vanishes there).
    fn project(&self, values: &[f64], out: &mut [f64]) {
        for n in 0..self.modes {
            let row = &self.phi[n];
            let mut acc = 0.0;
            for (v, p) in values.iter().zip(row) {
                acc += v * p;
            }
            out[n] = acc * self.weight;
        }
    }

    fn synthesize(&self, coeffs: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for n in 0..self.modes {
            let c = coeffs[n];
            if c == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(&self.phi[n]) {
                *o += c * p;
            }
        }
    }
}

/// `phi1(z) = (1 - e^-z)/z` and `phi2(z) = (z - 1 + e^-z)/z^2`, the weights
/// of the exact kernel integral against a linear-in-time source.
fn phi_weights(z: f64) -> (f64, f64) {
    if z < 1e-3 {
        let phi1 = 1.0 - z / 2.0 + z * z / 6.0 - z * z * z / 24.0;
        let phi2 = 0.5 - z / 6.0 + z * z / 24.0;
        (phi1, phi2)
    } else {
        let em = -(-z).exp_m1(); // 1 - e^-z
        (em / z, (z - em) / (z * z))
    }
}

type Coeffs = [Vec<f64>; 3];

/// Solve the hydrodynamic system on `(-1, 1)` up to `t_end` by the
/// lift + heat-kernel + Duhamel fixed point.
pub fn duhamel_solve(
    gamma: &Profile,
    params: &ModelParams,
    t_end: f64,
    opts: &SpectralOptions,
) -> Result<SpectralSolution, SpectralError> {
    let basis = Basis::new(opts.m_modes, opts.quad_intervals);
    let bm = params.b_hat.eval(crate::lattice::Face::Minus);
    let bp = params.b_hat.eval(crate::lattice::Face::Plus);
    let mut lift = [[0.0f64; 2]; 3];
    for c in 0..3 {
        lift[c] = [(bm[c] + bp[c]) / 2.0, (bp[c] - bm[c]) / 2.0];
    }
    let lift_vals: Vec<[f64; 3]> = basis
        .grid
        .iter()
        .map(|&u| {
            [
                lift[0][0] + lift[0][1] * u,
                lift[1][0] + lift[1][1] * u,
                lift[2][0] + lift[2][1] * u,
            ]
        })
        .collect();

    let m = opts.m_modes;
    let mut w0: Coeffs = [vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    {
        let mut scratch = vec![0.0; basis.grid.len()];
        for c in 0..3 {
            for (q, &u) in basis.grid.iter().enumerate() {
                scratch[q] = gamma.eval(u)[c] - lift_vals[q][c];
            }
            basis.project(&scratch, &mut w0[c]);
        }
    }

    let mut picard_iterations = Vec::new();
    let mut time_intervals = Vec::new();
    if t_end == 0.0 {
        return Ok(SpectralSolution {
            lift,
            coeffs: w0,
            t: 0.0,
            picard_iterations,
            time_intervals,
        });
    }
    let segments = (t_end / opts.segment_len).ceil().max(1.0) as usize;
    let seg_len = t_end / segments as f64;

    for segment in 0..segments {
        let solve = |k: usize| {
            picard_segment(&basis, params, &lift_vals, &w0, seg_len, k, opts).ok_or(
                SpectralError::NonConvergence {
                    segment,
                    iterations: opts.picard_cap,
                },
            )
        };
        let mut k_intervals = opts.init_time_intervals.max(2);
        let mut current = solve(k_intervals)?;
        loop {
            let finer = 2 * k_intervals;
            let fine = solve(finer)?;
            let moved = coeff_distance(&current.0, &fine.0);
            current = fine;
            k_intervals = finer;
            if moved < opts.tol / 10.0 || k_intervals >= 1 << 14 {
                break;
            }
        }
        w0 = current.0;
        picard_iterations.push(current.1);
        time_intervals.push(k_intervals);
    }

    Ok(SpectralSolution {
        lift,
        coeffs: w0,
        t: t_end,
        picard_iterations,
        time_intervals,
    })
}

/// Sup-norm bound on the difference between two coefficient triples
/// (l1 over modes, max over components; the basis is bounded by 1).
fn coeff_distance(a: &Coeffs, b: &Coeffs) -> f64 {
    let mut worst = 0.0f64;
    for c in 0..3 {
        let l1: f64 = a[c].iter().zip(&b[c]).map(|(x, y)| (x - y).abs()).sum();
        worst = worst.max(l1);
    }
    worst
}

/// One Picard solve of a segment on a fixed time grid; returns the
/// segment-end coefficients and the sweep count, or `None` when the sweep
/// cap is hit before successive iterates differ by less than `tol`.
fn picard_segment(
    basis: &Basis,
    params: &ModelParams,
    lift_vals: &[[f64; 3]],
    w0: &Coeffs,
    seg_len: f64,
    k_intervals: usize,
    opts: &SpectralOptions,
) -> Option<(Coeffs, u32)> {
    let m = basis.modes;
    let nodes = k_intervals + 1;
    let dt = seg_len / k_intervals as f64;
    let decay: Vec<f64> = basis.alphas.iter().map(|&a| (-a * dt).exp()).collect();
    let weights: Vec<(f64, f64)> = basis
        .alphas
        .iter()
        .map(|&a| {
            let (phi1, phi2) = phi_weights(a * dt);
            (dt * (phi1 - phi2), dt * phi2)
        })
        .collect();

    // Trajectory iterate, initialized to the pure heat flow.
    let mut a: Vec<Coeffs> = Vec::with_capacity(nodes);
    for k in 0..nodes {
        let mut at: Coeffs = [vec![0.0; m], vec![0.0; m], vec![0.0; m]];
        for c in 0..3 {
            for n in 0..m {
                at[c][n] = w0[c][n] * (-basis.alphas[n] * dt * k as f64).exp();
            }
        }
        a.push(at);
    }
    if !params.reaction_on {
        return Some((a.pop().unwrap(), 0));
    }

    let grid_len = basis.grid.len();
    let mut rho_grid = vec![[0.0f64; 3]; grid_len];
    let mut f_grid = [
        vec![0.0f64; grid_len],
        vec![0.0f64; grid_len],
        vec![0.0f64; grid_len],
    ];
    let mut synth = vec![0.0f64; grid_len];
    let mut source: Vec<Coeffs> = (0..nodes)
        .map(|_| [vec![0.0; m], vec![0.0; m], vec![0.0; m]])
        .collect();

    for sweep in 1..=opts.picard_cap {
        for (at, proj) in a.iter().zip(source.iter_mut()) {
            for c in 0..3 {
                basis.synthesize(&at[c], &mut synth);
                for q in 0..grid_len {
                    rho_grid[q][c] = lift_vals[q][c] + synth[q];
                }
            }
            for q in 0..grid_len {
                let f = reaction_f_raw(rho_grid[q], params.lambda1, params.lambda2, params.r, 1);
                f_grid[0][q] = f[0];
                f_grid[1][q] = f[1];
                f_grid[2][q] = f[2];
            }
            for c in 0..3 {
                basis.project(&f_grid[c], &mut proj[c]);
            }
        }

        // Rebuild the trajectory in place; node k already holds the new
        // iterate when node k+1 is formed.
        let mut diff = 0.0f64;
        for k in 0..k_intervals {
            let mut node_diff = [0.0f64; 3];
            for c in 0..3 {
                for n in 0..m {
                    let new = decay[n] * a[k][c][n]
                        + weights[n].0 * source[k][c][n]
                        + weights[n].1 * source[k + 1][c][n];
                    node_diff[c] += (new - a[k + 1][c][n]).abs();
                    a[k + 1][c][n] = new;
                }
            }
            diff = diff.max(node_diff[0]).max(node_diff[1]).max(node_diff[2]);
        }
        if diff < opts.tol {
            return Some((a.pop().unwrap(), sweep));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ModelParams;

    fn quad_inner(f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64) -> f64 {
        // Closed trapezoid on a uniform grid: a discrete sine transform,
        // exact for products of low modes.
        let x = 4096usize;
        let w = 2.0 / x as f64;
        let mut acc = 0.0;
        for q in 0..=x {
            let u = -1.0 + 2.0 * q as f64 / x as f64;
            let scale = if q == 0 || q == x { 0.5 } else { 1.0 };
            acc += scale * f(u) * g(u) * w;
        }
        acc
    }

    #[test]
    fn first_mode_values() {
        let mode = dirichlet_mode(1).unwrap();
        assert!((mode.alpha - std::f64::consts::PI.powi(2) / 4.0).abs() < 1e-15);
        assert!((mode.eval(0.0) - 1.0).abs() < 1e-15);
        assert!(dirichlet_mode(0).is_err());
    }

    #[test]
    fn modes_vanish_at_faces() {
        for n in 1..=50 {
            let mode = dirichlet_mode(n).unwrap();
            assert!(mode.eval(-1.0).abs() < 1e-12);
            assert!(mode.eval(1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn modes_orthonormal_by_quadrature() {
        for m in 1..=8u32 {
            for n in 1..=8u32 {
                let fm = dirichlet_mode(m).unwrap();
                let fn_ = dirichlet_mode(n).unwrap();
                let inner = quad_inner(|u| fm.eval(u), |u| fn_.eval(u));
                let expect = if m == n { 1.0 } else { 0.0 };
                assert!(
                    (inner - expect).abs() < 1e-10,
                    "<phi_{m}, phi_{n}> = {inner}"
                );
            }
        }
    }

    #[test]
    fn modes_satisfy_eigen_equation() {
        // -phi'' = alpha phi by central differences, 1e-6 relative.
        let eps = 1e-4;
        for n in 1..=10u32 {
            let mode = dirichlet_mode(n).unwrap();
            for &u in &[-0.63, -0.11, 0.27, 0.52] {
                let second = (mode.eval(u + eps) - 2.0 * mode.eval(u) + mode.eval(u - eps))
                    / (eps * eps);
                let rel = (-second - mode.alpha * mode.eval(u)).abs()
                    / (mode.alpha * mode.eval(u).abs()).max(1e-9);
                assert!(rel < 1e-6, "mode {n} at {u}: rel {rel}");
            }
        }
    }

    #[test]
    fn propagate_is_mode_decay() {
        let mut coeffs = vec![1.0, 0.0, 0.0];
        heat_propagate(&mut coeffs, 1.0);
        let alpha1 = std::f64::consts::PI.powi(2) / 4.0;
        assert!((coeffs[0] - (-alpha1).exp()).abs() < 1e-15);

        let mut a = vec![0.3, -0.4, 0.25, 0.1];
        let mut b = a.clone();
        heat_propagate(&mut a, 0.7);
        heat_propagate(&mut b, 0.3);
        heat_propagate(&mut b, 0.4);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }

        let mut c = vec![0.5, 0.5];
        let before = c.clone();
        heat_propagate(&mut c, 0.0);
        assert_eq!(c, before);
    }

    fn standard_params() -> ModelParams {
        ModelParams::new(2.0, 1.0, 0.5, [0.3, 0.2, 0.1], 1)
    }

    #[test]
    fn reaction_off_reduces_to_heat_semigroup() {
        let mut params = standard_params();
        params.reaction_on = false;
        params.b_hat = crate::params::BoundaryProfile::constant([0.0; 3]);
        let gamma = Profile::ParabolicBlend {
            base: [0.0; 3],
            amp: [0.3, 0.0, 0.0],
        };
        let opts = SpectralOptions {
            m_modes: 64,
            ..Default::default()
        };
        let t = 0.15;
        let sol = duhamel_solve(&gamma, &params, t, &opts).unwrap();

        // Project the initial data and heat-propagate by hand.
        let basis = Basis::new(opts.m_modes, opts.quad_intervals);
        let mut init = vec![0.0; opts.m_modes];
        let vals: Vec<f64> = basis.grid.iter().map(|&u| gamma.eval(u)[0]).collect();
        basis.project(&vals, &mut init);
        heat_propagate(&mut init, t);
        for (n, (&a, &b)) in sol.coeffs[0].iter().zip(&init).enumerate() {
            assert!((a - b).abs() < 1e-12, "mode {n}: {a} vs {b}");
        }
    }

    #[test]
    fn boundary_values_exact() {
        let params = standard_params();
        let sol = duhamel_solve(
            &Profile::default_blend(),
            &params,
            0.1,
            &SpectralOptions {
                m_modes: 128,
                ..Default::default()
            },
        )
        .unwrap();
        let minus = sol.sample(-1.0);
        let plus = sol.sample(1.0);
        for c in 0..3 {
            assert!((minus[c] - [0.3, 0.2, 0.1][c]).abs() < 1e-9);
            assert!((plus[c] - [0.3, 0.2, 0.1][c]).abs() < 1e-9);
        }
    }

    #[test]
    fn picard_iterations_shrink_with_horizon() {
        let params = standard_params();
        let opts = SpectralOptions {
            m_modes: 96,
            segment_len: 0.2,
            ..Default::default()
        };
        let mut iters = Vec::new();
        for t in [0.16, 0.08, 0.02] {
            let sol = duhamel_solve(&Profile::default_blend(), &params, t, &opts).unwrap();
            assert_eq!(sol.picard_iterations.len(), 1);
            iters.push(sol.picard_iterations[0]);
        }
        assert!(iters[0] >= iters[1] && iters[1] >= iters[2], "{iters:?}");
        assert!(iters[0] > iters[2], "{iters:?}");
    }

    #[test]
    fn mode_doubling_is_converged() {
        let params = standard_params();
        let base = SpectralOptions {
            m_modes: 400,
            ..Default::default()
        };
        let doubled = SpectralOptions {
            m_modes: 800,
            ..Default::default()
        };
        let t = 0.05;
        let lo = duhamel_solve(&Profile::default_blend(), &params, t, &base).unwrap();
        let hi = duhamel_solve(&Profile::default_blend(), &params, t, &doubled).unwrap();
        let mut worst = 0.0f64;
        for q in 0..=200 {
            let u = -1.0 + q as f64 / 100.0;
            let a = lo.sample(u);
            let b = hi.sample(u);
            for c in 0..3 {
                worst = worst.max((a[c] - b[c]).abs());
            }
        }
        assert!(worst < 1e-6, "mode-doubling moved the solution by {worst}");
    }
}
