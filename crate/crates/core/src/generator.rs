//! Exact rate-matrix oracle for tiny lattices.
//!
//! Enumerates the full state space `{0,1,2,3}^sites` of a small lattice and
//! assembles the generator of the jump process, channel by channel. The
//! transient law `init * exp(t Q)` is then computed by uniformization,
//! which keeps every intermediate vector a probability distribution and has
//! a computable truncation bound. Used as the ground truth the event-driven
//! engine is validated against.

use crate::lattice::{Configuration, Geometry, State, TransverseBox};
use crate::params::ModelParams;
use crate::rates;
use thiserror::Error;

/// Hard cap on the oracle state space (8 sites).
pub const MAX_ORACLE_DIM: usize = 65_536;

const POISSON_TAIL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("state space of {sites} sites has {dim} states, above the cap {MAX_ORACLE_DIM}")]
    TooLarge { sites: usize, dim: u128 },
}

/// Sparse row-stored generator: off-diagonal entries are total rates
/// between configurations, the diagonal is minus the row sum.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    dim: usize,
    rows: Vec<Vec<(u32, f64)>>,
    diag: Vec<f64>,
}

impl GeneratorMatrix {
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Off-diagonal entry `q(from -> to)`; zero when absent.
    pub fn rate(&self, from: usize, to: usize) -> f64 {
        if from == to {
            return self.diag[from];
        }
        self.rows[from]
            .iter()
            .find(|(j, _)| *j as usize == to)
            .map_or(0.0, |(_, q)| *q)
    }

    pub fn row(&self, from: usize) -> &[(u32, f64)] {
        &self.rows[from]
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        self.diag[i]
    }

    /// Largest exit rate, the uniformization constant.
    pub fn max_exit_rate(&self) -> f64 {
        self.diag.iter().fold(0.0, |m, &d| m.max(-d))
    }

    /// Row-sum defect, exactly zero in exact arithmetic.
    pub fn max_row_sum_defect(&self) -> f64 {
        self.rows
            .iter()
            .zip(&self.diag)
            .map(|(row, &d)| (row.iter().map(|(_, q)| q).sum::<f64>() + d).abs())
            .fold(0.0, f64::max)
    }
}

/// State of site `site` inside the packed configuration index.
#[inline]
pub fn state_of_index(index: usize, site: usize) -> State {
    ((index >> (2 * site)) & 3) as State
}

/// Configuration index with the state of `site` replaced.
#[inline]
pub fn index_with_state(index: usize, site: usize, state: State) -> usize {
    (index & !(3usize << (2 * site))) | ((state as usize) << (2 * site))
}

/// Configuration index of a packed lattice configuration.
pub fn index_of_config(cfg: &Configuration) -> usize {
    let mut idx = 0usize;
    for site in (0..cfg.geometry().site_count()).rev() {
        idx = (idx << 2) | cfg.get(site) as usize;
    }
    idx
}

/// Configuration with the states encoded by `index`.
pub fn config_of_index(geom: Geometry, index: usize) -> Configuration {
    let mut cfg = Configuration::empty(geom);
    for site in 0..geom.site_count() {
        cfg.set(site, state_of_index(index, site));
    }
    cfg
}

/// Assemble the full generator (reaction + exchange + boundary, honoring
/// the channel toggles) over the complete state space of a tiny lattice.
pub fn build_generator(geom: Geometry, params: &ModelParams) -> Result<GeneratorMatrix, OracleError> {
    build_generator_in_box(geom, params, None)
}

/// Same as [`build_generator`] but with the dynamics restricted to a
/// transverse box: transitions at sites outside the box are suppressed,
/// exchanges act only on bonds inside the box, and the birth rate counts
/// in-box neighbours only.
pub fn build_generator_in_box(
    geom: Geometry,
    params: &ModelParams,
    bound_box: Option<&TransverseBox>,
) -> Result<GeneratorMatrix, OracleError> {
    let sites = geom.site_count();
    let dim_wide = (1u128) << (2 * sites as u128);
    if dim_wide > MAX_ORACLE_DIM as u128 {
        return Err(OracleError::TooLarge {
            sites,
            dim: dim_wide,
        });
    }
    let dim = dim_wide as usize;

    let in_box = |site: usize| bound_box.is_none_or(|b| b.contains(&geom, site));
    let site_list: Vec<usize> = (0..sites).filter(|&s| in_box(s)).collect();
    let neighbor_lists: Vec<Vec<usize>> = (0..sites)
        .map(|s| {
            geom.neighbors(s)
                .iter()
                .copied()
                .filter(|&n| in_box(n))
                .collect()
        })
        .collect();
    let bonds: Vec<_> = geom
        .bonds()
        .into_iter()
        .filter(|b| in_box(b.tail) && in_box(b.head))
        .collect();
    let boundary: Vec<usize> = geom
        .boundary_sites()
        .into_iter()
        .filter(|&s| in_box(s))
        .collect();
    let sq = params.sq_scale();

    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); dim];
    let mut diag = vec![0.0f64; dim];

    let push = |rows: &mut Vec<Vec<(u32, f64)>>, diag: &mut Vec<f64>, from: usize, to: usize, q: f64| {
        if q == 0.0 || from == to {
            return;
        }
        let row = &mut rows[from];
        match row.iter_mut().find(|(j, _)| *j as usize == to) {
            Some((_, acc)) => *acc += q,
            None => row.push((to as u32, q)),
        }
        diag[from] -= q;
    };

    for from in 0..dim {
        if params.reaction_on {
            for &site in &site_list {
                let state = state_of_index(from, site);
                let beta = rates::beta_from_states(
                    neighbor_lists[site]
                        .iter()
                        .map(|&n| state_of_index(from, n)),
                    &params.lambda1,
                    &params.lambda2,
                );
                for (to_state, q) in rates::reaction_rates_from(state, beta, params.r, 1.0) {
                    push(&mut rows, &mut diag, from, index_with_state(from, site, to_state), q);
                }
            }
        }
        if params.exchange_on {
            for bond in &bonds {
                let a = state_of_index(from, bond.tail);
                let b = state_of_index(from, bond.head);
                if a == b {
                    continue;
                }
                let to = index_with_state(index_with_state(from, bond.tail, b), bond.head, a);
                push(&mut rows, &mut diag, from, to, sq);
            }
        }
        if params.boundary_on {
            for &site in &boundary {
                let state = state_of_index(from, site);
                let weights = params.b_hat.weights(geom.face(site));
                for j in 0..4u8 {
                    if j == state {
                        continue;
                    }
                    push(
                        &mut rows,
                        &mut diag,
                        from,
                        index_with_state(from, site, j),
                        sq * weights[j as usize],
                    );
                }
            }
        }
    }

    Ok(GeneratorMatrix { dim, rows, diag })
}

/// Transient distribution `init * exp(t Q)` by uniformization, truncated
/// when the Poisson tail drops below `1e-10` in total variation.
pub fn transient_distribution(gen: &GeneratorMatrix, init: &[f64], t: f64) -> Vec<f64> {
    assert_eq!(init.len(), gen.dim);
    assert!(t >= 0.0);
    let lambda = gen.max_exit_rate();
    if lambda == 0.0 || t == 0.0 {
        return init.to_vec();
    }
    let a = lambda * t;
    // Keep exp(-a) representable; split long horizons by the semigroup law.
    if a > 500.0 {
        let half = transient_distribution(gen, init, t / 2.0);
        return transient_distribution(gen, &half, t / 2.0);
    }

    let dim = gen.dim;
    let mut v = init.to_vec();
    let mut out = vec![0.0f64; dim];
    let mut weight = (-a).exp();
    let mut cumulative = weight;
    for x in out.iter_mut().zip(&v) {
        *x.0 = weight * x.1;
    }
    let mut k = 0u64;
    while cumulative < 1.0 - POISSON_TAIL {
        // One step of the uniformized chain: v <- v (I + Q / lambda).
        let mut next = v.clone();
        for (i, row) in gen.rows.iter().enumerate() {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            next[i] += vi * gen.diag[i] / lambda;
            for &(j, q) in row {
                next[j as usize] += vi * q / lambda;
            }
        }
        v = next;
        k += 1;
        weight *= a / k as f64;
        cumulative += weight;
        for (o, &x) in out.iter_mut().zip(&v) {
            *o += weight * x;
        }
    }
    out
}

/// Total variation distance between two distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(q)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
}
