//! Microscopic transition rates.
//!
//! The process superposes three channels:
//!
//! * reaction (contact process with sterile release): at each site the
//!   `omega` bit flips at rate `r(1-omega) + omega` and the `xi` bit flips
//!   at rate `beta (1-xi) + xi`, where `beta` is the local birth rate;
//! * exchange (stirring): each nearest-neighbour bond swaps the full states
//!   of its endpoints at rate `N^2`;
//! * boundary baths: a site on `Gamma_N` jumps to state `j` at rate
//!   `N^2 b_j(x/N)` for every `j` different from its current state.
//!
//! The rate arithmetic is generic over the scalar type so the same
//! expressions drive both the `f64` simulation path and the exact rational
//! cross-checks in the coupling tests.

use crate::lattice::{omega, xi, Configuration, Site, State};
use crate::params::ModelParams;
use arrayvec::ArrayVec;
use num_traits::Zero;
use std::ops::Add;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RateError {
    #[error("site {0} is not a boundary site")]
    NotBoundary(Site),
}

/// Target of the `omega` flip from a given state (`0<->2`, `1<->3`).
#[inline]
pub fn omega_flip_target(state: State) -> State {
    state ^ 2
}

/// Target of the `xi` flip from a given state (`0<->1`, `2<->3`).
#[inline]
pub fn xi_flip_target(state: State) -> State {
    state ^ 1
}

/// Birth rate `lambda1 * #(neighbours in state 1) + lambda2 * #(neighbours
/// in state 3)` from an iterator of neighbour states.
pub fn beta_from_states<T, I>(neighbor_states: I, lambda1: &T, lambda2: &T) -> T
where
    T: Zero + Clone + Add<Output = T>,
    I: IntoIterator<Item = State>,
{
    let mut acc = T::zero();
    for s in neighbor_states {
        match s {
            1 => acc = acc + lambda1.clone(),
            3 => acc = acc + lambda2.clone(),
            _ => {}
        }
    }
    acc
}

/// Birth rate at a site from its lattice neighbours.
pub fn beta(cfg: &Configuration, site: Site, params: &ModelParams) -> f64 {
    let geom = cfg.geometry();
    beta_from_states(
        geom.neighbors(site).iter().map(|&n| cfg.get(n)),
        &params.lambda1,
        &params.lambda2,
    )
}

/// Rates of the two flip channels out of `state`: `(omega rate, xi rate)`.
pub fn flip_rates<T: Clone>(state: State, beta: T, r: T, one: T) -> (T, T) {
    let omega_rate = if omega(state) == 0 { r } else { one.clone() };
    let xi_rate = if xi(state) == 0 { beta } else { one };
    (omega_rate, xi_rate)
}

/// Reaction transitions out of `state` as `(target, rate)` pairs; zero-rate
/// entries are dropped. Reproduces the eight-line transition table: from
/// state 0 the site moves to 1 at rate `beta` and to 2 at rate `r`, and so
/// on through the two flip channels.
pub fn reaction_rates_from<T>(state: State, beta: T, r: T, one: T) -> ArrayVec<(State, T), 2>
where
    T: Zero + Clone + PartialOrd,
{
    let (omega_rate, xi_rate) = flip_rates(state, beta, r, one);
    let mut out = ArrayVec::new();
    if !omega_rate.is_zero() {
        out.push((omega_flip_target(state), omega_rate));
    }
    if !xi_rate.is_zero() {
        out.push((xi_flip_target(state), xi_rate));
    }
    out
}

/// Reaction transitions at a lattice site.
pub fn reaction_rates(
    cfg: &Configuration,
    site: Site,
    params: &ModelParams,
) -> ArrayVec<(State, f64), 2> {
    reaction_rates_from(cfg.get(site), beta(cfg, site, params), params.r, 1.0)
}

/// Bath transitions at a boundary site: to each `j` different from the
/// current state at rate `N^2 b_j`. Zero-rate entries are dropped. The
/// caller is responsible for only invoking this when the boundary channel
/// is enabled.
pub fn boundary_rates(
    cfg: &Configuration,
    site: Site,
    params: &ModelParams,
) -> Result<ArrayVec<(State, f64), 3>, RateError> {
    let geom = cfg.geometry();
    if !geom.is_boundary(site) {
        return Err(RateError::NotBoundary(site));
    }
    let weights = params.b_hat.weights(geom.face(site));
    let sq = params.sq_scale();
    let current = cfg.get(site);
    let mut out = ArrayVec::new();
    for j in 0..4u8 {
        if j == current || weights[j as usize] == 0.0 {
            continue;
        }
        out.push((j, sq * weights[j as usize]));
    }
    Ok(out)
}

/// Exchange rate per unordered nearest-neighbour bond (state independent).
#[inline]
pub fn exchange_rate(params: &ModelParams) -> f64 {
    params.sq_scale()
}

/// Upper bound on the total reaction outflow of any single site:
/// `max(r, 1) + max(2d * max(lambda1, lambda2), 1)`.
pub fn reaction_rate_bound(params: &ModelParams, d: u8) -> f64 {
    let lam = params.lambda1.max(params.lambda2);
    params.r.max(1.0) + (2.0 * d as f64 * lam).max(1.0)
}
