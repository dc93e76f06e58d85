//! Joint dynamics of a box-restricted copy and a full copy.
//!
//! The left coordinate evolves as the process restricted to a centered
//! transverse box: transitions outside the box are suppressed, exchanges
//! act only on bonds inside it, and births into the box caused by outside
//! particles are cut (the birth rate counts in-box neighbours only). The
//! right coordinate is the full process. The two are run as one Markov
//! process under the basic coupling: transitions shared by both
//! single-site channels fire jointly (births jointly at the smaller of
//! the two birth rates), the excess fires on one coordinate alone, and
//! exchanges over in-box bonds move both copies together.
//!
//! The load-bearing property is marginal fidelity: projecting the joint
//! rate table onto either coordinate returns that coordinate's own rate
//! table exactly. The table here is generated channel by channel, which
//! makes fidelity structural; the tests verify it exhaustively in exact
//! rational arithmetic.

use crate::kmc::SimError;
use crate::lattice::{omega, xi, Configuration, Site, State, TransverseBox};
use crate::params::ModelParams;
use crate::rates;
use crate::rng::StreamSeed;
use arrayvec::ArrayVec;
use num_traits::Zero;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use std::ops::{Add, Sub};

/// A restricted copy, a full copy, and the restriction box. Both copies
/// share one geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledConfiguration {
    pub left: Configuration,
    pub right: Configuration,
    pub box_m: TransverseBox,
}

impl CoupledConfiguration {
    pub fn new(left: Configuration, right: Configuration, box_m: TransverseBox) -> Self {
        assert_eq!(left.geometry(), right.geometry(), "copies must share a geometry");
        Self { left, right, box_m }
    }

    /// Identical copies from one configuration.
    pub fn diagonal(cfg: Configuration, box_m: TransverseBox) -> Self {
        Self {
            left: cfg.clone(),
            right: cfg,
            box_m,
        }
    }

    /// Sites where the copies disagree.
    pub fn disagreement_count(&self) -> usize {
        let geom = self.left.geometry();
        (0..geom.site_count())
            .filter(|&s| self.left.get(s) != self.right.get(s))
            .count()
    }
}

/// One line of the joint rate table: `None` leaves that coordinate alone.
#[derive(Debug, Clone, PartialEq)]
pub struct JointMove<T> {
    pub left_to: Option<State>,
    pub right_to: Option<State>,
    pub rate: T,
}

/// Joint reaction moves at an in-box site. `beta_left` counts the left
/// copy's in-box neighbours, `beta_right_in` / `beta_right_out` split the
/// right copy's birth rate into in-box and out-of-box neighbour
/// contributions; births couple at the smaller of the two in-box rates
/// and the out-of-box part always fires on the right alone.
pub fn coupled_reaction_moves<T>(
    left_state: State,
    right_state: State,
    beta_left: T,
    beta_right_in: T,
    beta_right_out: T,
    r: T,
    one: T,
) -> ArrayVec<JointMove<T>, 5>
where
    T: Zero + Clone + PartialOrd + Add<Output = T> + Sub<Output = T>,
{
    let mut moves = ArrayVec::new();
    let mut push = |left_to: Option<State>, right_to: Option<State>, rate: T| {
        if !rate.is_zero() {
            moves.push(JointMove {
                left_to,
                right_to,
                rate,
            });
        }
    };

    // Sterile channel: flips couple when both sites hold the same omega.
    let (ol, or_) = (omega(left_state), omega(right_state));
    let omega_rate = |o: u8| if o == 0 { r.clone() } else { one.clone() };
    if ol == or_ {
        push(
            Some(rates::omega_flip_target(left_state)),
            Some(rates::omega_flip_target(right_state)),
            omega_rate(ol),
        );
    } else {
        push(Some(rates::omega_flip_target(left_state)), None, omega_rate(ol));
        push(None, Some(rates::omega_flip_target(right_state)), omega_rate(or_));
    }

    // Wild channel: deaths couple when both hold a wild particle, births
    // couple at the minimum rate with the excess uncoupled.
    let (xl, xr) = (xi(left_state), xi(right_state));
    match (xl, xr) {
        (1, 1) => push(
            Some(rates::xi_flip_target(left_state)),
            Some(rates::xi_flip_target(right_state)),
            one,
        ),
        (0, 0) => {
            let joint = if beta_left <= beta_right_in {
                beta_left.clone()
            } else {
                beta_right_in.clone()
            };
            push(
                Some(rates::xi_flip_target(left_state)),
                Some(rates::xi_flip_target(right_state)),
                joint.clone(),
            );
            push(
                Some(rates::xi_flip_target(left_state)),
                None,
                beta_left - joint.clone(),
            );
            push(
                None,
                Some(rates::xi_flip_target(right_state)),
                beta_right_in - joint + beta_right_out,
            );
        }
        _ => {
            let left_rate = if xl == 0 { beta_left } else { one.clone() };
            push(Some(rates::xi_flip_target(left_state)), None, left_rate);
            let right_rate = if xr == 0 {
                beta_right_in + beta_right_out
            } else {
                one
            };
            push(None, Some(rates::xi_flip_target(right_state)), right_rate);
        }
    }
    moves
}

/// How an exchange over a bond acts on the pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExchangeKind {
    /// Both endpoints inside the box: the copies swap together.
    Joint,
    /// Bond touching the box exterior: the right copy alone swaps.
    RightOnly,
}

/// Classify a bond for the coupled exchange channel. Every bond carries
/// the exchange rate `N^2`; the classification alone decides whether the
/// left copy takes part, so the left marginal is exactly the restricted
/// exchange (in-box bonds only) and the right marginal the full one.
pub fn coupled_exchange_kind(
    geom: &crate::lattice::Geometry,
    bound_box: &TransverseBox,
    bond: &crate::lattice::Bond,
) -> ExchangeKind {
    if bound_box.contains(geom, bond.tail) && bound_box.contains(geom, bond.head) {
        ExchangeKind::Joint
    } else {
        ExchangeKind::RightOnly
    }
}

/// Reaction moves at a site outside the box: the right coordinate alone,
/// at its full single-copy rates.
pub fn right_only_reaction_moves<T>(
    right_state: State,
    beta_full: T,
    r: T,
    one: T,
) -> ArrayVec<JointMove<T>, 5>
where
    T: Zero + Clone + PartialOrd,
{
    let mut moves = ArrayVec::new();
    for (to, rate) in rates::reaction_rates_from(right_state, beta_full, r, one) {
        moves.push(JointMove {
            left_to: None,
            right_to: Some(to),
            rate,
        });
    }
    moves
}

/// Bath moves at a boundary site (rates in units of the `N^2` speed-up):
/// inside the box both coordinates jump to the same bath state, outside
/// only the right coordinate moves. Total no-ops are dropped.
pub fn coupled_boundary_moves<T>(
    left_state: State,
    right_state: State,
    weights: &[T; 4],
    in_box: bool,
) -> ArrayVec<JointMove<T>, 4>
where
    T: Zero + Clone + PartialOrd,
{
    let mut moves = ArrayVec::new();
    for j in 0..4u8 {
        let rate = weights[j as usize].clone();
        if rate.is_zero() {
            continue;
        }
        let left_to = (in_box && j != left_state).then_some(j);
        let right_to = (j != right_state).then_some(j);
        if left_to.is_none() && right_to.is_none() {
            continue;
        }
        moves.push(JointMove {
            left_to,
            right_to,
            rate,
        });
    }
    moves
}

/// Envelope on the total coupled reaction outflow of one site.
pub fn coupled_reaction_bound(params: &ModelParams, d: u8) -> f64 {
    let lam = params.lambda1.max(params.lambda2);
    (params.r + 1.0) + (4.0 * d as f64 * lam).max(2.0)
}

/// Weighted discrepancy between the copies for one type `i` in `0..=3`:
/// `N^(-d-1) sum_(n=1)^(M-1) e^(-n/N) H_(i,n)` where `H_(i,n)` counts the
/// disagreeing sites within transverse radius `n`.
pub fn discrepancy_h(pair: &CoupledConfiguration, i: State) -> f64 {
    let geom = pair.left.geometry();
    let n_scale = geom.half_width().max(1) as f64;
    let m = pair.box_m.radius;
    if m < 2 {
        return 0.0;
    }
    let max_ring = if geom.d() == 1 {
        0
    } else {
        (geom.transverse_len() / 2) as usize
    };
    let mut cum = vec![0u64; max_ring + 1];
    for site in 0..geom.site_count() {
        let li = (pair.left.get(site) == i) as u64;
        let ri = (pair.right.get(site) == i) as u64;
        if li != ri {
            cum[geom.transverse_dist(site) as usize] += 1;
        }
    }
    for k in 1..cum.len() {
        cum[k] += cum[k - 1];
    }
    let mut h = 0.0;
    for n in 1..m as usize {
        let ring = n.min(max_ring);
        h += (-(n as f64) / n_scale).exp() * cum[ring] as f64;
    }
    h / n_scale.powi(geom.d() as i32 + 1)
}

/// Sum of [`discrepancy_h`] over the four types.
pub fn discrepancy_total(pair: &CoupledConfiguration) -> f64 {
    (0..4u8).map(|i| discrepancy_h(pair, i)).sum()
}

/// One applied change of the coupled pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoupledEvent {
    /// In-box bond: both copies swap.
    JointExchange { bond: usize, tail: Site, head: Site },
    /// Bond touching the box exterior: the right copy alone swaps.
    RightExchange { bond: usize, tail: Site, head: Site },
    Reaction {
        site: Site,
        left: Option<(State, State)>,
        right: Option<(State, State)>,
    },
    Boundary {
        site: Site,
        left: Option<(State, State)>,
        right: Option<(State, State)>,
    },
}

pub trait CoupledObserver {
    fn on_event(&mut self, t: f64, event: &CoupledEvent, before: &CoupledConfiguration);
    fn finalize(&mut self, _t_end: f64, _final_pair: &CoupledConfiguration) {}
}

/// Exact event-driven run of the coupled generator; same rejection scheme
/// as the single-copy engine.
pub fn simulate_coupled(
    init: &CoupledConfiguration,
    params: &ModelParams,
    t_end: f64,
    seed: StreamSeed,
    observers: &mut [&mut dyn CoupledObserver],
) -> Result<CoupledConfiguration, SimError> {
    if t_end < 0.0 {
        return Err(SimError::NegativeHorizon(t_end));
    }
    let geom = *init.left.geometry();
    let bound_box = init.box_m;
    let mut pair = init.clone();
    let mut rng = seed.rng();

    let bonds = if params.exchange_on { geom.bonds() } else { Vec::new() };
    let bond_joint: Vec<bool> = bonds
        .iter()
        .map(|b| coupled_exchange_kind(&geom, &bound_box, b) == ExchangeKind::Joint)
        .collect();
    let boundary: Vec<Site> = if params.boundary_on {
        geom.boundary_sites()
    } else {
        Vec::new()
    };
    let in_box: Vec<bool> = (0..geom.site_count())
        .map(|s| bound_box.contains(&geom, s))
        .collect();

    let sq = params.sq_scale();
    let exch_env = sq * bonds.len() as f64;
    let site_bound = coupled_reaction_bound(params, geom.d());
    let react_env = if params.reaction_on {
        site_bound * geom.site_count() as f64
    } else {
        0.0
    };
    let bdry_env = sq * boundary.len() as f64;
    let envelope = exch_env + react_env + bdry_env;
    if !envelope.is_finite() {
        return Err(SimError::NonfiniteRate);
    }
    if envelope == 0.0 {
        for obs in observers.iter_mut() {
            obs.finalize(t_end, &pair);
        }
        return Ok(pair);
    }

    let beta_split = |cfg: &Configuration, site: Site, box_only: bool| -> (f64, f64) {
        // (in-box contribution, out-of-box contribution)
        let mut inside = 0.0;
        let mut outside = 0.0;
        for &nb in geom.neighbors(site).iter() {
            let contrib = match cfg.get(nb) {
                1 => params.lambda1,
                3 => params.lambda2,
                _ => continue,
            };
            if in_box[nb] {
                inside += contrib;
            } else {
                outside += contrib;
            }
        }
        if box_only {
            (inside, 0.0)
        } else {
            (inside, outside)
        }
    };

    let mut t = 0.0f64;
    loop {
        let step: f64 = Exp1.sample(&mut rng);
        t += step / envelope;
        if t > t_end {
            break;
        }
        let pick = rng.gen::<f64>() * envelope;
        if pick < exch_env {
            let b = rng.gen_range(0..bonds.len());
            let bond = bonds[b];
            if bond_joint[b] {
                let left_real = pair.left.get(bond.tail) != pair.left.get(bond.head);
                let right_real = pair.right.get(bond.tail) != pair.right.get(bond.head);
                if left_real || right_real {
                    let event = CoupledEvent::JointExchange {
                        bond: b,
                        tail: bond.tail,
                        head: bond.head,
                    };
                    for obs in observers.iter_mut() {
                        obs.on_event(t, &event, &pair);
                    }
                    pair.left.swap(bond.tail, bond.head);
                    pair.right.swap(bond.tail, bond.head);
                }
            } else if pair.right.get(bond.tail) != pair.right.get(bond.head) {
                let event = CoupledEvent::RightExchange {
                    bond: b,
                    tail: bond.tail,
                    head: bond.head,
                };
                for obs in observers.iter_mut() {
                    obs.on_event(t, &event, &pair);
                }
                pair.right.swap(bond.tail, bond.head);
            }
        } else if pick < exch_env + react_env {
            let site = rng.gen_range(0..geom.site_count());
            let ls = pair.left.get(site);
            let rs = pair.right.get(site);
            let moves = if in_box[site] {
                let (bl, _) = beta_split(&pair.left, site, true);
                let (br_in, br_out) = beta_split(&pair.right, site, false);
                coupled_reaction_moves(ls, rs, bl, br_in, br_out, params.r, 1.0)
            } else {
                let (br_in, br_out) = beta_split(&pair.right, site, false);
                right_only_reaction_moves(rs, br_in + br_out, params.r, 1.0)
            };
            let mut u = rng.gen::<f64>() * site_bound;
            let mut chosen = None;
            for mv in &moves {
                if u < mv.rate {
                    chosen = Some(mv.clone());
                    break;
                }
                u -= mv.rate;
            }
            let Some(mv) = chosen else { continue };
            let event = CoupledEvent::Reaction {
                site,
                left: mv.left_to.map(|to| (ls, to)),
                right: mv.right_to.map(|to| (rs, to)),
            };
            for obs in observers.iter_mut() {
                obs.on_event(t, &event, &pair);
            }
            if let Some(to) = mv.left_to {
                pair.left.set(site, to);
            }
            if let Some(to) = mv.right_to {
                pair.right.set(site, to);
            }
        } else {
            let site = boundary[rng.gen_range(0..boundary.len())];
            let ls = pair.left.get(site);
            let rs = pair.right.get(site);
            let weights = params.b_hat.weights(geom.face(site));
            let u = rng.gen::<f64>();
            let mut acc = 0.0;
            let mut target = None;
            for (j, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    target = Some(j as State);
                    break;
                }
            }
            let Some(j) = target else { continue };
            let left_to = (in_box[site] && j != ls).then_some(j);
            let right_to = (j != rs).then_some(j);
            if left_to.is_none() && right_to.is_none() {
                continue;
            }
            let event = CoupledEvent::Boundary {
                site,
                left: left_to.map(|to| (ls, to)),
                right: right_to.map(|to| (rs, to)),
            };
            for obs in observers.iter_mut() {
                obs.on_event(t, &event, &pair);
            }
            if let Some(to) = left_to {
                pair.left.set(site, to);
            }
            if let Some(to) = right_to {
                pair.right.set(site, to);
            }
        }
    }

    for obs in observers.iter_mut() {
        obs.finalize(t_end, &pair);
    }
    Ok(pair)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{BoundaryMode, Geometry};

    fn params() -> ModelParams {
        ModelParams::new(2.0, 1.0, 0.5, [0.3, 0.2, 0.1], 1)
    }

    #[test]
    fn unequal_pair_couples_births() {
        // Left 2, right 0, equal neighbourhoods: joint move to (3, 1) at
        // the common birth rate.
        let moves = coupled_reaction_moves(2u8, 0u8, 1.5, 1.5, 0.0, 0.5, 1.0);
        let joint = moves
            .iter()
            .find(|m| m.left_to == Some(3) && m.right_to == Some(1))
            .expect("joint birth missing");
        assert_eq!(joint.rate, 1.5);
        // The sterile channels point in opposite directions and fire alone.
        assert!(moves
            .iter()
            .any(|m| m.left_to == Some(0) && m.right_to.is_none() && m.rate == 1.0));
        assert!(moves
            .iter()
            .any(|m| m.right_to == Some(2) && m.left_to.is_none() && m.rate == 0.5));
    }

    #[test]
    fn equal_pair_only_joint_moves() {
        for state in 0..4u8 {
            let moves = coupled_reaction_moves(state, state, 1.5, 1.5, 0.0, 0.5, 1.0);
            for mv in &moves {
                assert!(mv.left_to.is_some() && mv.right_to.is_some());
                assert_eq!(mv.left_to, mv.right_to);
            }
        }
    }

    #[test]
    fn out_of_box_births_fire_right_only() {
        let moves = coupled_reaction_moves(0u8, 0u8, 1.0, 1.0, 0.75, 0.5, 1.0);
        let right_excess = moves
            .iter()
            .find(|m| m.left_to.is_none() && m.right_to == Some(1))
            .expect("right-only excess birth missing");
        assert_eq!(right_excess.rate, 0.75);
    }

    #[test]
    fn exchange_bonds_classified_by_box() {
        let geom = Geometry::new(2, 1, 6, BoundaryMode::Reservoirs).unwrap();
        let bound_box = TransverseBox::new(1);
        let bonds = geom.bonds();
        let mut joint = 0usize;
        let mut right_only = 0usize;
        for bond in &bonds {
            match coupled_exchange_kind(&geom, &bound_box, bond) {
                ExchangeKind::Joint => {
                    assert!(bound_box.contains(&geom, bond.tail));
                    assert!(bound_box.contains(&geom, bond.head));
                    joint += 1;
                }
                ExchangeKind::RightOnly => {
                    assert!(
                        !bound_box.contains(&geom, bond.tail)
                            || !bound_box.contains(&geom, bond.head)
                    );
                    right_only += 1;
                }
            }
        }
        assert!(joint > 0 && right_only > 0);
        // In d = 1 the box spans the axis, so every bond is joint.
        let line = Geometry::strip_1d(3);
        for bond in line.bonds() {
            assert_eq!(
                coupled_exchange_kind(&line, &TransverseBox::new(0), &bond),
                ExchangeKind::Joint
            );
        }
    }

    #[test]
    fn boundary_moves_match_faces() {
        let weights = [0.4, 0.3, 0.2, 0.1];
        let joint = coupled_boundary_moves(0u8, 1u8, &weights, true);
        // j = 0: right moves alone (left already there); j = 1: left
        // alone; j = 2, 3: both.
        assert!(joint
            .iter()
            .any(|m| m.left_to.is_none() && m.right_to == Some(0) && m.rate == 0.4));
        assert!(joint
            .iter()
            .any(|m| m.left_to == Some(1) && m.right_to.is_none() && m.rate == 0.3));
        assert!(joint
            .iter()
            .any(|m| m.left_to == Some(2) && m.right_to == Some(2)));
        let outside = coupled_boundary_moves(0u8, 1u8, &weights, false);
        assert!(outside.iter().all(|m| m.left_to.is_none()));
        assert!(outside.iter().any(|m| m.right_to == Some(0)));
    }

    #[test]
    fn identical_diagonal_stays_identical_when_box_covers() {
        let geom = Geometry::new(2, 1, 4, BoundaryMode::Reservoirs).unwrap();
        let cfg = {
            let states: Vec<State> = (0..geom.site_count()).map(|i| ((i * 7) % 4) as State).collect();
            Configuration::from_states(geom, &states)
        };
        let box_m = TransverseBox::new(geom.transverse_len());
        assert!(box_m.covers(&geom));
        struct DiagCheck;
        impl CoupledObserver for DiagCheck {
            fn on_event(&mut self, _t: f64, _event: &CoupledEvent, before: &CoupledConfiguration) {
                assert_eq!(before.disagreement_count(), 0);
            }
        }
        let init = CoupledConfiguration::diagonal(cfg, box_m);
        let mut check = DiagCheck;
        let out = simulate_coupled(&init, &params(), 1.0, 21.into(), &mut [&mut check]).unwrap();
        assert_eq!(out.disagreement_count(), 0);
    }

    #[test]
    fn discrepancy_examples() {
        let geom = Geometry::strip_1d(4);
        let cfg = Configuration::empty(geom);
        let box_m = TransverseBox::new(16);
        let mut pair = CoupledConfiguration::diagonal(cfg, box_m);
        assert_eq!(discrepancy_total(&pair), 0.0);

        // One disagreeing site (the center): every box sees it.
        pair.right.set(geom.site_at(0, 0), 1);
        let n = geom.half_width() as f64;
        let expect: f64 = (1..16).map(|k| (-(k as f64) / n).exp()).sum::<f64>() / (n * n);
        assert!((discrepancy_h(&pair, 0) - expect).abs() < 1e-12);
        assert!((discrepancy_h(&pair, 1) - expect).abs() < 1e-12);
        assert_eq!(discrepancy_h(&pair, 2), 0.0);

        // Extra disagreement never decreases h.
        let before = discrepancy_total(&pair);
        pair.right.set(geom.site_at(2, 0), 3);
        assert!(discrepancy_total(&pair) >= before);
    }

    #[test]
    fn right_marginal_sees_full_dynamics_outside_box() {
        // d = 2, one column outside the box: left never changes there.
        let geom = Geometry::new(2, 0, 4, BoundaryMode::Reservoirs).unwrap();
        let box_m = TransverseBox::new(1);
        assert!(!box_m.covers(&geom));
        let outside_site = geom.site_at(0, 2);
        assert!(!box_m.contains(&geom, outside_site));
        let init = CoupledConfiguration::diagonal(Configuration::empty(geom), box_m);
        let out = simulate_coupled(&init, &params(), 2.0, 5.into(), &mut []).unwrap();
        // The left copy outside the box is frozen at its initial state.
        assert_eq!(out.left.get(outside_site), 0);
    }
}
