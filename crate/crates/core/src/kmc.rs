//! Event-driven simulation of the jump process.
//!
//! Rejection kinetic Monte Carlo with a constant envelope: tentative event
//! times arrive as a Poisson stream at the envelope rate
//! [`total_rate_bound`], a channel is picked proportionally to its share of
//! the envelope, a bond or site is picked uniformly inside the channel, and
//! the move is accepted with probability (true rate)/(envelope share).
//! Thinning keeps the law exactly that of the generator — there is no time
//! discretization — at O(1) work per tentative event.
//!
//! Exchange proposals are always accepted (the exchange rate is state
//! independent); swaps of equal states are executed as accepted events but
//! not reported to observers.

use crate::lattice::{Bond, Configuration, Site, State};
use crate::params::ModelParams;
use crate::rates;
use crate::rng::StreamSeed;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("nonfinite total rate bound")]
    NonfiniteRate,
    #[error("t_end must be nonnegative, got {0}")]
    NegativeHorizon(f64),
}

/// One applied state change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Event {
    /// Exchange across a bond; the endpoint states (unequal) are swapped.
    Exchange { bond: usize, tail: Site, head: Site },
    /// Contact-process flip at a site.
    Reaction { site: Site, from: State, to: State },
    /// Bath flip at a boundary site.
    Boundary { site: Site, from: State, to: State },
}

/// Macroscopic clock of a run; `event_count` counts reported events.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimClock {
    pub t: f64,
    pub event_count: u64,
}

/// Synchronous event sink. Observers see every reported event in time
/// order, with the configuration still in its pre-event state, and must be
/// O(1) amortized per event.
pub trait Observer {
    fn on_event(&mut self, t: f64, event: &Event, before: &Configuration);

    /// Tentative (envelope) event times, including rejected proposals.
    fn on_tentative(&mut self, _t: f64) {}

    /// Called once after the last event with the final configuration.
    fn finalize(&mut self, _t_end: f64, _final_config: &Configuration) {}
}

/// Upper bound on the total jump rate of any configuration:
/// `N^2 #bonds + #sites * reaction bound + N^2 #boundary`, with disabled
/// channels contributing zero.
pub fn total_rate_bound(cfg: &Configuration, params: &ModelParams) -> f64 {
    let geom = cfg.geometry();
    let mut bound = 0.0;
    if params.exchange_on {
        bound += rates::exchange_rate(params) * geom.bonds().len() as f64;
    }
    if params.reaction_on {
        bound += rates::reaction_rate_bound(params, geom.d()) * geom.site_count() as f64;
    }
    if params.boundary_on {
        bound += params.sq_scale() * geom.boundary_sites().len() as f64;
    }
    bound
}

/// Run the process from `init` until `t_end`. The returned configuration
/// is distributed exactly as the jump process at `t_end`; identical
/// `(init, params, t_end, seed)` reproduce the identical event stream.
pub fn simulate(
    init: &Configuration,
    params: &ModelParams,
    t_end: f64,
    seed: StreamSeed,
    observers: &mut [&mut dyn Observer],
) -> Result<Configuration, SimError> {
    let mut clock = SimClock::default();
    simulate_with_clock(init, params, t_end, seed, observers, &mut clock)
}

/// [`simulate`] with the final clock (time and reported-event count)
/// written into `clock`.
pub fn simulate_with_clock(
    init: &Configuration,
    params: &ModelParams,
    t_end: f64,
    seed: StreamSeed,
    observers: &mut [&mut dyn Observer],
    clock: &mut SimClock,
) -> Result<Configuration, SimError> {
    if t_end < 0.0 {
        return Err(SimError::NegativeHorizon(t_end));
    }
    let geom = *init.geometry();
    let mut cfg = init.clone();
    let mut rng = seed.rng();

    let bonds: Vec<Bond> = if params.exchange_on { geom.bonds() } else { Vec::new() };
    let boundary: Vec<Site> = if params.boundary_on {
        geom.boundary_sites()
    } else {
        Vec::new()
    };
    let exch_env = rates::exchange_rate(params) * bonds.len() as f64;
    let site_bound = rates::reaction_rate_bound(params, geom.d());
    let react_env = if params.reaction_on {
        site_bound * geom.site_count() as f64
    } else {
        0.0
    };
    let bdry_env = params.sq_scale() * boundary.len() as f64;
    let envelope = exch_env + react_env + bdry_env;
    if !envelope.is_finite() {
        return Err(SimError::NonfiniteRate);
    }
    if envelope == 0.0 {
        for obs in observers.iter_mut() {
            obs.finalize(t_end, &cfg);
        }
        clock.t = t_end;
        return Ok(cfg);
    }

    let mut t = 0.0f64;
    loop {
        let step: f64 = Exp1.sample(&mut rng);
        t += step / envelope;
        if t > t_end {
            break;
        }
        for obs in observers.iter_mut() {
            obs.on_tentative(t);
        }
        let pick = rng.gen::<f64>() * envelope;
        if pick < exch_env {
            let b = rng.gen_range(0..bonds.len());
            let bond = bonds[b];
            if cfg.get(bond.tail) != cfg.get(bond.head) {
                let event = Event::Exchange {
                    bond: b,
                    tail: bond.tail,
                    head: bond.head,
                };
                clock.event_count += 1;
                for obs in observers.iter_mut() {
                    obs.on_event(t, &event, &cfg);
                }
                cfg.swap(bond.tail, bond.head);
            }
        } else if pick < exch_env + react_env {
            let site = rng.gen_range(0..geom.site_count());
            let from = cfg.get(site);
            let beta = rates::beta(&cfg, site, params);
            let (omega_rate, xi_rate) = rates::flip_rates(from, beta, params.r, 1.0);
            let u = rng.gen::<f64>() * site_bound;
            let to = if u < omega_rate {
                rates::omega_flip_target(from)
            } else if u < omega_rate + xi_rate {
                rates::xi_flip_target(from)
            } else {
                continue; // rejected by thinning
            };
            let event = Event::Reaction { site, from, to };
            clock.event_count += 1;
            for obs in observers.iter_mut() {
                obs.on_event(t, &event, &cfg);
            }
            cfg.set(site, to);
        } else {
            let site = boundary[rng.gen_range(0..boundary.len())];
            let from = cfg.get(site);
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
            // Falling through (u within rounding of 1) or drawing the
            // current state is a rejected proposal.
            let Some(to) = target else { continue };
            if to == from {
                continue;
            }
            let event = Event::Boundary { site, from, to };
            clock.event_count += 1;
            for obs in observers.iter_mut() {
                obs.on_event(t, &event, &cfg);
            }
            cfg.set(site, to);
        }
    }

    for obs in observers.iter_mut() {
        obs.finalize(t_end, &cfg);
    }
    clock.t = t_end;
    Ok(cfg)
}

/// Counts reported events by kind.
#[derive(Debug, Default, Clone, Copy)]
pub struct EventCounter {
    pub exchange: u64,
    pub reaction: u64,
    pub boundary: u64,
}

impl EventCounter {
    pub fn total(&self) -> u64 {
        self.exchange + self.reaction + self.boundary
    }
}

impl Observer for EventCounter {
    fn on_event(&mut self, _t: f64, event: &Event, _before: &Configuration) {
        match event {
            Event::Exchange { .. } => self.exchange += 1,
            Event::Reaction { .. } => self.reaction += 1,
            Event::Boundary { .. } => self.boundary += 1,
        }
    }
}

/// NDJSON event log, one object per reported event. Off the hot path by
/// default; attach only when event capture is requested.
pub struct EventLogger<W: Write> {
    out: W,
}

impl<W: Write> EventLogger<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }
}

impl<W: Write> Observer for EventLogger<W> {
    fn on_event(&mut self, t: f64, event: &Event, _before: &Configuration) {
        let line = match event {
            Event::Exchange { tail, head, .. } => format!(
                "{{\"t\":{t:.12e},\"kind\":\"exchange\",\"bond\":[{tail},{head}]}}\n"
            ),
            Event::Reaction { site, from, to } => format!(
                "{{\"t\":{t:.12e},\"kind\":\"reaction\",\"site\":{site},\"from\":{from},\"to\":{to}}}\n"
            ),
            Event::Boundary { site, from, to } => format!(
                "{{\"t\":{t:.12e},\"kind\":\"boundary\",\"site\":{site},\"from\":{from},\"to\":{to}}}\n"
            ),
        };
        self.out
            .write_all(line.as_bytes())
            .expect("event log write failed");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator;
    use crate::lattice::{BoundaryMode, Geometry};

    struct Recorder {
        events: Vec<(f64, Event)>,
        tentative: Vec<f64>,
    }

    impl Recorder {
        fn new() -> Self {
            Self {
                events: Vec::new(),
                tentative: Vec::new(),
            }
        }
    }

    impl Observer for Recorder {
        fn on_event(&mut self, t: f64, event: &Event, _before: &Configuration) {
            self.events.push((t, *event));
        }
        fn on_tentative(&mut self, t: f64) {
            self.tentative.push(t);
        }
    }

    fn full_params() -> ModelParams {
        ModelParams::new(2.0, 1.0, 0.5, [0.3, 0.2, 0.1], 1)
    }

    #[test]
    fn all_toggles_off_is_frozen() {
        let geom = Geometry::strip_1d(2);
        let init = Configuration::from_states(geom, &[1, 2, 3, 0, 1]);
        let mut params = full_params();
        params.reaction_on = false;
        params.exchange_on = false;
        params.boundary_on = false;
        let mut rec = Recorder::new();
        let final_cfg = simulate(&init, &params, 5.0, 1.into(), &mut [&mut rec]).unwrap();
        assert_eq!(final_cfg, init);
        assert!(rec.events.is_empty());
    }

    #[test]
    fn empty_config_absorbing_without_sources() {
        // r = 0 and baths that inject only emptiness: nothing can be born.
        let geom = Geometry::strip_1d(2);
        let init = Configuration::empty(geom);
        let mut params = ModelParams::new(2.0, 1.0, 0.0, [0.0, 0.0, 0.0], 1);
        params.exchange_on = true;
        let mut counter = EventCounter::default();
        let final_cfg = simulate(&init, &params, 10.0, 7.into(), &mut [&mut counter]).unwrap();
        assert_eq!(final_cfg.occupancy_counts(), [5, 0, 0, 0]);
        assert_eq!(counter.total(), 0);
    }

    #[test]
    fn envelope_bound_examples() {
        let geom = Geometry::strip_1d(2);
        let cfg = Configuration::empty(geom);
        let mut params = ModelParams::new(2.0, 1.0, 0.5, [0.3, 0.2, 0.1], 2);
        params.reaction_on = false;
        params.boundary_on = false;
        assert_eq!(total_rate_bound(&cfg, &params), 16.0); // 4 bonds * N^2

        let full = full_params();
        let sum = {
            let mut p = full;
            p.reaction_on = false;
            p.boundary_on = false;
            let mut q = full;
            q.exchange_on = false;
            q.boundary_on = false;
            let mut b = full;
            b.exchange_on = false;
            b.reaction_on = false;
            total_rate_bound(&cfg, &p) + total_rate_bound(&cfg, &q) + total_rate_bound(&cfg, &b)
        };
        assert_eq!(total_rate_bound(&cfg, &full), sum);
    }

    #[test]
    fn identical_seeds_identical_streams() {
        let geom = Geometry::strip_1d(2);
        let init = Configuration::from_states(geom, &[1, 0, 2, 3, 0]);
        let params = full_params();
        let mut rec1 = Recorder::new();
        let mut rec2 = Recorder::new();
        let out1 = simulate(&init, &params, 2.0, 42.into(), &mut [&mut rec1]).unwrap();
        let out2 = simulate(&init, &params, 2.0, 42.into(), &mut [&mut rec2]).unwrap();
        assert_eq!(out1, out2);
        assert_eq!(rec1.events.len(), rec2.events.len());
        for (a, b) in rec1.events.iter().zip(&rec2.events) {
            assert_eq!(a.0.to_bits(), b.0.to_bits());
            assert_eq!(a.1, b.1);
        }
    }

    #[test]
    fn only_flips_change_occupancy_counts() {
        struct CountCheck {
            counts: [usize; 4],
        }
        impl Observer for CountCheck {
            fn on_event(&mut self, _t: f64, event: &Event, before: &Configuration) {
                assert_eq!(before.occupancy_counts(), self.counts);
                match *event {
                    Event::Exchange { .. } => {}
                    Event::Reaction { from, to, .. } | Event::Boundary { from, to, .. } => {
                        self.counts[from as usize] -= 1;
                        self.counts[to as usize] += 1;
                    }
                }
            }
            fn finalize(&mut self, _t_end: f64, final_config: &Configuration) {
                assert_eq!(final_config.occupancy_counts(), self.counts);
            }
        }
        let geom = Geometry::new(2, 1, 3, BoundaryMode::Reservoirs).unwrap();
        let init = Configuration::from_states(geom, &[1, 0, 2, 3, 0, 1, 2, 0, 0]);
        let mut check = CountCheck {
            counts: init.occupancy_counts(),
        };
        let final_cfg = simulate(&init, &full_params(), 1.0, 3.into(), &mut [&mut check]).unwrap();
        assert_eq!(final_cfg.occupancy_counts().iter().sum::<usize>(), 9);
    }

    #[test]
    fn tentative_interarrivals_pass_ks() {
        // Envelope arrivals are a homogeneous Poisson stream; the scaled
        // inter-arrival gaps must look Exp(1). One-sample KS at the 1%
        // level, n = 4000, critical value 1.63 / sqrt(n).
        let geom = Geometry::strip_1d(3);
        let init = Configuration::from_states(geom, &[1, 2, 0, 3, 1, 0, 2]);
        let params = full_params();
        let cfg_rate = total_rate_bound(&init, &params);
        let mut rec = Recorder::new();
        simulate(&init, &params, 4000.0 / cfg_rate * 1.2, 11.into(), &mut [&mut rec]).unwrap();
        let mut gaps: Vec<f64> = rec
            .tentative
            .windows(2)
            .map(|w| (w[1] - w[0]) * cfg_rate)
            .take(4000)
            .collect();
        assert!(gaps.len() >= 3000, "not enough tentative events");
        gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = gaps.len() as f64;
        let mut d = 0.0f64;
        for (i, g) in gaps.iter().enumerate() {
            let cdf = 1.0 - (-g).exp();
            let hi = (i as f64 + 1.0) / n - cdf;
            let lo = cdf - i as f64 / n;
            d = d.max(hi).max(lo);
        }
        assert!(
            d < 1.63 / n.sqrt(),
            "KS statistic {d} above the 1% critical value"
        );
    }

    #[test]
    fn matches_uniformization_on_two_site_strip() {
        // Smoke version of the acceptance oracle check: 2-site lattice,
        // full dynamics, 1e5 replicas.
        let geom = Geometry::new(2, 0, 2, BoundaryMode::Reservoirs).unwrap();
        let init = Configuration::from_states(geom, &[1, 0]);
        let params = full_params();
        let gen = generator::build_generator(geom, &params).unwrap();
        let mut delta = vec![0.0; gen.dim()];
        delta[generator::index_of_config(&init)] = 1.0;
        let expected = generator::transient_distribution(&gen, &delta, 0.5);

        let replicas = 100_000u64;
        let mut counts = vec![0u64; gen.dim()];
        for rep in 0..replicas {
            let out = simulate(
                &init,
                &params,
                0.5,
                StreamSeed::replica(2024, rep),
                &mut [],
            )
            .unwrap();
            counts[generator::index_of_config(&out)] += 1;
        }
        let empirical: Vec<f64> = counts
            .iter()
            .map(|&c| c as f64 / replicas as f64)
            .collect();
        let tv = generator::total_variation(&empirical, &expected);
        assert!(tv < 0.02, "total variation {tv} too large");
    }
}
