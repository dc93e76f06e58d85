//! Two-species contact process with rapid stirring and boundary
//! reservoirs: exact event-driven simulation, its reaction-diffusion
//! limit, and the measurement machinery tying the two together.
//!
//! The microscopic model lives on a strip `{-N..N} x T^(d-1)`: each site
//! is empty, holds a wild particle, a sterile particle, or both. Three
//! channels drive it — a contact process with sterile release, a
//! nearest-neighbour stirring at rate `N^2`, and birth-death baths on the
//! two faces at rate `N^2 b_j`. Under diffusive scaling the empirical
//! densities follow a system of reaction-diffusion equations with
//! Dirichlet data; this crate implements both levels and the experiments
//! that compare them at desk scale:
//!
//! * [`lattice`] — geometry, packed configurations, state encoding;
//! * [`rates`] — per-channel transition rates and envelope bounds;
//! * [`generator`] — exact rate matrix + uniformization oracle for tiny
//!   lattices;
//! * [`kmc`] — exact rejection kinetic Monte Carlo engine;
//! * [`measure`] — initial product measures, test functions, empirical
//!   pairings, current ledgers and their compensators;
//! * [`pde`] — finite-difference solver for the limit system and the
//!   weak-form residual checker;
//! * [`spectral`] — independent Dirichlet-eigenbasis solver (Duhamel
//!   fixed point) used as a cross-validation oracle;
//! * [`coupling`] — basic coupling of a box-restricted copy with the full
//!   process and its discrepancy functional;
//! * [`harness`] — config-driven experiment runners and CSV emission.

// Numeric kernels here walk several parallel arrays per component index;
// plain index loops read better than zipped iterators for those.
#![allow(clippy::needless_range_loop)]

pub mod coupling;
pub mod generator;
pub mod harness;
pub mod kmc;
pub mod lattice;
pub mod measure;
pub mod params;
pub mod pde;
pub mod rates;
pub mod rng;
pub mod spectral;
