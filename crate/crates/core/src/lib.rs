//! Coordinated charging of electric-vehicle fleets across several aggregators.
//!
//! The crate is organised bottom-up:
//!
//! * [`lp`]: bounded-variable simplex with dual values.
//! * [`grid`]: DC network model, shift factors and the OPF that produces
//!   locational marginal prices.
//! * [`fleet`]: EV sessions, battery dynamics, tariffs and a seeded
//!   population generator.
//! * [`aggregator`]: per-session receding-horizon schedule optimisation and
//!   profit accounting.
//! * [`market`]: the inter-aggregator auction, pro-rata balancing and the
//!   settlement round with trade voiding.
//! * [`oracle`]: exact (sign-pattern enumeration) and relaxed centralised
//!   solvers used to measure the heuristic's optimality gap.
//! * [`coordinator`]: per-slot price iteration, MPC rolling and the five
//!   comparison modes.
//! * [`scenario`]: price series, load profiles and scenario assembly.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregator;
pub mod coordinator;
pub mod fleet;
pub mod grid;
pub mod lp;
pub mod market;
pub mod oracle;
pub mod scenario;

/// Aggregator identifier. Aggregators are numbered densely from zero.
pub type AggregatorId = usize;
