//! Sequential search for an anomalous process among `M` cells under composite
//! hypotheses.
//!
//! The crate provides the deterministic search (DS) policy in its three
//! side-information regimes, the randomized Chernoff and open-loop GLR
//! baselines, a seeded Monte Carlo harness, and a packet-size entropy
//! front-end for the network traffic scenario.

pub mod baselines;
pub mod cli;
pub mod error;
pub mod estimation;
pub mod model;
mod numeric;
pub mod policy;
pub mod simulator;
pub mod statistics;
pub mod traffic;

pub use error::{Error, Result};
