//! Fidelity bounds and diffusive-trajectory simulation for measurement-based
//! feedback control of collective-spin systems.
//!
//! The crate has two halves. The analytic half ([`bounds`]) evaluates
//! steady-state fidelity bounds from model data alone. The numerical half
//! ([`sme`], [`controllers`], [`classical`]) integrates the diffusive
//! stochastic master equation under explicit feedback laws and the reduced
//! classical population equation, so the bounds can be compared against
//! simulated control performance.
//!
//! Basis convention, used everywhere: the l = N/2 sector is ordered with
//! index 0 holding m = +l, descending to index N holding m = -l.

pub mod bounds;
pub mod classical;
pub mod controllers;
pub mod error;
pub mod linalg;
pub mod rng;
pub mod sme;
pub mod spin;

pub use error::{Error, Result};
