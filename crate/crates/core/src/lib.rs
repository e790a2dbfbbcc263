//! Numerical core for fast single-qubit gate calibration under continuous weak
//! measurement in a non-Markovian bath.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure function
//! of its inputs and an explicit seed, so ensembles can be fanned out by the
//! caller on any executor and still reproduce bit-for-bit.
//!
//! Units: time in ns, every angular frequency (and every rate) in rad/ns.
//! [`units::mhz`] converts a cyclic frequency quoted in MHz.
//!
//! Module map:
//!
//! * [`env`]: time-dependent dissipation and diffusion kernels of the bath.
//! * [`pulse`]: Gaussian/DRAG drive envelopes and carrier.
//! * [`dynamics`]: Bloch-form stochastic master equation and its integrator.
//! * [`estimator`]: the real-time optimal state estimator and the pure-state
//!   estimator that removes measurement back-action.
//! * [`fidelity`]: state overlaps and six-eigenstate gate fidelity.
//! * [`bayes`]: Gaussian-process Bayesian optimizer over `(alpha_s, phi)`.
#![no_std]
// Negated comparisons reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bayes;
pub mod dynamics;
pub mod env;
mod error;
pub mod estimator;
pub mod fidelity;
pub mod linalg;
pub mod pulse;
pub mod rng;
pub mod units;

pub use error::{Error, Result};
