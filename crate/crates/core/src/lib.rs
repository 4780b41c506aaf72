//! Localization from sequential pseudoranges in a time-division broadcast
//! positioning system.
//!
//! Base stations transmit one after another, so a user device collects its
//! pseudoranges at different instants while it moves and its clock drifts.
//! This crate models those measurements with a short-time linear motion and
//! clock model and provides:
//!
//! - [`model`]: the pseudorange forward model, line-of-sight vectors, design
//!   matrices, residuals and weights.
//! - [`estimators`]: Gauss-Newton solvers for known velocity (KVD), unknown
//!   velocity (UVD), Gaussian velocity prior (PVD, a MAP estimator) and the
//!   drift-only baseline (LSPM-D).
//! - [`analysis`]: Fisher information, CRLB, bias and RMSE predictions.
//! - [`simulator`]: trajectories, drifting clocks, TDMA schedules, noisy
//!   batches and a deterministic parallel Monte Carlo runner.
//!
//! Clock offset and drift are carried in range units throughout (meters and
//! meters per second); the propagation speed only appears when converting a
//! drift given in ppm, see [`simulator::ClockModel::from_ppm`].

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod estimators;
mod linalg;
pub mod model;
pub mod simulator;

pub use error::{Error, Result};
