//! Simulation and de-multiplexing of scanning magnetometry with two (or more)
//! NV-center spin sensors sharing a single optical readout channel.
//!
//! The crate is organized bottom-up:
//!
//! - [`probe`]: sensor axes, positions and readout parameters.
//! - [`fields`]: analytic field sources (uniform bias, magnetized stripe edge,
//!   thin current sheet with DC or asynchronous AC drive).
//! - [`spinmodel`]: Ramsey phase accumulation, the summed photon-count model,
//!   per-shot Poisson sampling over phase-cycled readout schedules and ODMR spectra.
//! - [`demux`]: recovery of per-sensor mean phases and of the four count
//!   covariances from count and moment matrices.
//! - [`scanner`]: scan orchestration, probe-geometry calibration, Monte Carlo
//!   covariance prediction and sensitivity bookkeeping.
//! - [`cli`]: the `nvmux` command-line front end and its config format.
//!
//! Pixel- and experiment-level Monte Carlo work runs on rayon when the
//! `parallel` feature is enabled (the default); every work item owns a random
//! stream derived from `(seed, index)`, so results do not depend on the
//! worker count.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod demux;
pub mod error;
pub mod fields;
pub mod optimize;
pub mod par;
pub mod probe;
pub mod rng;
pub mod scanner;
pub mod selftest;
pub mod spinmodel;

pub use error::{Error, Result};

/// Cartesian 3-vector. Positions are in nanometers, fields in tesla.
pub type Vec3 = nalgebra::Vector3<f64>;
