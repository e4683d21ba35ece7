//! Fidelity and loss model for fluorescence readout of a single trapped
//! cesium atom.
//!
//! The crate is organised bottom-up: [`atomic`] holds line data and trap
//! conversions, [`depump`] turns them into state-changing rates, [`counts`]
//! evaluates photon-count statistics and readout errors, [`montecarlo`]
//! simulates the pulsed adaptive protocol shot by shot, and [`inference`]
//! fits histograms and computes binomial intervals.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod atomic;
pub mod counts;
pub mod depump;
pub mod error;
pub mod inference;
pub mod montecarlo;
pub mod presets;
pub mod quadrature;
pub mod scenario;

pub use error::{Error, Result};
