//! Sensor-data pipeline and single-hidden-layer neural network for estimating
//! PM2.5 from co-located gas measurements.
//!
//! The crate covers ingestion and smoothing of raw station data, correlation
//! based predictor selection, Levenberg-Marquardt training with restarts,
//! a portable model document format, and a dependency-light inference path.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod exchange;
pub mod lite;
pub mod mlp;
pub mod numeric;
pub mod rng;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
