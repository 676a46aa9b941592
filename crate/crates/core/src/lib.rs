//! Pool-based active learning with calibrated uncertainty sampling.
//!
//! The crate estimates per-sample calibration error on the unlabeled pool with
//! a Dirichlet-kernel regression of labels onto forecasts, ranks the pool
//! lexicographically by (calibration error, uncertainty), and wraps this and
//! the usual baseline acquisition strategies in a reproducible experiment loop.

pub mod acquisition;
pub mod calibration;
pub mod config;
pub mod datasets;
pub mod error;
pub mod harness;
pub mod models;
pub mod numerics;
pub mod report;
pub mod runner;

pub use error::{Error, Result};
