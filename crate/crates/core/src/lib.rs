//! Hashed-sketch kernel representations for variable-cardinality multivariate
//! time-series windows, a training-free random-projection kNN anomaly
//! detector, a synthetic sensor-churn benchmark and its evaluation harness.

pub mod benchgen;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod evalkit;
pub mod kernelrep;
pub mod matrix;
pub mod rng;
pub mod sketch;

pub use error::{Error, Result};
