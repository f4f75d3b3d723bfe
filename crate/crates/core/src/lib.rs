//! Imputation benchmark for multichannel wearable time series.

pub mod baselines;
pub mod classifier;
pub mod datasets;
mod error;
pub mod masking;
pub mod imputer;
pub mod metrics;
pub mod nn;
pub mod signal;

pub use error::{Error, Result};
