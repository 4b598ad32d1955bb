//! Hybrid quantum–classical regression.
//!
//! A small tanh network embeds inputs into circuit angles, a data
//! re-uploading circuit produces a scalar feature, and a linear readout mixes
//! both. Training runs a per-depth SPSA → Adam curriculum with layer growth.

pub mod ansatz;
pub mod classical;
pub mod error;
pub mod experiment;
pub mod grad;
pub mod hybrid;
pub mod metrics;
pub mod optim;
pub mod qsim;
pub mod tasks;

pub use error::{Error, Result};
