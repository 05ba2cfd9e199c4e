//! Simulation and analysis toolkit for feature-based federated transfer
//! learning: a small dense network stack, a split model, FedAvg and
//! feature-upload training protocols with bit-exact payload meters, a
//! closed-form payload calculator and a label-leakage estimator for
//! shuffled uploads.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod payload;
pub mod privacy;
pub mod seed;
pub mod sim;

pub use error::{Error, Result};
