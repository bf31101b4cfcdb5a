//! Congestion-aware loss functions and evaluation for traffic speed forecasting.
//!
//! The crate bundles:
//!
//! - [`data`]: speed panels, CSV ingestion, chronological splits, windows,
//!   normalization and a synthetic two-regime generator;
//! - [`density`]: KDE-based significant-bimodality classification per sensor;
//! - [`changepoint`]: penalized kernel change-point detection and the
//!   change-point intervals used as congestion scope;
//! - [`losses`]: nine training objectives with analytic gradients;
//! - [`metrics`]: MAE/RMSE/MAPE per horizon and scope, plus Value-at-Risk;
//! - [`baseline`]: a shared linear forecaster trained by SGD with momentum;
//! - [`pipeline`]: the end-to-end run used by the `speedloss` binary.

pub mod baseline;
pub mod changepoint;
pub mod config;
pub mod data;
pub mod density;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod pipeline;

mod parallel;

pub use error::{Error, Result};
