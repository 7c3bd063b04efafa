//! Multigraph spectral convolutional network (MGCNN) for short-term
//! prediction of the twelve turning movements at every signalized
//! intersection along a corridor.
//!
//! The crate is organised around the data flow:
//!
//! - [`graph`]: corridor topology, per-minute weighted snapshots and the
//!   sliding lookback windows stacked from them.
//! - [`spectral`]: normalized and scaled Laplacians, the largest-eigenvalue
//!   power iteration and the Chebyshev recurrence.
//! - [`model`]: Chebyshev graph convolutions, temporal fusion, dropout and
//!   the node-wise dense head, with hand-derived gradients.
//! - [`train`]: MSE loss, Adam with step decay, minibatch training.
//! - [`pipeline`]: CSV ingestion, occupancy drop, collinearity pruning,
//!   IQR outlier replacement, normalization and dataset assembly.
//! - [`synth`]: a seeded synthetic corridor generator.
//! - [`metrics`]: MSE/RMSE/MAE/MAPE, naive baselines, lookback and horizon
//!   sweeps, plot-data export.
//! - [`cli`]: the `mgcnn` command-line front end.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod spectral;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

/// Minutes in one day of minute-resolution telemetry.
pub const MINUTES_PER_DAY: usize = 1440;

/// Turning movements per four-leg intersection: {NB, SB, EB, WB} x {L, T, R}.
pub const MOVEMENTS: usize = 12;
