//! Experiment runner for the CoRL-MPPI simulator: configuration, single runs, sweeps
//! and machine-readable metrics.

pub mod config;
pub mod error;
pub mod metrics;
pub mod runner;

pub use config::{Algorithm, ExperimentConfig, Presets, SweepGrid};
pub use error::HarnessError;
pub use metrics::{aggregate, Aggregate, AggregateRow, MetricsDocument, RunRecord};
pub use runner::{cmd_run, cmd_sweep, cmd_validate, Execution};
