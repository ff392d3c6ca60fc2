//! Experiment orchestration: configuration, training, multi-seed sweeps
//! and result emission.

pub mod config;
pub mod emit;
pub mod report;
pub mod sweep;
pub mod train;

pub use config::{EnvId, MediatorSetting, OutputFormat, RunConfig};
pub use emit::{emit, render};
pub use report::{Evaluation, Metric, SeedReport};
pub use sweep::{aggregate, sweep, SweepReport, WORKERS_ENV};
pub use train::{train, Trainer};
