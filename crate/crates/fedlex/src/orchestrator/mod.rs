//! Round loop wiring clients, guidance, and aggregation together.

mod client;
mod config;
mod manifest;
mod metrics;
mod run;

pub use client::{local_update, LocalReport};
pub use config::{DatasetConfig, ExplorerSpec, GuidanceConfig, ModelConfig, RunConfig};
pub use manifest::{config_hash, Manifest, MANIFEST_SCHEMA_VERSION};
pub use metrics::{csv_header, mean_std, RoundMetrics};
pub use run::{
    run_experiment, run_experiment_with, sample_clients, ExperimentOutput, ServerState, Simulation,
};
