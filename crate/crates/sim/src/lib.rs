//! Experiment harness for the federated protocol in `fpp-core`: TOML
//! configs, dataset and checkpoint files, metrics CSVs, and the round loop.

pub mod checkpoint_file;
pub mod config;
pub mod dataset_file;
pub mod error;
pub mod experiment;
pub mod metrics;

pub use config::{load_config, DataSource, ExperimentConfig};
pub use error::{Result, SimError};
pub use experiment::{compare_strategies, run_experiment, Comparison, Experiment, RunOutput, Summary};
pub use metrics::MetricsRow;
