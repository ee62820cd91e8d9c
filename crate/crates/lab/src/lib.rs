pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod plots;
pub mod report;

pub use config::{ExperimentConfig, MethodEntry, Preset};
pub use error::{LabError, Result};
pub use manifest::RunManifest;
pub use pipeline::{epoch_sweep, load_report, run_experiment, run_experiment_traced, RunOptions, Until};
