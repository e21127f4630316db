//! Experiment configs, orchestration and artifact output.

pub mod config;
pub mod output;
pub mod run;

pub use config::{parse_config, parse_config_with, ExperimentConfig, ExperimentKind, OUTPUT_DIR_ENV};
pub use output::OutputDir;
pub use run::{run_experiment, run_in, run_with_threads, Manifest, MANIFEST_FILE};
