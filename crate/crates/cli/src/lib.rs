//! Experiment orchestration for PETAL surrogate inversion: configuration,
//! the staged pipeline and report emission.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

pub use config::{ExperimentConfig, Method};
pub use error::{CliError, Stage};
pub use pipeline::{run_pipeline, RunPaths};
pub use report::{emit_report, RunReport};
