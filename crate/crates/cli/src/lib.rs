//! The `dvfcast` experiment pipeline: phantom cohort generation,
//! registration tuning, dataset building, training, prediction and
//! evaluation, each writing into one output directory.

pub mod cohort;
pub mod config;
pub mod dataset;
pub mod error;
pub mod layout;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use config::{DvfSource, ExperimentConfig, RunSpec};
pub use error::{PipelineError, Result};
pub use layout::Layout;
pub use pipeline::{Pipeline, TunedParams};
