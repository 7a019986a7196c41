//! Command-line pipeline for crop semantic change detection and the
//! synthetic scene generator used to test it.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod stages;
pub mod synth;

pub use config::{Ablation, PipelineConfig};
pub use error::{CliError, Result};
pub use pipeline::{run_pipeline, RunOutcome, VariantReport};
