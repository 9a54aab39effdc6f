//! Command-line front end: configuration, per-stage commands and the
//! end-to-end pipeline runner.

pub mod config;
pub mod pipeline;
pub mod stages;

pub use config::{ConfigError, PipelineConfig, Stage};
pub use pipeline::{run_pipeline, RunManifest, StageRecord};
