//! Pipeline orchestration behind the `engage` command.

pub mod config;
pub mod manifest;
pub mod pipeline;

pub use config::{BackendKind, ConfigError, Overrides, PipelineConfig};
pub use manifest::RunManifest;
pub use pipeline::{ClassifyTarget, Pipeline, PipelineError};
