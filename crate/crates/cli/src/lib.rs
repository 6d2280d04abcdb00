//! Pipeline driver behind the `cfaug` binary.

pub mod config;
pub mod pipeline;

pub use config::PipelineConfig;
pub use pipeline::{replicate_all, ArtifactEntry, Artifacts, Manifest};
