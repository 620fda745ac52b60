//! Config-driven pipeline: stage orchestration, artifacts, and the run report.

pub mod artifacts;
pub mod config;
pub mod report;
pub mod stages;

pub use report::{run_pipeline, RunReport};
