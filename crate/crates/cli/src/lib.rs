//! Batch pipeline over the `flowseg-core` library: synthetic data,
//! selection, association, combination, evaluation and flow rendering.

pub mod app;
pub mod commands;
pub mod config;
pub mod failure;

pub use config::PipelineConfig;
pub use failure::Failure;
