//! File formats, configuration, run orchestration and the command-line front
//! end for the `microsim-core` engine.

pub mod config;
pub mod fixture;
pub mod ingest;
pub mod manifest;
pub mod output;
pub mod pipeline;
