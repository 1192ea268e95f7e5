//! Command line and local HTTP service for `hydrozone`.

pub mod cli;
pub mod jobs;
pub mod server;
pub mod workflows;
