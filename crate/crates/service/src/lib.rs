//! HTTP inference service and the `mlcgan` command line.

pub mod api;
pub mod cli;
