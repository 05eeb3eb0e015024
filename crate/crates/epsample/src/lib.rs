//! File formats, corpus runs, run manifests and the command implementations
//! behind the `epsample` binary.

pub mod cli;
pub mod config;
pub mod formats;
pub mod manifest;
pub mod runner;
