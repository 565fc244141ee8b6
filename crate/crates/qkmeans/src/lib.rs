//! File formats, experiment drivers and seed sweeps on top of `qkmeans-core`.

pub mod config;
pub mod experiment;
pub mod formats;
pub mod sweep;
