//! Experiment grid runner, configuration, and report emission.

pub mod config;
pub mod grid;
pub mod report;
