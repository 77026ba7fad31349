//! Command-line pipeline: preparing bundles, training, evaluation and
//! ablation sweeps, plus the run-config and checkpoint formats they share.

pub mod checkpoint;
pub mod commands;
pub mod config;
