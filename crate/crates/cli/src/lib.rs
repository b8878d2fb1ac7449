//! Command-line front end for the early-exit serving simulator:
//! experiment configs, sweep execution, and CSV reporting.

pub mod config;
pub mod runner;

pub use config::{ExperimentConfig, SweepBlock, SweepVariable, OUTPUT_DIR_ENV};
pub use runner::{compare_policies, run_experiment, PointResult, SummaryRow};
