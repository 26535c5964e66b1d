//! Experiment harness: configuration, ground truth, Monte Carlo runs,
//! bound comparison and export.

pub mod compare;
pub mod config;
pub mod experiment;
pub mod export;
pub mod fixture;
pub mod optimum;

pub use compare::{bound_report, compare_bounds, BoundComparison, BoundKind};
pub use config::RunConfig;
pub use experiment::{run_experiment, ExperimentResult, RunTrace, TraceRow};
pub use export::{export, write_experiment, ExportFormat};
pub use fixture::{Fixture, PlantInstance};
pub use optimum::{solve_optimum, Optimum};
