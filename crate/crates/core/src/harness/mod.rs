//! Run configuration, manufactured solutions and the drivers behind the
//! `vortex` subcommands.

mod commands;
mod config;
mod manufactured;

pub use commands::{
    cli_estimate, cli_run, converge, dmp_check, execute, mesh_dump, observed_rate, setup, worker_pool,
    write_convergence, write_dmp_report, write_outputs, CalibrationStep, ConvergenceRow, ConvergenceTable,
    DmpCheckReport, Execution, RateRow, RunSummary, Setup, DMP_TOLERANCE, SATURATION_LEVEL,
};
pub use config::{DeltaPolicy, EstimatorOptions, InitialCondition, MassKind, Outputs, RunConfig};
pub use manufactured::{manufactured_solution, Manufactured, RoughField};
