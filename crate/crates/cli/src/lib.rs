//! Experiment harness for the asynchronous variance-reduced SGD toolkit:
//! config parsing, experiment dispatch, worker sweeps and trace checks. The
//! `asyvr` binary is a thin CLI over these functions.

pub mod config;
pub mod corollary;
pub mod experiment;
pub mod sweep;

pub use config::{Arch, DataSource, Method, ProblemSpec, RunConfig};
pub use corollary::{check_corollary1, CorollaryInputs, CorollaryReport};
pub use experiment::{
    build_problem, run_experiment, run_experiment_in, ExperimentArtifacts, Summary,
};
pub use sweep::{sweep_workers, SweepTable};
