//! Asynchronous stochastic variance-reduced gradient descent for non-convex
//! finite sums, on two architectures: shared memory (per-coordinate atomic
//! updates and inconsistent reads) and a simulated distributed server/worker
//! protocol with bounded staleness. A theory module evaluates the associated
//! convergence recurrences and delay bounds.
//!
//! The crate is organized around a determinism contract: every mean over
//! samples goes through one fixed chunked reduction, every batch is drawn
//! from a per-worker seeded stream, and the zero-delay configuration of each
//! asynchronous executor reproduces the serial SVRG trajectory bit for bit.

pub mod accum;
pub mod error;
pub mod problem;
pub mod svrg;
pub mod theory;
pub mod trace;

pub mod dist;
pub mod shared;

mod rng;
mod vecmath;

pub use error::{Error, Result};
pub use problem::{
    gen_synthetic, gen_synthetic_regression, load_idx, Dataset, FiniteSumProblem, ParamVector,
    ProblemKind, SyntheticRegressionSpec, SyntheticSpec, Targets,
};
pub use svrg::{
    ideal_vr_gradient, poly_lr, run_serial_svrg, run_sgd, take_snapshot, vr_gradient, MiniBatch,
    RunOutput, SgdConfig, SgdSchedule, Snapshot, StaleReads, SvrgConfig,
};
pub use trace::{Trace, TraceRecord, CSV_HEADER, DIVERGENCE_LOSS};
