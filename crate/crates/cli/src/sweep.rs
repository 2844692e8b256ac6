//! Worker-count sweeps with matched-quality timing.
//!
//! Each count reruns the same configuration with only the worker knob
//! changed. The quality target is the 1-worker run's final loss times 1.01;
//! a run's time is the wall column of its first trace row at or under the
//! target. Live shared-memory runs are timed in real seconds, simulated
//! distributed runs in virtual ticks (bit-deterministic).

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use asyvr_core::theory;
use asyvr_core::{Error, Result};

use crate::config::{Arch, RunConfig};
use crate::experiment::{run_experiment_in, ExperimentArtifacts};

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub workers: usize,
    pub wall: f64,
    pub time_to_target: Option<f64>,
    pub final_loss: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub unit: String,
    pub target_loss: f64,
    pub rows: Vec<SweepRow>,
    /// `time_to_target(1) / time_to_target(w)` over the counts that reached
    /// the target without diverging.
    pub speedup: BTreeMap<usize, f64>,
    pub failures: Vec<usize>,
}

fn with_workers(cfg: &RunConfig, workers: usize) -> Result<RunConfig> {
    let mut cfg = cfg.clone();
    match &mut cfg.arch {
        Arch::Serial => {
            return Err(Error::InvalidInput(
                "worker sweeps need a shared or distributed architecture".into(),
            ))
        }
        Arch::Shared { workers: w, .. } => *w = workers,
        Arch::Distributed { workers: w, .. } => *w = workers,
    }
    Ok(cfg)
}

/// Runs the sweep into `dir`, one `w<count>` subdirectory per worker count,
/// plus `sweep.json` with the table.
pub fn sweep_workers(
    cfg: &RunConfig,
    counts: &[usize],
    dir: &Path,
) -> Result<(SweepTable, Vec<ExperimentArtifacts>)> {
    if !counts.contains(&1) {
        return Err(Error::InvalidInput("sweep counts must include 1".into()));
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::InvalidInput("worker counts must be positive".into()));
    }
    std::fs::create_dir_all(dir)?;
    // Distributed runs are timed by the virtual clock, replay runs by their
    // deterministic work counter, live runs by real time.
    let (unit, deterministic_time) = match cfg.arch {
        Arch::Distributed { .. } => ("ticks", true),
        Arch::Shared { live: false, .. } => ("work_units", true),
        _ => ("seconds", false),
    };
    let simulated = deterministic_time;

    let mut all: Vec<(usize, ExperimentArtifacts)> = Vec::new();
    let mut ordered: Vec<usize> = counts.to_vec();
    ordered.sort_unstable();
    ordered.dedup();
    for &w in &ordered {
        let sub = dir.join(format!("w{w}"));
        let run_cfg = with_workers(cfg, w)?;
        let artifacts = run_experiment_in(&run_cfg, &sub)?;
        all.push((w, artifacts));
    }

    let serial = &all
        .iter()
        .find(|(w, _)| *w == 1)
        .expect("counts include 1")
        .1;
    let target_loss = serial.summary.final_loss * 1.01;

    let mut rows = Vec::new();
    let mut times: BTreeMap<usize, f64> = BTreeMap::new();
    let mut failures = Vec::new();
    for (w, artifacts) in &all {
        let trace_path = artifacts.dir.join("trace.csv");
        let trace = asyvr_core::Trace::read_csv(std::io::BufReader::new(std::fs::File::open(
            &trace_path,
        )?))?;
        let wall = if simulated {
            trace.last().map(|r| r.wall_ns as f64).unwrap_or(f64::NAN)
        } else {
            artifacts.summary.wall_seconds
        };
        let time_to_target = trace
            .records()
            .iter()
            .find(|r| r.loss <= target_loss)
            .map(|r| {
                if simulated {
                    r.wall_ns as f64
                } else {
                    to_seconds(r.wall_ns)
                }
            });
        let diverged = artifacts.summary.diverged;
        if let (Some(t), false) = (time_to_target, diverged) {
            times.insert(*w, t.max(f64::MIN_POSITIVE));
        } else {
            failures.push(*w);
        }
        rows.push(SweepRow {
            workers: *w,
            wall,
            time_to_target,
            final_loss: artifacts.summary.final_loss,
            diverged,
        });
    }

    let speedup = if times.contains_key(&1) {
        theory::speedup(&times)?
    } else {
        BTreeMap::new()
    };

    let table = SweepTable {
        unit: unit.to_string(),
        target_loss,
        rows,
        speedup,
        failures,
    };
    let json = serde_json::to_string_pretty(&table)
        .map_err(|e| Error::Format(format!("sweep serialization: {e}")))?;
    std::fs::write(dir.join("sweep.json"), json)?;
    Ok((table, all.into_iter().map(|(_, a)| a).collect()))
}

/// Live traces carry real nanoseconds in the wall column.
fn to_seconds(wall_ns: u64) -> f64 {
    wall_ns as f64 / 1e9
}
