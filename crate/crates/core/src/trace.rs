//! Per-run trace records and their CSV form.
//!
//! One row per recorded point. `wall_ns` is a deterministic work counter
//! (sample-gradient evaluations on the algorithmic path, or virtual clock
//! ticks for the simulated distributed runs) in every deterministic mode;
//! only the live multi-threaded shared-memory runs put real elapsed
//! nanoseconds there. That keeps the CSV bit-reproducible wherever the run
//! itself is.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "epoch,iter,loss,grad_norm_sq,wall_ns,sum_v_sq,sum_u_sq";

/// Loss used as the divergence threshold by every runner.
pub const DIVERGENCE_LOSS: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub epoch: usize,
    pub iter: usize,
    pub loss: f64,
    pub grad_norm_sq: f64,
    pub wall_ns: u64,
    pub sum_v_sq: f64,
    pub sum_u_sq: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    records: Vec<TraceRecord>,
    diverged: bool,
}

impl Trace {
    pub fn new() -> Self {
        Trace::default()
    }

    pub fn push(&mut self, record: TraceRecord) {
        if let Some(last) = self.records.last() {
            debug_assert!(
                record.wall_ns >= last.wall_ns,
                "wall clock must be monotone"
            );
        }
        self.records.push(record);
    }

    pub fn mark_diverged(&mut self) {
        self.diverged = true;
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Rows that close an epoch (`iter == m`), skipping per-iteration rows.
    pub fn epoch_records(&self, m: usize) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.iter == m)
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.epoch, r.iter, r.loss, r.grad_norm_sq, r.wall_ns, r.sum_v_sq, r.sum_u_sq
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to Vec cannot fail");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv(r: impl BufRead) -> Result<Trace> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty trace file".into()))??;
        if header.trim() != CSV_HEADER {
            return Err(Error::Format(format!("unexpected trace header: {header}")));
        }
        let mut trace = Trace::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(Error::Format(format!(
                    "trace line {}: expected 7 fields, got {}",
                    lineno + 2,
                    fields.len()
                )));
            }
            let parse_f = |s: &str, name: &str| -> Result<f64> {
                s.trim().parse().map_err(|_| {
                    Error::Format(format!("trace line {}: bad {name}: {s}", lineno + 2))
                })
            };
            let parse_u = |s: &str, name: &str| -> Result<u64> {
                s.trim().parse().map_err(|_| {
                    Error::Format(format!("trace line {}: bad {name}: {s}", lineno + 2))
                })
            };
            trace.records.push(TraceRecord {
                epoch: parse_u(fields[0], "epoch")? as usize,
                iter: parse_u(fields[1], "iter")? as usize,
                loss: parse_f(fields[2], "loss")?,
                grad_norm_sq: parse_f(fields[3], "grad_norm_sq")?,
                wall_ns: parse_u(fields[4], "wall_ns")?,
                sum_v_sq: parse_f(fields[5], "sum_v_sq")?,
                sum_u_sq: parse_f(fields[6], "sum_u_sq")?,
            });
        }
        let diverged = trace
            .records
            .last()
            .map(|r| !r.loss.is_finite() || r.loss > DIVERGENCE_LOSS)
            .unwrap_or(false);
        trace.diverged = diverged;
        Ok(trace)
    }
}
