//! Per-epoch check of the variance-transfer inequality
//! `sum_t ||v_t||^2 <= factor * sum_t ||u_t||^2` on a recorded trace, with
//! exact equality required at zero delay.

use serde::Serialize;

use asyvr_core::theory::{ArchMode, TheoryParams};
use asyvr_core::{Error, Result, Trace};

#[derive(Debug, Clone, Copy)]
pub struct CorollaryInputs {
    pub mode: ArchMode,
    pub l: f64,
    pub eta: f64,
    pub delta: usize,
    pub d: usize,
    pub b: usize,
    pub m: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochCheck {
    pub epoch: usize,
    pub sum_v_sq: f64,
    pub sum_u_sq: f64,
    pub ratio: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorollaryReport {
    pub applicable: bool,
    pub reason: Option<String>,
    pub factor: Option<f64>,
    pub delta: usize,
    pub epochs: Vec<EpochCheck>,
    pub all_pass: bool,
}

/// Checks every epoch of the trace. The trace must carry the accumulator
/// columns (replayed or simulated runs); traces without them are rejected.
pub fn check_corollary1(trace: &Trace, inputs: &CorollaryInputs) -> Result<CorollaryReport> {
    let rows: Vec<_> = trace.epoch_records(inputs.m).collect();
    if rows.is_empty() {
        return Err(Error::InvalidInput(
            "trace has no epoch rows for this inner length".into(),
        ));
    }
    let has_accumulators = rows.iter().any(|r| r.sum_u_sq != 0.0);
    if !has_accumulators {
        return Err(Error::InvalidInput(
            "trace lacks the u-accumulator column (not a replayed/simulated run)".into(),
        ));
    }

    let params = TheoryParams::new(
        inputs.mode,
        inputs.l,
        inputs.eta,
        2.0 * inputs.l,
        inputs.b,
        inputs.m,
        inputs.d,
        1.max(inputs.d),
        inputs.delta as f64,
    );
    let params = match params {
        Ok(p) => p,
        Err(e) => {
            return Ok(CorollaryReport {
                applicable: false,
                reason: Some(format!("bound inapplicable: {e}")),
                factor: None,
                delta: inputs.delta,
                epochs: Vec::new(),
                all_pass: false,
            })
        }
    };
    let factor = params.corollary_factor();
    let mut epochs = Vec::with_capacity(rows.len());
    let mut all_pass = true;
    for row in rows {
        let pass = if inputs.delta == 0 {
            row.sum_v_sq == row.sum_u_sq
        } else if row.sum_u_sq == 0.0 {
            row.sum_v_sq == 0.0
        } else {
            row.sum_v_sq <= factor * row.sum_u_sq
        };
        all_pass &= pass;
        epochs.push(EpochCheck {
            epoch: row.epoch,
            sum_v_sq: row.sum_v_sq,
            sum_u_sq: row.sum_u_sq,
            ratio: if row.sum_u_sq != 0.0 {
                row.sum_v_sq / row.sum_u_sq
            } else {
                f64::NAN
            },
            pass,
        });
    }
    Ok(CorollaryReport {
        applicable: true,
        reason: None,
        factor: Some(factor),
        delta: inputs.delta,
        epochs,
        all_pass,
    })
}
