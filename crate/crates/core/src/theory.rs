//! Convergence-theory quantities for asynchronous SVRG: the backward `c_t`
//! recurrence, the step quantities `Gamma_t` and their minimum `gamma`, the
//! geometric closed form for `c_0`, admissible delay bounds, recommended
//! hyperparameters and the ergodic `O(1/T)` bound.
//!
//! Two parameter regimes are supported. In shared-memory mode one iteration
//! touches a single random coordinate, so the recurrences carry `1/d`
//! factors and the staleness denominator is `d - 2 L^2 Delta^2 eta^2`. In
//! distributed mode the update is a dense vector step and the same
//! expressions appear with `d` replaced by one.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchMode {
    Shared,
    Distributed,
}

impl ArchMode {
    fn label(self) -> &'static str {
        match self {
            ArchMode::Shared => "shared",
            ArchMode::Distributed => "distributed",
        }
    }
}

/// Inputs to the recurrences. Construction enforces the denominator
/// positivity the bounds require.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryParams {
    pub mode: ArchMode,
    /// Smoothness constant shared by `f` and every `f_i`.
    pub l: f64,
    pub eta: f64,
    /// Lyapunov coefficient `beta` (constant over the epoch).
    pub beta: f64,
    pub b: usize,
    pub m: usize,
    pub d: usize,
    pub n: usize,
    /// Staleness bound; real-valued because bounds like `Delta^2 < 71.4`
    /// are meaningful between integers.
    pub delta: f64,
}

impl TheoryParams {
    pub fn new(
        mode: ArchMode,
        l: f64,
        eta: f64,
        beta: f64,
        b: usize,
        m: usize,
        d: usize,
        n: usize,
        delta: f64,
    ) -> Result<Self> {
        if !(l > 0.0) {
            return Err(Error::Infeasible("L must be positive".into()));
        }
        if !(eta > 0.0) {
            return Err(Error::Infeasible("eta must be positive".into()));
        }
        if !(beta >= 0.0) {
            return Err(Error::Infeasible("beta must be non-negative".into()));
        }
        if b == 0 || m == 0 || d == 0 || n == 0 {
            return Err(Error::Infeasible("b, m, d, n must be at least 1".into()));
        }
        if !(delta >= 0.0) {
            return Err(Error::Infeasible("delta must be non-negative".into()));
        }
        let p = TheoryParams {
            mode,
            l,
            eta,
            beta,
            b,
            m,
            d,
            n,
            delta,
        };
        if p.staleness_denom() <= 0.0 {
            return Err(Error::Infeasible(format!(
                "{} mode requires {} - 2 L^2 Delta^2 eta^2 > 0 (got {})",
                p.mode.label(),
                match p.mode {
                    ArchMode::Shared => "d",
                    ArchMode::Distributed => "1",
                },
                p.staleness_denom()
            )));
        }
        Ok(p)
    }

    /// `d - 2 L^2 Delta^2 eta^2` (shared) or `1 - 2 L^2 Delta^2 eta^2`
    /// (distributed), the denominator in the staleness corrections.
    pub fn staleness_denom(&self) -> f64 {
        let lead = match self.mode {
            ArchMode::Shared => self.d as f64,
            ArchMode::Distributed => 1.0,
        };
        lead - 2.0 * self.l * self.l * self.delta * self.delta * self.eta * self.eta
    }

    /// Bound factor of the variance-transfer inequality:
    /// `sum ||v||^2 <= factor * sum ||u||^2`.
    pub fn corollary_factor(&self) -> f64 {
        let lead = match self.mode {
            ArchMode::Shared => 2.0 * self.d as f64,
            ArchMode::Distributed => 2.0,
        };
        lead / self.staleness_denom()
    }

    /// Geometric growth rate of the backward recurrence.
    pub fn theta(&self) -> f64 {
        let denom_b = self.staleness_denom() * self.b as f64;
        let vr_term = 4.0 * self.l * self.l * self.eta * self.eta / denom_b;
        match self.mode {
            ArchMode::Shared => self.eta * self.beta / self.d as f64 + vr_term,
            ArchMode::Distributed => self.eta * self.beta + vr_term,
        }
    }

    /// Additive increment `r` of the backward recurrence.
    fn increment(&self) -> f64 {
        let l = self.l;
        let eta = self.eta;
        let denom_b = self.staleness_denom() * self.b as f64;
        let lead = 4.0 * l * l / denom_b;
        match self.mode {
            ArchMode::Shared => {
                lead * (l * l * self.delta * self.delta * eta.powi(3) / (2.0 * self.d as f64)
                    + eta * eta * l / 2.0)
            }
            ArchMode::Distributed => {
                lead * (l * l * self.delta * self.delta * eta.powi(3) / 2.0 + eta * eta * l / 2.0)
            }
        }
    }
}

/// The backward recurrence evaluated from `c_m = 0` down to `c_0`; index `t`
/// holds `c_t`.
pub fn c_sequence(p: &TheoryParams) -> Vec<f64> {
    let growth = 1.0 + p.theta();
    let r = p.increment();
    let mut c = vec![0.0; p.m + 1];
    for t in (0..p.m).rev() {
        c[t] = c[t + 1] * growth + r;
    }
    c
}

/// Closed form of `c_0`: `r ((1+theta)^m - 1) / theta`, the geometric sum of
/// the recurrence. Used as an independent cross-check of [`c_sequence`],
/// which accumulates rounding differently.
pub fn c0_closed_form(p: &TheoryParams) -> f64 {
    let theta = p.theta();
    let r = p.increment();
    if theta == 0.0 {
        return r * p.m as f64;
    }
    r * ((1.0 + theta).powi(p.m as i32) - 1.0) / theta
}

/// All `Gamma_t` for `t = 0..m-1`.
pub fn gamma_sequence(p: &TheoryParams) -> Vec<f64> {
    let c = c_sequence(p);
    let l = p.l;
    let eta = p.eta;
    let denom = p.staleness_denom();
    let (lead, inner_delay) = match p.mode {
        ArchMode::Shared => (
            eta / (2.0 * p.d as f64),
            l * l * p.delta * p.delta * eta.powi(3) / (2.0 * p.d as f64),
        ),
        ArchMode::Distributed => (eta / 2.0, l * l * p.delta * p.delta * eta.powi(3) / 2.0),
    };
    (0..p.m)
        .map(|t| lead - (4.0 / denom) * (inner_delay + eta * eta * l / 2.0 + c[t + 1] * eta * eta))
        .collect()
}

/// `gamma = min_t Gamma_t` and whether every `Gamma_t` is positive.
pub fn gamma(p: &TheoryParams) -> (f64, bool) {
    let seq = gamma_sequence(p);
    let g = seq.iter().cloned().fold(f64::INFINITY, f64::min);
    let feasible = seq.iter().all(|&v| v > 0.0);
    (g, feasible)
}

/// Largest admissible squared delay `Delta^2`. A non-positive result means no
/// delay is admissible for these `(u0, b)`.
pub fn delay_bound(mode: ArchMode, u0: f64, b: usize, d: usize) -> f64 {
    let b = b as f64;
    let d = d as f64;
    match mode {
        ArchMode::Shared => {
            let first = d / (2.0 * u0 * b);
            let second = (3.0 * d - 28.0 * u0 * b * d) / (28.0 * u0 * u0 * b * b);
            first.min(second)
        }
        ArchMode::Distributed => {
            let first = 1.0 / (2.0 * u0 * b);
            let second = (3.0 - 28.0 * u0 * b) / (28.0 * u0 * u0 * b * b);
            first.min(second)
        }
    }
}

/// Hyperparameters the rate theorems prescribe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Recommended {
    pub eta: f64,
    pub beta: f64,
    pub m: usize,
}

/// `eta = u0 b / (L n^alpha)`, `beta = 2L`, and the mode-dependent inner-loop
/// length `m`.
pub fn recommended_settings(
    mode: ArchMode,
    n: usize,
    alpha: f64,
    u0: f64,
    b: usize,
    d: usize,
    l: f64,
) -> Result<Recommended> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Infeasible("alpha must lie in (0, 1]".into()));
    }
    if !(u0 > 0.0 && u0 < 1.0) {
        return Err(Error::Infeasible("u0 must lie in (0, 1)".into()));
    }
    if b == 0 || n == 0 || d == 0 {
        return Err(Error::Infeasible("n, b, d must be at least 1".into()));
    }
    if !(l > 0.0) {
        return Err(Error::Infeasible("L must be positive".into()));
    }
    let n_alpha = (n as f64).powf(alpha);
    let eta = u0 * b as f64 / (l * n_alpha);
    let beta = 2.0 * l;
    let m_float = match mode {
        ArchMode::Shared => d as f64 * n_alpha / (6.0 * u0 * b as f64),
        ArchMode::Distributed => n_alpha / (6.0 * u0 * b as f64),
    };
    let m = m_float.floor() as usize;
    if m == 0 {
        return Err(Error::Infeasible(
            "recommended inner loop length is zero".into(),
        ));
    }
    Ok(Recommended { eta, beta, m })
}

/// Ergodic bound `(f(x0) - f(x*)) / (T gamma)` on the average squared
/// gradient norm over the first `T` iterations.
pub fn ergodic_bound(p: &TheoryParams, f0: f64, fstar: f64, t_total: usize) -> Result<f64> {
    let (g, feasible) = gamma(p);
    if !feasible {
        return Err(Error::Infeasible(
            "gamma is not positive for these parameters".into(),
        ));
    }
    if f0 < fstar {
        return Err(Error::invalid("f0 must be at least fstar"));
    }
    if t_total == 0 {
        return Err(Error::invalid("T must be at least 1"));
    }
    Ok((f0 - fstar) / (t_total as f64 * g))
}

/// Wall-time speedup table `time(1) / time(T)`.
pub fn speedup(times: &BTreeMap<usize, f64>) -> Result<BTreeMap<usize, f64>> {
    let serial = *times
        .get(&1)
        .ok_or_else(|| Error::invalid("speedup table needs the 1-worker time"))?;
    if times.values().any(|&t| !(t > 0.0)) {
        return Err(Error::invalid("all wall times must be positive"));
    }
    Ok(times.iter().map(|(&w, &t)| (w, serial / t)).collect())
}

/// Everything the theory calculator derives for one parameter set.
#[derive(Debug, Clone, Serialize)]
pub struct TheoryReport {
    pub mode: ArchMode,
    pub params: TheoryParams,
    /// `c_t` for `t = 0..=m`.
    pub c: Vec<f64>,
    /// `Gamma_t` for `t = 0..m-1`.
    pub gamma_seq: Vec<f64>,
    pub gamma: f64,
    pub theta: f64,
    pub c0_closed: f64,
    pub feasible: bool,
    /// Whether `c_{t+1} <= beta / 2` holds for every `t`; reported separately
    /// from feasibility because the two conditions are independent.
    pub half_condition_ok: bool,
    pub bound_value: Option<f64>,
}

/// Builds the full report; `objective` optionally supplies
/// `(f0, fstar, T)` for the ergodic bound.
pub fn theory_report(p: &TheoryParams, objective: Option<(f64, f64, usize)>) -> TheoryReport {
    let c = c_sequence(p);
    let gamma_seq = gamma_sequence(p);
    let g = gamma_seq.iter().cloned().fold(f64::INFINITY, f64::min);
    let feasible = gamma_seq.iter().all(|&v| v > 0.0);
    let half_condition_ok = if p.beta > 0.0 {
        c[1..].iter().all(|&ct| ct <= p.beta / 2.0)
    } else {
        false
    };
    let bound_value = objective.and_then(|(f0, fstar, t)| ergodic_bound(p, f0, fstar, t).ok());
    TheoryReport {
        mode: p.mode,
        params: p.clone(),
        c,
        gamma_seq,
        gamma: g,
        theta: p.theta(),
        c0_closed: c0_closed_form(p),
        feasible,
        half_condition_ok,
        bound_value,
    }
}

#[cfg(test)]
mod tests;
