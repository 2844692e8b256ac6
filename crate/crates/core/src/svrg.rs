//! Variance-reduced gradient kernels, serial SVRG and SGD reference runners,
//! and learning-rate schedules.
//!
//! The kernels here are the single source of the arithmetic every executor
//! shares: a mini-batch mean uses the same chunked reduction as `grad_full`,
//! and the variance-reduced direction is always combined as
//! `(mean_stale - mean_snapshot) + mu`, componentwise, in that order. The
//! asynchronous executors reproduce the serial trajectory bit for bit in
//! their zero-delay configurations because they call exactly these kernels.

use crate::accum;
use crate::error::{Error, Result};
use crate::problem::{FiniteSumProblem, ParamVector};
use crate::rng;
use crate::trace::{Trace, TraceRecord, DIVERGENCE_LOSS};
use crate::vecmath;

/// Epoch anchor: a parameter copy and its full gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    x_tilde: ParamVector,
    mu: ParamVector,
    epoch: usize,
}

impl Snapshot {
    /// Copies `x` and computes the full gradient at it.
    pub fn take(problem: &FiniteSumProblem, x: &ParamVector, epoch: usize) -> Result<Self> {
        let mu = problem.grad_full(x)?;
        Ok(Snapshot {
            x_tilde: x.clone(),
            mu,
            epoch,
        })
    }

    /// Builds a snapshot from an already-computed full gradient.
    pub(crate) fn from_parts(x_tilde: ParamVector, mu: ParamVector, epoch: usize) -> Self {
        Snapshot { x_tilde, mu, epoch }
    }

    pub fn x_tilde(&self) -> &ParamVector {
        &self.x_tilde
    }

    pub fn mu(&self) -> &ParamVector {
        &self.mu
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }
}

/// Copies `x`, computes the full gradient at it, and tags the epoch.
pub fn take_snapshot(
    problem: &FiniteSumProblem,
    x: &ParamVector,
    epoch: usize,
) -> Result<Snapshot> {
    Snapshot::take(problem, x, epoch)
}

/// Sample indices of one mini-batch, in draw order.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    indices: Vec<usize>,
}

impl MiniBatch {
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("mini-batch must be non-empty"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::SampleOutOfRange { index: bad, n });
        }
        Ok(MiniBatch { indices })
    }

    pub(crate) fn new_unchecked(indices: Vec<usize>) -> Self {
        MiniBatch { indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

/// Per-sample parameter vectors a worker read, plus their delays.
#[derive(Debug, Clone)]
pub struct StaleReads {
    x: StaleX,
    tau: Vec<usize>,
}

#[derive(Debug, Clone)]
enum StaleX {
    /// All samples in the batch share one read vector.
    Shared(ParamVector),
    /// One read vector per batch slot.
    PerSample(Vec<ParamVector>),
}

impl StaleReads {
    /// One read shared by all `b` batch slots.
    pub fn shared(x: ParamVector, tau: usize, b: usize) -> Self {
        StaleReads {
            x: StaleX::Shared(x),
            tau: vec![tau; b],
        }
    }

    pub fn per_sample(xs: Vec<ParamVector>, tau: Vec<usize>) -> Result<Self> {
        if xs.len() != tau.len() {
            return Err(Error::invalid("stale reads and delays must align"));
        }
        if xs.is_empty() {
            return Err(Error::invalid("stale reads must be non-empty"));
        }
        Ok(StaleReads {
            x: StaleX::PerSample(xs),
            tau,
        })
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn tau(&self) -> &[usize] {
        &self.tau
    }

    pub fn max_tau(&self) -> usize {
        self.tau.iter().copied().max().unwrap_or(0)
    }

    fn x_for(&self, slot: usize) -> &[f64] {
        match &self.x {
            StaleX::Shared(x) => x,
            StaleX::PerSample(xs) => &xs[slot],
        }
    }

    fn check_dims(&self, d: usize) -> Result<()> {
        let ok = match &self.x {
            StaleX::Shared(x) => x.len() == d,
            StaleX::PerSample(xs) => xs.iter().all(|x| x.len() == d),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("stale read has wrong dimension"))
        }
    }
}

/// `(1/b) sum_slot grad f_{batch[slot]}(x_of(slot))`, accumulated slot-major
/// through the same chunked reduction as `grad_full`.
pub(crate) fn batch_mean_grad_with<'a, F>(
    problem: &FiniteSumProblem,
    batch: &MiniBatch,
    x_of: F,
) -> Vec<f64>
where
    F: Fn(usize) -> &'a [f64],
{
    let b = batch.len();
    let d = problem.dim();
    let mut g = accum::vector_sum_seq(b, d, |lo, hi| {
        let mut part = vec![0.0; d];
        let mut tmp = vec![0.0; d];
        for slot in lo..hi {
            problem.grad_sample_into(x_of(slot), batch.indices()[slot], &mut tmp);
            for (p, t) in part.iter_mut().zip(&tmp) {
                *p += *t;
            }
        }
        part
    });
    let inv_b = 1.0 / b as f64;
    for v in &mut g {
        *v *= inv_b;
    }
    g
}

/// Mini-batch mean gradient at a single point.
pub(crate) fn batch_mean_grad(
    problem: &FiniteSumProblem,
    batch: &MiniBatch,
    x: &[f64],
) -> Vec<f64> {
    batch_mean_grad_with(problem, batch, |_| x)
}

/// `(mean_stale - mean_snapshot) + mu`, componentwise and in that order.
pub(crate) fn vr_combine(g_cur: &[f64], g_snap: &[f64], mu: &[f64]) -> Vec<f64> {
    g_cur
        .iter()
        .zip(g_snap)
        .zip(mu)
        .map(|((a, b), m)| (a - b) + m)
        .collect()
}

fn check_batch(problem: &FiniteSumProblem, batch: &MiniBatch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("mini-batch must be non-empty"));
    }
    if let Some(&bad) = batch
        .indices()
        .iter()
        .find(|&&i| i >= problem.num_samples())
    {
        return Err(Error::SampleOutOfRange {
            index: bad,
            n: problem.num_samples(),
        });
    }
    Ok(())
}

/// Variance-reduced gradient from possibly stale per-sample reads:
/// `(1/b) sum [grad f_i(x_hat_i) - grad f_i(x_tilde) + mu]`.
pub fn vr_gradient(
    problem: &FiniteSumProblem,
    stale: &StaleReads,
    snap: &Snapshot,
    batch: &MiniBatch,
) -> Result<ParamVector> {
    check_batch(problem, batch)?;
    if stale.len() != batch.len() {
        return Err(Error::invalid(format!(
            "stale reads ({}) misaligned with batch ({})",
            stale.len(),
            batch.len()
        )));
    }
    stale.check_dims(problem.dim())?;
    if snap.x_tilde.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: snap.x_tilde.len(),
        });
    }
    let g_stale = batch_mean_grad_with(problem, batch, |slot| stale.x_for(slot));
    let g_snap = batch_mean_grad(problem, batch, snap.x_tilde());
    Ok(ParamVector::from_vec(vr_combine(
        &g_stale,
        &g_snap,
        snap.mu(),
    )))
}

/// The consistent-read variance-reduced gradient (all stale reads replaced by
/// `x_current`).
pub fn ideal_vr_gradient(
    problem: &FiniteSumProblem,
    x_current: &ParamVector,
    snap: &Snapshot,
    batch: &MiniBatch,
) -> Result<ParamVector> {
    check_batch(problem, batch)?;
    if x_current.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: x_current.len(),
        });
    }
    let g_cur = batch_mean_grad(problem, batch, x_current);
    let g_snap = batch_mean_grad(problem, batch, snap.x_tilde());
    Ok(ParamVector::from_vec(vr_combine(
        &g_cur,
        &g_snap,
        snap.mu(),
    )))
}

/// Polynomially decayed learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdSchedule {
    pub alpha: f64,
    pub beta: f64,
}

impl SgdSchedule {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::invalid("alpha must be positive"));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::invalid("beta must lie in [0, 1]"));
        }
        Ok(SgdSchedule { alpha, beta })
    }
}

/// `alpha / (1 + s)^beta` for epoch `s`.
pub fn poly_lr(sched: &SgdSchedule, s: usize) -> f64 {
    sched.alpha / (1.0 + s as f64).powf(sched.beta)
}

/// A finished run: the trace, the final iterate (for warm starts), and the
/// largest staleness any applied gradient carried, where the executor can
/// know it.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    pub x: ParamVector,
    pub max_staleness: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub batch_size: usize,
    pub schedule: SgdSchedule,
    pub seed: u64,
}

/// Plain mini-batch SGD with the polynomial schedule. The trace carries one
/// row per epoch; `sum_v_sq` accumulates the applied direction norms and
/// `sum_u_sq` stays zero (there is no snapshot).
pub fn run_sgd(problem: &FiniteSumProblem, x0: &ParamVector, cfg: &SgdConfig) -> Result<RunOutput> {
    if cfg.batch_size == 0 || cfg.batch_size > problem.num_samples() {
        return Err(Error::invalid("batch size must lie in [1, n]"));
    }
    if cfg.iters_per_epoch == 0 && cfg.epochs > 0 {
        return Err(Error::invalid("iterations per epoch must be positive"));
    }
    let mut x = x0.clone();
    problem.loss(&x)?; // validates x0
    let n = problem.num_samples();
    let mut rng = rng::batch_stream(cfg.seed, 0);
    let mut trace = Trace::new();
    let mut work: u64 = 0;

    let loss0 = problem.loss(&x)?;
    let g0 = problem.grad_full(&x)?;
    trace.push(TraceRecord {
        epoch: 0,
        iter: 0,
        loss: loss0,
        grad_norm_sq: g0.norm_sq(),
        wall_ns: work,
        sum_v_sq: 0.0,
        sum_u_sq: 0.0,
    });

    for s in 0..cfg.epochs {
        let eta = poly_lr(&cfg.schedule, s);
        let mut sum_v_sq = 0.0;
        for _ in 0..cfg.iters_per_epoch {
            let batch = rng::sample_batch(&mut rng, n, cfg.batch_size);
            let g = batch_mean_grad(problem, &batch, &x);
            work += batch.len() as u64;
            sum_v_sq += vecmath::norm_sq(&g);
            let mut xv = x.into_vec();
            vecmath::step_dense(&mut xv, eta, &g);
            x = ParamVector::from_vec(xv);
            if !vecmath::all_finite(&x) {
                trace.push(TraceRecord {
                    epoch: s,
                    iter: cfg.iters_per_epoch,
                    loss: f64::INFINITY,
                    grad_norm_sq: f64::NAN,
                    wall_ns: work,
                    sum_v_sq,
                    sum_u_sq: 0.0,
                });
                trace.mark_diverged();
                return Ok(RunOutput {
                    trace,
                    x,
                    max_staleness: None,
                });
            }
        }
        let loss = problem.loss(&x)?;
        let g = problem.grad_full(&x)?;
        trace.push(TraceRecord {
            epoch: s,
            iter: cfg.iters_per_epoch,
            loss,
            grad_norm_sq: g.norm_sq(),
            wall_ns: work,
            sum_v_sq,
            sum_u_sq: 0.0,
        });
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            trace.mark_diverged();
            return Ok(RunOutput {
                trace,
                x,
                max_staleness: None,
            });
        }
    }
    Ok(RunOutput {
        trace,
        x,
        max_staleness: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrgConfig {
    pub epochs: usize,
    pub inner_iters: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub seed: u64,
    /// Also record loss and gradient norm at every inner iterate (costs one
    /// full-gradient pass per iteration; for small problems only).
    pub record_every_iter: bool,
}

/// Serial SVRG: per epoch take a snapshot, compute its full gradient, run `m`
/// dense variance-reduced updates, and roll the snapshot to the last iterate.
pub fn run_serial_svrg(
    problem: &FiniteSumProblem,
    x0: &ParamVector,
    cfg: &SvrgConfig,
) -> Result<RunOutput> {
    if !(cfg.eta > 0.0) {
        return Err(Error::invalid("eta must be positive"));
    }
    if cfg.inner_iters == 0 {
        return Err(Error::invalid("inner loop length must be at least 1"));
    }
    if cfg.batch_size == 0 || cfg.batch_size > problem.num_samples() {
        return Err(Error::invalid("batch size must lie in [1, n]"));
    }
    let n = problem.num_samples();
    let m = cfg.inner_iters;
    let mut x = x0.clone();
    let mut rng = rng::batch_stream(cfg.seed, 0);
    let mut trace = Trace::new();
    let mut work: u64 = 0;

    let mut mu = problem.grad_full(&x)?;
    work += n as u64;
    let loss0 = problem.loss(&x)?;
    trace.push(TraceRecord {
        epoch: 0,
        iter: 0,
        loss: loss0,
        grad_norm_sq: mu.norm_sq(),
        wall_ns: work,
        sum_v_sq: 0.0,
        sum_u_sq: 0.0,
    });

    for s in 0..cfg.epochs {
        let snap = Snapshot::from_parts(x.clone(), mu.clone(), s);
        let mut sum_v_sq = 0.0;
        for t in 0..m {
            if cfg.record_every_iter && t > 0 {
                let g = problem.grad_full(&x)?;
                trace.push(TraceRecord {
                    epoch: s,
                    iter: t,
                    loss: problem.loss(&x)?,
                    grad_norm_sq: g.norm_sq(),
                    wall_ns: work,
                    sum_v_sq,
                    sum_u_sq: sum_v_sq,
                });
            }
            let batch = rng::sample_batch(&mut rng, n, cfg.batch_size);
            let v = ideal_vr_gradient(problem, &x, &snap, &batch)?;
            work += 2 * batch.len() as u64;
            sum_v_sq += v.norm_sq();
            let mut xv = x.into_vec();
            vecmath::step_dense(&mut xv, cfg.eta, &v);
            x = ParamVector::from_vec(xv);
            if !vecmath::all_finite(&x) {
                trace.push(TraceRecord {
                    epoch: s,
                    iter: m,
                    loss: f64::INFINITY,
                    grad_norm_sq: f64::NAN,
                    wall_ns: work,
                    sum_v_sq,
                    sum_u_sq: sum_v_sq,
                });
                trace.mark_diverged();
                return Ok(RunOutput {
                    trace,
                    x,
                    max_staleness: None,
                });
            }
        }
        mu = problem.grad_full(&x)?;
        work += n as u64;
        let loss = problem.loss(&x)?;
        trace.push(TraceRecord {
            epoch: s,
            iter: m,
            loss,
            grad_norm_sq: mu.norm_sq(),
            wall_ns: work,
            // The serial updates read the current iterate, so u_t = v_t.
            sum_v_sq,
            sum_u_sq: sum_v_sq,
        });
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            trace.mark_diverged();
            return Ok(RunOutput {
                trace,
                x,
                max_staleness: None,
            });
        }
    }
    Ok(RunOutput {
        trace,
        x,
        max_staleness: None,
    })
}
