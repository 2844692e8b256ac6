//! Shared-memory asynchronous SVRG: worker threads read an inconsistent
//! parameter vector coordinate by coordinate, compute variance-reduced
//! gradients, and apply atomic per-coordinate block updates.
//!
//! Two modes share one configuration. Live mode runs real threads over a
//! [`SharedParams`] vector of per-coordinate atomics; its interleaving is
//! hardware-dependent, so correctness claims live in replay mode: a
//! single-threaded simulator that materializes each stale read
//! `x_hat = x_t - sum_{j in J(t)} (x_{j+1} - x_j)` from an explicit update
//! history under a [`StalenessSchedule`], bit-reproducibly. With an empty
//! schedule (or one live worker) either mode reproduces the serial SVRG
//! trajectory exactly.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::problem::{FiniteSumProblem, ParamVector};
use crate::rng;
use crate::svrg::{ideal_vr_gradient, vr_gradient, RunOutput, Snapshot, StaleReads};
use crate::trace::{Trace, TraceRecord, DIVERGENCE_LOSS};
use crate::vecmath;

/// A parameter vector whose coordinates are individually atomic. Reads and
/// writes of one coordinate never tear; no whole-vector consistency is
/// promised.
pub struct SharedParams {
    coords: Vec<AtomicU64>,
}

impl SharedParams {
    pub fn new(x: &[f64]) -> Self {
        SharedParams {
            coords: x.iter().map(|v| AtomicU64::new(v.to_bits())).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn read(&self, k: usize) -> f64 {
        f64::from_bits(self.coords[k].load(Ordering::Relaxed))
    }

    /// Reads every coordinate individually, without any lock; concurrent
    /// writers make the result a mixture of states.
    pub fn read_all_inconsistent(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.coords.len());
        for (o, c) in out.iter_mut().zip(&self.coords) {
            *o = f64::from_bits(c.load(Ordering::Relaxed));
        }
    }

    /// Atomic read-modify-write of one coordinate: `x_k <- x_k - eta * v_k`.
    pub fn step_coord(&self, k: usize, eta: f64, v_k: f64) {
        self.coords[k]
            .fetch_update(Ordering::Relaxed, Ordering::Relaxed, |bits| {
                Some(vecmath::stepped(f64::from_bits(bits), eta, v_k).to_bits())
            })
            .expect("fetch_update closure always returns Some");
    }

    /// Whole-vector copy; meaningful once writers have quiesced.
    pub fn to_vec(&self) -> Vec<f64> {
        self.coords
            .iter()
            .map(|c| f64::from_bits(c.load(Ordering::Relaxed)))
            .collect()
    }
}

/// Applies `x_k <- x_k - eta * v_k` for each `k` in `coords`, leaving every
/// other coordinate untouched. Coordinates must be distinct and in range.
pub fn apply_coord_update(x: &SharedParams, coords: &[usize], v: &[f64], eta: f64) -> Result<()> {
    let d = x.dim();
    if v.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: v.len(),
        });
    }
    let mut seen = vec![false; d];
    for &k in coords {
        if k >= d {
            return Err(Error::invalid(format!(
                "coordinate {k} out of range for d = {d}"
            )));
        }
        if seen[k] {
            return Err(Error::invalid(format!(
                "duplicate coordinate {k} in update block"
            )));
        }
        seen[k] = true;
    }
    for &k in coords {
        x.step_coord(k, eta, v[k]);
    }
    Ok(())
}

/// Which past updates each iteration's read misses.
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleEntry {
    /// All samples of the mini-batch share one read.
    Shared(Vec<usize>),
    /// One missed-update set per batch slot.
    PerSample(Vec<Vec<usize>>),
}

/// Per-iteration staleness specification: for global iteration `t`, a set
/// `J(t)` of prior iteration indices (within the same epoch, at most `delta`
/// back) whose updates the read misses.
#[derive(Debug, Clone, PartialEq)]
pub struct StalenessSchedule {
    delta: usize,
    epochs: usize,
    inner: usize,
    entries: Vec<ScheduleEntry>,
}

/// How [`make_staleness_schedule`] fills the sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleModel {
    None,
    Uniform,
    AdversarialMax,
}

impl StalenessSchedule {
    pub fn from_entries(
        epochs: usize,
        inner: usize,
        delta: usize,
        entries: Vec<ScheduleEntry>,
    ) -> Result<Self> {
        let sched = StalenessSchedule {
            delta,
            epochs,
            inner,
            entries,
        };
        sched.validate()?;
        Ok(sched)
    }

    pub fn delta(&self) -> usize {
        self.delta
    }

    pub fn covers(&self, epochs: usize, inner: usize) -> bool {
        self.epochs == epochs && self.inner == inner && self.entries.len() == epochs * inner
    }

    pub fn entry(&self, global_t: usize) -> &ScheduleEntry {
        &self.entries[global_t]
    }

    fn validate_set(&self, t: usize, set: &[usize]) -> Result<()> {
        let epoch_start = (t / self.inner) * self.inner;
        for &j in set {
            if j >= t {
                return Err(Error::Schedule(format!(
                    "J({t}) references iteration {j}, which is not in the past"
                )));
            }
            if t - j > self.delta {
                return Err(Error::Schedule(format!(
                    "J({t}) reaches {} iterations back, bound is {}",
                    t - j,
                    self.delta
                )));
            }
            if j < epoch_start {
                return Err(Error::Schedule(format!(
                    "J({t}) references iteration {j} from a previous epoch"
                )));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.len() != self.epochs * self.inner {
            return Err(Error::Schedule(format!(
                "schedule has {} entries, needs {}",
                self.entries.len(),
                self.epochs * self.inner
            )));
        }
        for (t, entry) in self.entries.iter().enumerate() {
            match entry {
                ScheduleEntry::Shared(set) => self.validate_set(t, set)?,
                ScheduleEntry::PerSample(sets) => {
                    for set in sets {
                        self.validate_set(t, set)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Line-oriented form: a `#` header with the shape, then `t: j1,j2,...`
    /// per iteration (per-sample entries use `t/slot:`).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# delta={} epochs={} inner={}",
            self.delta, self.epochs, self.inner
        );
        let join = |set: &[usize]| {
            set.iter()
                .map(|j| j.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        for (t, entry) in self.entries.iter().enumerate() {
            match entry {
                ScheduleEntry::Shared(set) => {
                    let _ = writeln!(s, "{t}: {}", join(set));
                }
                ScheduleEntry::PerSample(sets) => {
                    for (slot, set) in sets.iter().enumerate() {
                        let _ = writeln!(s, "{t}/{slot}: {}", join(set));
                    }
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut delta = None;
        let mut epochs = None;
        let mut inner = None;
        let mut shared: Vec<Option<Vec<usize>>> = Vec::new();
        let mut per_sample: Vec<(usize, usize, Vec<usize>)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                for field in rest.split_whitespace() {
                    let mut kv = field.splitn(2, '=');
                    let key = kv.next().unwrap_or("");
                    let value = kv.next().unwrap_or("");
                    let parsed: usize = value.parse().map_err(|_| {
                        Error::Schedule(format!("line {}: bad header value {field}", lineno + 1))
                    })?;
                    match key {
                        "delta" => delta = Some(parsed),
                        "epochs" => epochs = Some(parsed),
                        "inner" => inner = Some(parsed),
                        _ => return Err(Error::Schedule(format!("unknown header field {key}"))),
                    }
                }
                continue;
            }
            let (lhs, rhs) = line
                .split_once(':')
                .ok_or_else(|| Error::Schedule(format!("line {}: missing ':'", lineno + 1)))?;
            let set: Vec<usize> = if rhs.trim().is_empty() {
                Vec::new()
            } else {
                rhs.split(',')
                    .map(|tok| {
                        tok.trim().parse().map_err(|_| {
                            Error::Schedule(format!("line {}: bad index {tok}", lineno + 1))
                        })
                    })
                    .collect::<Result<_>>()?
            };
            if let Some((t, slot)) = lhs.trim().split_once('/') {
                let t: usize = t
                    .trim()
                    .parse()
                    .map_err(|_| Error::Schedule(format!("line {}: bad iteration", lineno + 1)))?;
                let slot: usize = slot
                    .trim()
                    .parse()
                    .map_err(|_| Error::Schedule(format!("line {}: bad slot", lineno + 1)))?;
                per_sample.push((t, slot, set));
            } else {
                let t: usize = lhs
                    .trim()
                    .parse()
                    .map_err(|_| Error::Schedule(format!("line {}: bad iteration", lineno + 1)))?;
                if shared.len() <= t {
                    shared.resize(t + 1, None);
                }
                if shared[t].is_some() {
                    return Err(Error::Schedule(format!(
                        "duplicate entry for iteration {t}"
                    )));
                }
                shared[t] = Some(set);
            }
        }
        let (delta, epochs, inner) = match (delta, epochs, inner) {
            (Some(d), Some(e), Some(i)) => (d, e, i),
            _ => {
                return Err(Error::Schedule(
                    "missing '# delta= epochs= inner=' header".into(),
                ))
            }
        };
        let total = epochs * inner;
        let mut entries: Vec<ScheduleEntry> = shared
            .into_iter()
            .chain(std::iter::repeat_with(|| None))
            .take(total)
            .map(|set| ScheduleEntry::Shared(set.unwrap_or_default()))
            .collect();
        for (t, slot, set) in per_sample {
            if t >= total {
                return Err(Error::Schedule(format!("iteration {t} outside schedule")));
            }
            let sets = match &mut entries[t] {
                ScheduleEntry::PerSample(sets) => sets,
                ScheduleEntry::Shared(existing) if existing.is_empty() => {
                    entries[t] = ScheduleEntry::PerSample(Vec::new());
                    match &mut entries[t] {
                        ScheduleEntry::PerSample(sets) => sets,
                        _ => unreachable!(),
                    }
                }
                _ => {
                    return Err(Error::Schedule(format!(
                        "iteration {t} mixes shared and per-sample entries"
                    )))
                }
            };
            if sets.len() <= slot {
                sets.resize(slot + 1, Vec::new());
            }
            sets[slot] = set;
        }
        StalenessSchedule::from_entries(epochs, inner, delta, entries)
    }
}

/// Builds a schedule for `epochs * inner` iterations. The lookback window of
/// iteration `t` is the last `min(t_local, delta)` iterations of its own
/// epoch (epochs are synchronization barriers).
pub fn make_staleness_schedule(
    epochs: usize,
    inner: usize,
    delta: usize,
    model: ScheduleModel,
    seed: u64,
) -> StalenessSchedule {
    use rand::Rng;
    let mut rng = rng::model_stream(seed);
    let mut entries = Vec::with_capacity(epochs * inner);
    for s in 0..epochs {
        for t_local in 0..inner {
            let t = s * inner + t_local;
            let window = usize::min(t_local, delta);
            let set: Vec<usize> = match model {
                ScheduleModel::None => Vec::new(),
                ScheduleModel::AdversarialMax => (t - window..t).rev().collect(),
                ScheduleModel::Uniform => (t - window..t)
                    .rev()
                    .filter(|_| rng.gen::<bool>())
                    .collect(),
            };
            entries.push(ScheduleEntry::Shared(set));
        }
    }
    StalenessSchedule {
        delta,
        epochs,
        inner,
        entries,
    }
}

/// Live threads or deterministic replay.
#[derive(Debug, Clone)]
pub enum SharedMode {
    Live,
    Replay(StalenessSchedule),
}

#[derive(Debug, Clone)]
pub struct SharedConfig {
    pub epochs: usize,
    pub inner_iters: usize,
    pub batch_size: usize,
    pub eta: f64,
    /// Coordinates updated per iteration; `d` means a dense step.
    pub block_size: usize,
    pub num_workers: usize,
    pub seed: u64,
    pub mode: SharedMode,
    pub record_every_iter: bool,
}

fn validate_config(problem: &FiniteSumProblem, cfg: &SharedConfig) -> Result<()> {
    if !(cfg.eta > 0.0) {
        return Err(Error::invalid("eta must be positive"));
    }
    if cfg.inner_iters == 0 {
        return Err(Error::invalid("inner loop length must be at least 1"));
    }
    if cfg.batch_size == 0 || cfg.batch_size > problem.num_samples() {
        return Err(Error::invalid("batch size must lie in [1, n]"));
    }
    if cfg.block_size == 0 || cfg.block_size > problem.dim() {
        return Err(Error::invalid("block size must lie in [1, d]"));
    }
    if cfg.num_workers == 0 {
        return Err(Error::invalid("need at least one worker"));
    }
    Ok(())
}

/// Runs shared-memory asynchronous SVRG in the mode the config selects.
pub fn run_shared_async(
    problem: &FiniteSumProblem,
    x0: &ParamVector,
    cfg: &SharedConfig,
) -> Result<RunOutput> {
    match &cfg.mode {
        SharedMode::Live => run_live(problem, x0, cfg),
        SharedMode::Replay(sched) => replay_with_schedule(problem, x0, cfg, sched),
    }
}

/// One applied update: the block coordinates and the value deltas
/// `x_{j+1} - x_j` restricted to them.
struct UpdateDelta {
    global_t: usize,
    changes: Vec<(usize, f64)>,
}

/// Deterministic single-threaded replay of the shared-memory semantics under
/// an explicit staleness schedule.
pub fn replay_with_schedule(
    problem: &FiniteSumProblem,
    x0: &ParamVector,
    cfg: &SharedConfig,
    sched: &StalenessSchedule,
) -> Result<RunOutput> {
    validate_config(problem, cfg)?;
    sched.validate()?;
    if !sched.covers(cfg.epochs, cfg.inner_iters) {
        return Err(Error::Schedule(format!(
            "schedule covers {} x {}, run needs {} x {}",
            sched.epochs, sched.inner, cfg.epochs, cfg.inner_iters
        )));
    }
    let n = problem.num_samples();
    let d = problem.dim();
    let m = cfg.inner_iters;
    let mut x = x0.clone().into_vec();
    problem.loss(&ParamVector::from_vec(x.clone()))?;
    let mut rng_batch = rng::batch_stream(cfg.seed, 0);
    let mut rng_block = rng::block_stream(cfg.seed, 0);
    let mut history: VecDeque<UpdateDelta> = VecDeque::with_capacity(sched.delta + 1);
    let mut trace = Trace::new();
    let mut work: u64 = 0;
    let mut max_tau = 0usize;

    let mut mu = problem.grad_full(&ParamVector::from_vec(x.clone()))?;
    work += n as u64;
    trace.push(TraceRecord {
        epoch: 0,
        iter: 0,
        loss: problem.loss(&ParamVector::from_vec(x.clone()))?,
        grad_norm_sq: mu.norm_sq(),
        wall_ns: work,
        sum_v_sq: 0.0,
        sum_u_sq: 0.0,
    });

    let materialize = |x: &[f64], set: &[usize], history: &VecDeque<UpdateDelta>| -> Vec<f64> {
        let mut xhat = x.to_vec();
        for &j in set {
            let upd = history
                .iter()
                .find(|u| u.global_t == j)
                .expect("schedule validated against history window");
            for &(k, delta_v) in &upd.changes {
                xhat[k] -= delta_v;
            }
        }
        xhat
    };

    for s in 0..cfg.epochs {
        let snap = Snapshot::from_parts(ParamVector::from_vec(x.clone()), mu.clone(), s);
        history.clear();
        let mut sum_v_sq = 0.0;
        let mut sum_u_sq = 0.0;
        for t_local in 0..m {
            let global_t = s * m + t_local;
            if cfg.record_every_iter && t_local > 0 {
                let xv = ParamVector::from_vec(x.clone());
                let g = problem.grad_full(&xv)?;
                trace.push(TraceRecord {
                    epoch: s,
                    iter: t_local,
                    loss: problem.loss(&xv)?,
                    grad_norm_sq: g.norm_sq(),
                    wall_ns: work,
                    sum_v_sq,
                    sum_u_sq,
                });
            }
            let batch = rng::sample_batch(&mut rng_batch, n, cfg.batch_size);
            let stale = match sched.entry(global_t) {
                ScheduleEntry::Shared(set) => {
                    let tau = set.iter().map(|&j| global_t - j).max().unwrap_or(0);
                    max_tau = max_tau.max(tau);
                    let xhat = materialize(&x, set, &history);
                    debug_assert!(xhat.len() == d);
                    StaleReads::shared(ParamVector::from_vec(xhat), tau, batch.len())
                }
                ScheduleEntry::PerSample(sets) => {
                    if sets.len() != batch.len() {
                        return Err(Error::Schedule(format!(
                            "iteration {global_t}: {} per-sample sets for batch of {}",
                            sets.len(),
                            batch.len()
                        )));
                    }
                    let mut xs = Vec::with_capacity(sets.len());
                    let mut taus = Vec::with_capacity(sets.len());
                    for set in sets {
                        let tau = set.iter().map(|&j| global_t - j).max().unwrap_or(0);
                        max_tau = max_tau.max(tau);
                        taus.push(tau);
                        xs.push(ParamVector::from_vec(materialize(&x, set, &history)));
                    }
                    StaleReads::per_sample(xs, taus)?
                }
            };
            let v = vr_gradient(problem, &stale, &snap, &batch)?;
            work += 2 * batch.len() as u64;
            // Diagnostic companion at the consistent state (not on the
            // algorithmic path, so not counted as work).
            let u = ideal_vr_gradient(problem, &ParamVector::from_vec(x.clone()), &snap, &batch)?;
            sum_v_sq += v.norm_sq();
            sum_u_sq += u.norm_sq();

            let block: Vec<usize> = if cfg.block_size == d {
                (0..d).collect()
            } else {
                rng::sample_block(&mut rng_block, d, cfg.block_size)
            };
            let mut changes = Vec::with_capacity(block.len());
            for &k in &block {
                let old = x[k];
                let new = vecmath::stepped(old, cfg.eta, v[k]);
                x[k] = new;
                changes.push((k, new - old));
            }
            history.push_back(UpdateDelta { global_t, changes });
            while history.len() > sched.delta {
                history.pop_front();
            }
            if !vecmath::all_finite(&x) {
                trace.push(TraceRecord {
                    epoch: s,
                    iter: m,
                    loss: f64::INFINITY,
                    grad_norm_sq: f64::NAN,
                    wall_ns: work,
                    sum_v_sq,
                    sum_u_sq,
                });
                trace.mark_diverged();
                return Ok(RunOutput {
                    trace,
                    x: ParamVector::from_vec(x),
                    max_staleness: Some(max_tau),
                });
            }
        }
        let xv = ParamVector::from_vec(x.clone());
        mu = problem.grad_full(&xv)?;
        work += n as u64;
        let loss = problem.loss(&xv)?;
        trace.push(TraceRecord {
            epoch: s,
            iter: m,
            loss,
            grad_norm_sq: mu.norm_sq(),
            wall_ns: work,
            sum_v_sq,
            sum_u_sq,
        });
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            trace.mark_diverged();
            return Ok(RunOutput {
                trace,
                x: ParamVector::from_vec(x),
                max_staleness: Some(max_tau),
            });
        }
    }
    Ok(RunOutput {
        trace,
        x: ParamVector::from_vec(x),
        max_staleness: Some(max_tau),
    })
}

fn run_live(problem: &FiniteSumProblem, x0: &ParamVector, cfg: &SharedConfig) -> Result<RunOutput> {
    validate_config(problem, cfg)?;
    let n = problem.num_samples();
    let d = problem.dim();
    let m = cfg.inner_iters;
    problem.loss(x0)?;
    let params = SharedParams::new(x0);
    let started = Instant::now();
    let mut trace = Trace::new();

    let mut x = ParamVector::from_vec(params.to_vec());
    let mut mu = problem.grad_full(&x)?;
    trace.push(TraceRecord {
        epoch: 0,
        iter: 0,
        loss: problem.loss(&x)?,
        grad_norm_sq: mu.norm_sq(),
        wall_ns: started.elapsed().as_nanos() as u64,
        sum_v_sq: 0.0,
        sum_u_sq: 0.0,
    });

    // One stream pair per worker for the whole run; each epoch continues
    // where the last one stopped, exactly like the serial runner's stream.
    let mut worker_rngs: Vec<_> = (0..cfg.num_workers)
        .map(|w| {
            (
                rng::batch_stream(cfg.seed, w),
                rng::block_stream(cfg.seed, w),
            )
        })
        .collect();

    for s in 0..cfg.epochs {
        let snap = Snapshot::from_parts(x.clone(), mu.clone(), s);
        let counter = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let mut worker_sums = vec![0.0f64; cfg.num_workers];
        let mut worker_iters = vec![0usize; cfg.num_workers];

        std::thread::scope(|scope| {
            let mut handles = Vec::with_capacity(cfg.num_workers);
            for rngs in worker_rngs.iter_mut() {
                let params = &params;
                let snap = &snap;
                let counter = &counter;
                let abort = &abort;
                handles.push(scope.spawn(move || -> (f64, usize) {
                    let (rng_batch, rng_block) = rngs;
                    let mut xhat = vec![0.0f64; d];
                    let mut sum_v_sq = 0.0;
                    let mut iters = 0usize;
                    loop {
                        if abort.load(Ordering::Relaxed) {
                            break;
                        }
                        let t = counter.fetch_add(1, Ordering::Relaxed);
                        if t >= m {
                            break;
                        }
                        let batch = rng::sample_batch(rng_batch, n, cfg.batch_size);
                        params.read_all_inconsistent(&mut xhat);
                        let stale =
                            StaleReads::shared(ParamVector::from_vec(xhat.clone()), 0, batch.len());
                        let v = vr_gradient(problem, &stale, snap, &batch)
                            .expect("inputs validated before spawn");
                        if !vecmath::all_finite(&v) {
                            abort.store(true, Ordering::Relaxed);
                            break;
                        }
                        sum_v_sq += v.norm_sq();
                        iters += 1;
                        if cfg.block_size == d {
                            for k in 0..d {
                                params.step_coord(k, cfg.eta, v[k]);
                            }
                        } else {
                            let block = rng::sample_block(rng_block, d, cfg.block_size);
                            for &k in &block {
                                params.step_coord(k, cfg.eta, v[k]);
                            }
                        }
                    }
                    (sum_v_sq, iters)
                }));
            }
            for (w, handle) in handles.into_iter().enumerate() {
                let (sum, iters) = handle.join().expect("worker panicked");
                worker_sums[w] = sum;
                worker_iters[w] = iters;
            }
        });

        let aborted = abort.load(Ordering::Relaxed);
        let total_iters: usize = worker_iters.iter().sum();
        assert!(
            aborted || total_iters == m,
            "iteration accounting: {total_iters} updates applied, expected {m}"
        );

        let mut sum_v_sq = 0.0;
        for sum in &worker_sums {
            sum_v_sq += sum;
        }
        // With one worker every read is consistent, so u_t = v_t exactly; with
        // more workers the consistent-state companion is not observable live.
        let sum_u_sq = if cfg.num_workers == 1 { sum_v_sq } else { 0.0 };

        x = ParamVector::from_vec(params.to_vec());
        if aborted || !vecmath::all_finite(&x) {
            trace.push(TraceRecord {
                epoch: s,
                iter: m,
                loss: f64::INFINITY,
                grad_norm_sq: f64::NAN,
                wall_ns: started.elapsed().as_nanos() as u64,
                sum_v_sq,
                sum_u_sq,
            });
            trace.mark_diverged();
            return Ok(RunOutput {
                trace,
                x,
                max_staleness: None,
            });
        }
        mu = problem.grad_full(&x)?;
        let loss = problem.loss(&x)?;
        trace.push(TraceRecord {
            epoch: s,
            iter: m,
            loss,
            grad_norm_sq: mu.norm_sq(),
            wall_ns: started.elapsed().as_nanos() as u64,
            sum_v_sq,
            sum_u_sq,
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

/// Per-epoch check of the variance-transfer inequality on a replayed trace;
/// used by tests and the harness.
pub fn corollary_ratio_ok(sum_v_sq: f64, sum_u_sq: f64, factor: f64, delta: usize) -> bool {
    if delta == 0 {
        return sum_v_sq == sum_u_sq;
    }
    sum_v_sq <= factor * sum_u_sq
}
