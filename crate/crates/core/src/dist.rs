//! Distributed-memory asynchronous SVRG: a server state machine and pure
//! worker functions exchanging messages over a simulated channel with
//! bounded staleness.
//!
//! The "network" is a deterministic event loop. Each epoch has two phases:
//! a gather phase in which workers return partial sums of the full gradient
//! over fixed chunk ranges (merged in chunk order, so the gathered gradient
//! is bit-identical to `grad_full`), and an inner phase in which up to
//! `delta + 1` parameter requests are in flight at once and the delay model
//! decides which pending gradient the server applies next. Realized
//! staleness `t_apply - t_issued` never exceeds `delta`; `fifo_zero` with
//! one worker replays the serial SVRG trajectory bit for bit.
//!
//! Virtual time: one tick per sample-gradient evaluation on the algorithmic
//! path. Workers compute in parallel, the server applies instantly, and the
//! trace's `wall_ns` column carries the virtual clock.

use rand::Rng;

use crate::accum;
use crate::error::{Error, Result};
use crate::problem::{FiniteSumProblem, ParamVector};
use crate::rng;
use crate::svrg::{batch_mean_grad, vr_combine, MiniBatch, RunOutput, Snapshot};
use crate::trace::{Trace, TraceRecord, DIVERGENCE_LOSS};
use crate::vecmath;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayKind {
    /// Strictly synchronous: every applied gradient was computed at the
    /// current iterate.
    FifoZero,
    /// Random admissible staleness in `[0, delta]`.
    Uniform,
    /// Constant staleness `min(delta, t)` once the pipeline is warm.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelayModel {
    pub kind: DelayKind,
    pub delta: usize,
    pub seed: u64,
}

/// FifoZero pins the bound to zero regardless of the requested `delta`.
pub fn make_delay_model(kind: DelayKind, delta: usize, seed: u64) -> DelayModel {
    let delta = match kind {
        DelayKind::FifoZero => 0,
        _ => delta,
    };
    DelayModel { kind, delta, seed }
}

impl DelayModel {
    fn pipeline_depth(&self) -> usize {
        self.delta + 1
    }
}

#[derive(Debug, Clone)]
pub enum Message {
    BroadcastSnapshot {
        epoch: usize,
        x_tilde: ParamVector,
    },
    FullGradPart {
        worker: usize,
        epoch: usize,
        first_chunk: usize,
        partials: Vec<Vec<f64>>,
    },
    ParamsForWork {
        worker: usize,
        epoch: usize,
        t_issued: usize,
        x: ParamVector,
    },
    GradPair {
        worker: usize,
        epoch: usize,
        t_issued: usize,
        g_stale: ParamVector,
        g_snap: ParamVector,
        batch: MiniBatch,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Gather,
    Inner,
}

/// The single-threaded server: current parameters, snapshot, inner counter
/// and the pending full-gradient gather.
#[derive(Debug, Clone)]
pub struct ServerState {
    x: Vec<f64>,
    eta: f64,
    m: usize,
    n: usize,
    d: usize,
    epoch: usize,
    t: usize,
    phase: Phase,
    snapshot: Option<Snapshot>,
    chunk_slots: Vec<Option<Vec<f64>>>,
}

impl ServerState {
    pub fn new(x0: &ParamVector, eta: f64, m: usize, n: usize) -> Self {
        let d = x0.len();
        let chunks = accum::chunk_ranges(n).len();
        ServerState {
            x: x0.values().to_vec(),
            eta,
            m,
            n,
            d,
            epoch: 0,
            t: 0,
            phase: Phase::Gather,
            snapshot: None,
            chunk_slots: vec![None; chunks],
        }
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn snapshot(&self) -> Option<&Snapshot> {
        self.snapshot.as_ref()
    }

    pub fn gathering(&self) -> bool {
        self.phase == Phase::Gather
    }

    /// The broadcast opening the current epoch's gather phase.
    pub fn broadcast(&self) -> Result<Message> {
        if self.phase != Phase::Gather {
            return Err(Error::Protocol(
                "broadcast only opens a gather phase".into(),
            ));
        }
        Ok(Message::BroadcastSnapshot {
            epoch: self.epoch,
            x_tilde: ParamVector::from_vec(self.x.clone()),
        })
    }
}

/// Result of one server transition.
#[derive(Debug)]
pub struct ServerStep {
    pub state: ServerState,
    pub outbound: Vec<Message>,
    /// The variance-reduced direction applied by this step, if the message
    /// was a gradient pair.
    pub applied_v: Option<ParamVector>,
}

/// Feeds one message to the server. Gather-phase `FullGradPart`s accumulate
/// into the snapshot's full gradient; an inner-phase `GradPair` applies
/// `v = g_stale - g_snap + mu` and answers with fresh parameters, or closes
/// the epoch and emits the next broadcast after the m-th update.
pub fn server_step(mut state: ServerState, msg: Message) -> Result<ServerStep> {
    match msg {
        Message::FullGradPart {
            worker: _,
            epoch,
            first_chunk,
            partials,
        } => {
            if state.phase != Phase::Gather {
                return Err(Error::Protocol(
                    "full-gradient part outside gather phase".into(),
                ));
            }
            if epoch != state.epoch {
                return Err(Error::Protocol(format!(
                    "full-gradient part for epoch {epoch}, server in epoch {}",
                    state.epoch
                )));
            }
            for (offset, part) in partials.into_iter().enumerate() {
                let slot = first_chunk + offset;
                if slot >= state.chunk_slots.len() {
                    return Err(Error::Protocol(format!("chunk {slot} out of range")));
                }
                if part.len() != state.d {
                    return Err(Error::Protocol("chunk partial has wrong dimension".into()));
                }
                if state.chunk_slots[slot].is_some() {
                    return Err(Error::Protocol(format!("duplicate chunk {slot}")));
                }
                state.chunk_slots[slot] = Some(part);
            }
            if state.chunk_slots.iter().all(Option::is_some) {
                let parts: Vec<Vec<f64>> = state
                    .chunk_slots
                    .iter_mut()
                    .map(|s| s.take().unwrap())
                    .collect();
                let mut mu = accum::combine_partials(state.d, &parts);
                let inv_n = 1.0 / state.n as f64;
                for v in &mut mu {
                    *v *= inv_n;
                }
                state.snapshot = Some(Snapshot::from_parts(
                    ParamVector::from_vec(state.x.clone()),
                    ParamVector::from_vec(mu),
                    state.epoch,
                ));
                state.phase = Phase::Inner;
                state.t = 0;
            }
            Ok(ServerStep {
                state,
                outbound: Vec::new(),
                applied_v: None,
            })
        }
        Message::GradPair {
            worker,
            epoch,
            t_issued,
            g_stale,
            g_snap,
            batch: _,
        } => {
            if state.phase != Phase::Inner {
                return Err(Error::Protocol("gradient pair outside inner phase".into()));
            }
            if epoch != state.epoch {
                return Err(Error::Protocol(format!(
                    "gradient pair from epoch {epoch}, server in epoch {}",
                    state.epoch
                )));
            }
            if t_issued > state.t {
                return Err(Error::Protocol(format!(
                    "gradient pair issued at future t {t_issued} (server t {})",
                    state.t
                )));
            }
            if g_stale.len() != state.d || g_snap.len() != state.d {
                return Err(Error::Protocol("gradient pair has wrong dimension".into()));
            }
            let snap = state.snapshot.as_ref().expect("inner phase has a snapshot");
            let v = vr_combine(&g_stale, &g_snap, snap.mu());
            vecmath::step_dense(&mut state.x, state.eta, &v);
            state.t += 1;
            let outbound = if state.t == state.m {
                state.epoch += 1;
                state.phase = Phase::Gather;
                let chunks = state.chunk_slots.len();
                state.chunk_slots = vec![None; chunks];
                vec![Message::BroadcastSnapshot {
                    epoch: state.epoch,
                    x_tilde: ParamVector::from_vec(state.x.clone()),
                }]
            } else {
                vec![Message::ParamsForWork {
                    worker,
                    epoch: state.epoch,
                    t_issued: state.t,
                    x: ParamVector::from_vec(state.x.clone()),
                }]
            };
            Ok(ServerStep {
                state,
                outbound,
                applied_v: Some(ParamVector::from_vec(v)),
            })
        }
        Message::BroadcastSnapshot { .. } | Message::ParamsForWork { .. } => Err(Error::Protocol(
            "server received a worker-bound message".into(),
        )),
    }
}

/// Pure worker computation: both batch gradients (at the received parameters
/// and at the snapshot) over the same mini-batch.
pub fn worker_step(
    problem: &FiniteSumProblem,
    worker: usize,
    x_received: &ParamVector,
    snap: &Snapshot,
    batch: MiniBatch,
    t_issued: usize,
) -> Result<Message> {
    if x_received.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: x_received.len(),
        });
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
    let g_stale = batch_mean_grad(problem, &batch, x_received);
    let g_snap = batch_mean_grad(problem, &batch, snap.x_tilde());
    Ok(Message::GradPair {
        worker,
        epoch: snap.epoch(),
        t_issued,
        g_stale: ParamVector::from_vec(g_stale),
        g_snap: ParamVector::from_vec(g_snap),
        batch,
    })
}

#[derive(Debug, Clone)]
pub struct DistConfig {
    pub epochs: usize,
    pub inner_iters: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub num_workers: usize,
    pub delay: DelayModel,
    pub seed: u64,
    pub record_every_iter: bool,
}

/// One line of the audit log: `time kind worker t_issued`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub time: u64,
    pub kind: &'static str,
    pub worker: usize,
    pub t_issued: usize,
}

impl std::fmt::Display for EventRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {} {} {}",
            self.time, self.kind, self.worker, self.t_issued
        )
    }
}

struct PendingGrad {
    seq: u64,
    t_issued: usize,
    ready_at: u64,
    msg: Message,
}

/// Balanced contiguous chunk assignment for the gather phase: worker `w`
/// gets a run of whole chunks, so the merged sum reproduces `grad_full`'s
/// combine tree regardless of the worker count.
fn gather_assignments(n: usize, workers: usize) -> Vec<(usize, Vec<(usize, usize)>)> {
    let ranges = accum::chunk_ranges(n);
    let total = ranges.len();
    let per = total / workers;
    let extra = total % workers;
    let mut out = Vec::with_capacity(workers);
    let mut next = 0;
    for w in 0..workers {
        let count = per + usize::from(w < extra);
        let first = next;
        let slice = ranges[first..first + count].to_vec();
        next += count;
        out.push((first, slice));
        let _ = w;
    }
    out
}

/// Event-driven simulation of the server/worker protocol.
pub fn run_distributed(
    problem: &FiniteSumProblem,
    x0: &ParamVector,
    cfg: &DistConfig,
) -> Result<RunOutput> {
    run_distributed_with_events(problem, x0, cfg).map(|(out, _)| out)
}

pub fn run_distributed_with_events(
    problem: &FiniteSumProblem,
    x0: &ParamVector,
    cfg: &DistConfig,
) -> Result<(RunOutput, Vec<EventRecord>)> {
    if !(cfg.eta > 0.0) {
        return Err(Error::invalid("eta must be positive"));
    }
    if cfg.inner_iters == 0 {
        return Err(Error::invalid("inner loop length must be at least 1"));
    }
    if cfg.batch_size == 0 || cfg.batch_size > problem.num_samples() {
        return Err(Error::invalid("batch size must lie in [1, n]"));
    }
    if cfg.num_workers == 0 {
        return Err(Error::invalid("need at least one worker"));
    }
    problem.loss(x0)?;

    let n = problem.num_samples();
    let m = cfg.inner_iters;
    let w_count = cfg.num_workers;
    let depth = cfg.delay.pipeline_depth();

    let mut state = ServerState::new(x0, cfg.eta, m, n);
    let mut batch_rngs: Vec<_> = (0..w_count)
        .map(|w| rng::batch_stream(cfg.seed, w))
        .collect();
    let mut delay_rng = rng::model_stream(cfg.delay.seed);
    let mut worker_free = vec![0u64; w_count];
    let mut clock: u64 = 0;
    let mut seq: u64 = 0;
    let mut events: Vec<EventRecord> = Vec::new();
    let mut trace = Trace::new();
    let mut max_staleness = 0usize;

    // Processes one gather phase: deliver the broadcast, collect the chunk
    // partials, advance the clock by the slowest worker's share.
    let gather = |state: ServerState,
                  broadcast: &Message,
                  clock: &mut u64,
                  worker_free: &mut [u64],
                  events: &mut Vec<EventRecord>|
     -> Result<ServerState> {
        let (epoch, x_tilde) = match broadcast {
            Message::BroadcastSnapshot { epoch, x_tilde } => (*epoch, x_tilde),
            _ => return Err(Error::Protocol("gather phase needs a broadcast".into())),
        };
        events.push(EventRecord {
            time: *clock,
            kind: "broadcast",
            worker: 0,
            t_issued: epoch,
        });
        let mut state = state;
        let mut phase_end = *clock;
        for (w, (first_chunk, chunks)) in gather_assignments(n, w_count).into_iter().enumerate() {
            let samples: usize = chunks.iter().map(|(lo, hi)| hi - lo).sum();
            if samples == 0 {
                continue;
            }
            let partials: Vec<Vec<f64>> = chunks
                .iter()
                .map(|&(lo, hi)| problem.grad_chunk_partial(x_tilde, lo, hi))
                .collect();
            let done = *clock + samples as u64;
            worker_free[w] = done;
            phase_end = phase_end.max(done);
            let step = server_step(
                state,
                Message::FullGradPart {
                    worker: w,
                    epoch,
                    first_chunk,
                    partials,
                },
            )?;
            state = step.state;
        }
        *clock = phase_end;
        if state.gathering() {
            return Err(Error::Protocol("gather phase ended incomplete".into()));
        }
        Ok(state)
    };

    // Epoch 0 gather.
    let broadcast = state.broadcast()?;
    state = gather(state, &broadcast, &mut clock, &mut worker_free, &mut events)?;
    {
        let xv = ParamVector::from_vec(state.x.clone());
        let snap = state.snapshot().expect("gather complete");
        trace.push(TraceRecord {
            epoch: 0,
            iter: 0,
            loss: problem.loss(&xv)?,
            grad_norm_sq: snap.mu().norm_sq(),
            wall_ns: clock,
            sum_v_sq: 0.0,
            sum_u_sq: 0.0,
        });
    }

    for s in 0..cfg.epochs {
        let snap = state.snapshot().expect("inner phase has snapshot").clone();
        let mut pending: Vec<PendingGrad> = Vec::new();
        let mut issued = 0usize;
        let mut sum_v_sq = 0.0;
        let mut sum_u_sq = 0.0;

        let issue = |to_worker: usize,
                     t_issued: usize,
                     x: &ParamVector,
                     clock: u64,
                     worker_free: &mut [u64],
                     batch_rngs: &mut Vec<rand_xoshiro::Xoshiro256PlusPlus>,
                     pending: &mut Vec<PendingGrad>,
                     events: &mut Vec<EventRecord>,
                     seq: &mut u64|
         -> Result<()> {
            let batch = rng::sample_batch(&mut batch_rngs[to_worker], n, cfg.batch_size);
            let cost = 2 * batch.len() as u64;
            let msg = worker_step(problem, to_worker, x, &snap, batch, t_issued)?;
            let ready_at = clock.max(worker_free[to_worker]) + cost;
            worker_free[to_worker] = ready_at;
            events.push(EventRecord {
                time: clock,
                kind: "issue",
                worker: to_worker,
                t_issued,
            });
            pending.push(PendingGrad {
                seq: *seq,
                t_issued,
                ready_at,
                msg,
            });
            *seq += 1;
            Ok(())
        };

        // Warm the pipeline at the snapshot state.
        let x_start = ParamVector::from_vec(state.x.clone());
        for i in 0..usize::min(depth, m) {
            issue(
                i % w_count,
                0,
                &x_start,
                clock,
                &mut worker_free,
                &mut batch_rngs,
                &mut pending,
                &mut events,
                &mut seq,
            )?;
            issued += 1;
        }

        let mut diverged = false;
        let mut applies = 0usize;
        while applies < m && !diverged {
            let t_apply = state.t();
            if cfg.record_every_iter && t_apply > 0 {
                let xv = ParamVector::from_vec(state.x.clone());
                let g = problem.grad_full(&xv)?;
                trace.push(TraceRecord {
                    epoch: s,
                    iter: t_apply,
                    loss: problem.loss(&xv)?,
                    grad_norm_sq: g.norm_sq(),
                    wall_ns: clock,
                    sum_v_sq,
                    sum_u_sq,
                });
            }
            // Choose which pending gradient the channel delivers.
            let idx = match cfg.delay.kind {
                DelayKind::FifoZero | DelayKind::Fixed => pending
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, p)| p.seq)
                    .map(|(i, _)| i)
                    .expect("pipeline is never empty before t = m"),
                DelayKind::Uniform => {
                    // Random among the choices that leave the rest of the
                    // pipeline deliverable within the bound: after removing a
                    // candidate, the k-th earliest deadline (issue + delta)
                    // must be at least slot t + k (Hall's condition).
                    let feasible: Vec<usize> = (0..pending.len())
                        .filter(|&i| {
                            let mut deadlines: Vec<usize> = pending
                                .iter()
                                .enumerate()
                                .filter(|(j, _)| *j != i)
                                .map(|(_, p)| p.t_issued + cfg.delay.delta)
                                .collect();
                            deadlines.sort_unstable();
                            deadlines
                                .iter()
                                .enumerate()
                                .all(|(k, &dl)| dl >= t_apply + 1 + k)
                        })
                        .collect();
                    debug_assert!(
                        !feasible.is_empty(),
                        "pipeline depth keeps one choice legal"
                    );
                    feasible[delay_rng.gen_range(0..feasible.len())]
                }
            };
            let grad = pending.swap_remove(idx);
            let staleness = t_apply - grad.t_issued;
            if staleness > cfg.delay.delta {
                return Err(Error::Protocol(format!(
                    "channel would deliver staleness {staleness} over bound {}",
                    cfg.delay.delta
                )));
            }
            max_staleness = max_staleness.max(staleness);
            clock = clock.max(grad.ready_at);

            // Diagnostic companion at the server's own (consistent) state.
            if let Message::GradPair { batch, .. } = &grad.msg {
                let g_cur = batch_mean_grad(problem, batch, &state.x);
                let g_snap = batch_mean_grad(problem, batch, snap.x_tilde());
                let u = vr_combine(&g_cur, &g_snap, snap.mu());
                sum_u_sq += vecmath::norm_sq(&u);
            }

            let worker = match &grad.msg {
                Message::GradPair { worker, .. } => *worker,
                _ => unreachable!("pending holds gradient pairs"),
            };
            events.push(EventRecord {
                time: clock,
                kind: "apply",
                worker,
                t_issued: grad.t_issued,
            });
            let step = server_step(state, grad.msg)?;
            state = step.state;
            applies += 1;
            let v = step.applied_v.expect("gradient pair applies an update");
            sum_v_sq += v.norm_sq();
            if !vecmath::all_finite(&state.x) {
                diverged = true;
            }
            for out in step.outbound {
                match out {
                    Message::ParamsForWork {
                        worker,
                        epoch: _,
                        t_issued,
                        x,
                    } if issued < m => {
                        issue(
                            worker,
                            t_issued,
                            &x,
                            clock,
                            &mut worker_free,
                            &mut batch_rngs,
                            &mut pending,
                            &mut events,
                            &mut seq,
                        )?;
                        issued += 1;
                    }
                    Message::ParamsForWork {
                        worker, t_issued, ..
                    } => {
                        // Quiescing: the epoch's update budget is issued.
                        events.push(EventRecord {
                            time: clock,
                            kind: "quiesce",
                            worker,
                            t_issued,
                        });
                    }
                    Message::BroadcastSnapshot { epoch, x_tilde } => {
                        // Epoch closed; leftover pending gradients are stale
                        // and dropped at the barrier.
                        for p in pending.drain(..) {
                            if let Message::GradPair {
                                worker, t_issued, ..
                            } = p.msg
                            {
                                events.push(EventRecord {
                                    time: clock,
                                    kind: "drop",
                                    worker,
                                    t_issued,
                                });
                            }
                        }
                        let broadcast = Message::BroadcastSnapshot { epoch, x_tilde };
                        state =
                            gather(state, &broadcast, &mut clock, &mut worker_free, &mut events)?;
                    }
                    other => {
                        return Err(Error::Protocol(format!(
                            "unexpected server output {other:?}"
                        )))
                    }
                }
            }
        }

        if diverged {
            trace.push(TraceRecord {
                epoch: s,
                iter: m,
                loss: f64::INFINITY,
                grad_norm_sq: f64::NAN,
                wall_ns: clock,
                sum_v_sq,
                sum_u_sq,
            });
            trace.mark_diverged();
            return Ok((
                RunOutput {
                    trace,
                    x: ParamVector::from_vec(state.x.clone()),
                    max_staleness: Some(max_staleness),
                },
                events,
            ));
        }

        // The epoch-closing gather just ran, so the fresh snapshot's gradient
        // is the full gradient at the last iterate.
        let xv = ParamVector::from_vec(state.x.clone());
        let loss = problem.loss(&xv)?;
        let gnorm = state.snapshot().expect("gather complete").mu().norm_sq();
        trace.push(TraceRecord {
            epoch: s,
            iter: m,
            loss,
            grad_norm_sq: gnorm,
            wall_ns: clock,
            sum_v_sq,
            sum_u_sq,
        });
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            trace.mark_diverged();
            return Ok((
                RunOutput {
                    trace,
                    x: ParamVector::from_vec(state.x.clone()),
                    max_staleness: Some(max_staleness),
                },
                events,
            ));
        }
    }

    Ok((
        RunOutput {
            trace,
            x: ParamVector::from_vec(state.x.clone()),
            max_staleness: Some(max_staleness),
        },
        events,
    ))
}

#[cfg(test)]
mod tests;
