//! Experiment dispatch: builds the problem from a config, runs the selected
//! method on the selected architecture (tuning over a grid when one is
//! given), and writes traces plus a summary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use asyvr_core::dist::{make_delay_model, run_distributed_with_events, DistConfig, EventRecord};
use asyvr_core::shared::{
    make_staleness_schedule, run_shared_async, SharedConfig, SharedMode, StalenessSchedule,
};
use asyvr_core::theory::{self, ArchMode, TheoryParams};
use asyvr_core::{
    gen_synthetic, gen_synthetic_regression, load_idx, run_serial_svrg, run_sgd, Error,
    FiniteSumProblem, ParamVector, ProblemKind, Result, RunOutput, SgdConfig, SgdSchedule,
    SvrgConfig, SyntheticRegressionSpec, SyntheticSpec,
};

use crate::config::{Arch, DataSource, Method, ProblemSpec, RunConfig};
use crate::corollary::{check_corollary1, CorollaryInputs, CorollaryReport};

pub fn build_problem(cfg: &RunConfig) -> Result<FiniteSumProblem> {
    let dataset = match &cfg.data {
        DataSource::Synthetic {
            n,
            p,
            classes,
            noise,
            seed,
        } => gen_synthetic(&SyntheticSpec {
            n: *n,
            p: *p,
            num_classes: *classes,
            noise: *noise,
            seed: *seed,
        })?,
        DataSource::SyntheticRegression { n, p, noise, seed } => {
            gen_synthetic_regression(&SyntheticRegressionSpec {
                n: *n,
                p: *p,
                noise: *noise,
                seed: *seed,
            })?
        }
        DataSource::Idx {
            images,
            labels,
            limit,
        } => load_idx(images, labels, *limit)?,
    };
    let kind = match &cfg.problem {
        ProblemSpec::LeastSquares => ProblemKind::LeastSquares,
        ProblemSpec::LogisticNonconvex { lambda } => {
            ProblemKind::LogisticNonconvex { lambda: *lambda }
        }
        ProblemSpec::Mlp { hidden } => ProblemKind::Mlp { hidden: *hidden },
    };
    FiniteSumProblem::new(dataset, kind, cfg.l2)
}

/// One tuning-grid entry and what it achieved.
#[derive(Debug, Clone, Serialize)]
pub struct GridResult {
    pub label: String,
    pub final_loss: f64,
    pub diverged: bool,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoryVerdict {
    pub l_estimate: f64,
    pub mode: ArchMode,
    pub gamma: Option<f64>,
    pub feasible: bool,
    pub half_condition_ok: Option<bool>,
    pub corollary_factor: Option<f64>,
    pub delay_bound_sq: f64,
    pub recommended: Option<theory::Recommended>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub method: String,
    pub arch: String,
    pub n: usize,
    pub d: usize,
    pub final_loss: f64,
    pub final_grad_norm_sq: f64,
    pub wall_seconds: f64,
    /// Virtual clock at the end of a simulated distributed run.
    pub virtual_ticks: Option<u64>,
    pub diverged: bool,
    pub max_staleness: Option<usize>,
    pub selected: String,
    pub grid: Vec<GridResult>,
    pub corollary: Option<CorollaryReport>,
    pub theory: Option<TheoryVerdict>,
    pub artifacts: Vec<String>,
    pub config: String,
}

#[derive(Debug)]
pub struct ExperimentArtifacts {
    pub dir: PathBuf,
    pub trace_paths: Vec<PathBuf>,
    pub summary_path: PathBuf,
    pub summary: Summary,
}

struct SvrgRun {
    output: RunOutput,
    eta: f64,
    wall_seconds: f64,
    schedule: Option<StalenessSchedule>,
    events: Option<Vec<EventRecord>>,
}

fn method_label(m: &Method) -> &'static str {
    match m {
        Method::Sgd { .. } => "sgd",
        Method::Svrg { .. } => "svrg",
        Method::SgdThenSvrg { .. } => "sgd_then_svrg",
    }
}

fn arch_label(a: &Arch) -> String {
    match a {
        Arch::Serial => "serial".into(),
        Arch::Shared { workers, live, .. } => {
            format!(
                "shared({workers} workers, {})",
                if *live { "live" } else { "replay" }
            )
        }
        Arch::Distributed { workers, .. } => format!("distributed({workers} workers)"),
    }
}

fn run_svrg_once(
    problem: &FiniteSumProblem,
    x0: &ParamVector,
    cfg: &RunConfig,
    eta: f64,
) -> Result<SvrgRun> {
    let start = Instant::now();
    let (output, schedule, events) = match &cfg.arch {
        Arch::Serial => {
            let out = run_serial_svrg(
                problem,
                x0,
                &SvrgConfig {
                    epochs: cfg.epochs,
                    inner_iters: cfg.inner_iters,
                    batch_size: cfg.batch_size,
                    eta,
                    seed: cfg.seed,
                    record_every_iter: cfg.record_every_iter,
                },
            )?;
            (out, None, None)
        }
        Arch::Shared {
            workers,
            block,
            delta,
            schedule,
            schedule_seed,
            live,
        } => {
            let block_size = block.unwrap_or(problem.dim());
            let mode = if *live {
                SharedMode::Live
            } else {
                let sched = make_staleness_schedule(
                    cfg.epochs,
                    cfg.inner_iters,
                    *delta,
                    *schedule,
                    *schedule_seed,
                );
                SharedMode::Replay(sched)
            };
            let shared_cfg = SharedConfig {
                epochs: cfg.epochs,
                inner_iters: cfg.inner_iters,
                batch_size: cfg.batch_size,
                eta,
                block_size,
                num_workers: *workers,
                seed: cfg.seed,
                mode: mode.clone(),
                record_every_iter: cfg.record_every_iter,
            };
            let out = run_shared_async(problem, x0, &shared_cfg)?;
            let sched = match mode {
                SharedMode::Replay(s) => Some(s),
                SharedMode::Live => None,
            };
            (out, sched, None)
        }
        Arch::Distributed {
            workers,
            delay,
            delta,
            delay_seed,
        } => {
            let model = make_delay_model(*delay, *delta, *delay_seed);
            let dist_cfg = DistConfig {
                epochs: cfg.epochs,
                inner_iters: cfg.inner_iters,
                batch_size: cfg.batch_size,
                eta,
                num_workers: *workers,
                delay: model,
                seed: cfg.seed,
                record_every_iter: cfg.record_every_iter,
            };
            let (out, events) = run_distributed_with_events(problem, x0, &dist_cfg)?;
            (out, None, Some(events))
        }
    };
    Ok(SvrgRun {
        output,
        eta,
        wall_seconds: start.elapsed().as_secs_f64(),
        schedule,
        events,
    })
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

/// Runs the configured experiment into `dir`, writing every artifact there.
pub fn run_experiment_in(cfg: &RunConfig, dir: &Path) -> Result<ExperimentArtifacts> {
    std::fs::create_dir_all(dir)?;
    let problem = build_problem(cfg)?;
    let x0 = problem.init_params(cfg.seed);
    let mut artifacts: Vec<String> = Vec::new();
    let mut trace_paths: Vec<PathBuf> = Vec::new();
    let mut grid_results: Vec<GridResult> = Vec::new();

    let final_loss_of = |out: &RunOutput| out.trace.last().map(|r| r.loss).unwrap_or(f64::INFINITY);

    // Dispatch, tuning over the configured grid by final training loss.
    let (selected_label, selected_eta, output, wall_seconds, schedule, events, sgd_phase) =
        match &cfg.method {
            Method::Sgd {
                alpha,
                beta,
                grid_alpha,
                grid_beta,
            } => {
                if !matches!(cfg.arch, Arch::Serial) {
                    return Err(Error::InvalidInput(
                        "method sgd runs on the serial architecture".into(),
                    ));
                }
                let alphas = if grid_alpha.is_empty() {
                    vec![*alpha]
                } else {
                    grid_alpha.clone()
                };
                let betas = if grid_beta.is_empty() {
                    vec![*beta]
                } else {
                    grid_beta.clone()
                };
                let mut best: Option<(String, RunOutput, f64)> = None;
                for &a in &alphas {
                    for &b in &betas {
                        let started = Instant::now();
                        let out = run_sgd(
                            &problem,
                            &x0,
                            &SgdConfig {
                                epochs: cfg.epochs,
                                iters_per_epoch: cfg.inner_iters,
                                batch_size: cfg.batch_size,
                                schedule: SgdSchedule::new(a, b)?,
                                seed: cfg.seed,
                            },
                        )?;
                        let wall = started.elapsed().as_secs_f64();
                        let label = format!("alpha={a} beta={b}");
                        let loss = final_loss_of(&out);
                        grid_results.push(GridResult {
                            label: label.clone(),
                            final_loss: loss,
                            diverged: out.trace.diverged(),
                            wall_seconds: wall,
                        });
                        let better = match &best {
                            None => true,
                            Some((_, prev, _)) => {
                                score(&out, loss) < score(prev, final_loss_of(prev))
                            }
                        };
                        if better {
                            best = Some((label, out, wall));
                        }
                    }
                }
                let (label, out, wall) = best.expect("grid is non-empty");
                (label, None, out, wall, None, None, None)
            }
            Method::Svrg { eta, grid_eta } => {
                let etas = if grid_eta.is_empty() {
                    vec![*eta]
                } else {
                    grid_eta.clone()
                };
                let mut best: Option<SvrgRun> = None;
                for &e in &etas {
                    let run = run_svrg_once(&problem, &x0, cfg, e)?;
                    let loss = final_loss_of(&run.output);
                    grid_results.push(GridResult {
                        label: format!("eta={e}"),
                        final_loss: loss,
                        diverged: run.output.trace.diverged(),
                        wall_seconds: run.wall_seconds,
                    });
                    let better = match &best {
                        None => true,
                        Some(prev) => {
                            score(&run.output, loss)
                                < score(&prev.output, final_loss_of(&prev.output))
                        }
                    };
                    if better {
                        best = Some(run);
                    }
                }
                let run = best.expect("grid is non-empty");
                (
                    format!("eta={}", run.eta),
                    Some(run.eta),
                    run.output,
                    run.wall_seconds,
                    run.schedule,
                    run.events,
                    None,
                )
            }
            Method::SgdThenSvrg {
                sgd_epochs,
                alpha,
                beta,
                eta,
                grid_eta,
            } => {
                let started = Instant::now();
                let warm = run_sgd(
                    &problem,
                    &x0,
                    &SgdConfig {
                        epochs: *sgd_epochs,
                        iters_per_epoch: cfg.inner_iters,
                        batch_size: cfg.batch_size,
                        schedule: SgdSchedule::new(*alpha, *beta)?,
                        seed: cfg.seed,
                    },
                )?;
                let warm_wall = started.elapsed().as_secs_f64();
                let warm_x = warm.x.clone();
                let etas = if grid_eta.is_empty() {
                    vec![*eta]
                } else {
                    grid_eta.clone()
                };
                let mut best: Option<SvrgRun> = None;
                for &e in &etas {
                    let run = run_svrg_once(&problem, &warm_x, cfg, e)?;
                    let loss = final_loss_of(&run.output);
                    grid_results.push(GridResult {
                        label: format!("eta={e}"),
                        final_loss: loss,
                        diverged: run.output.trace.diverged(),
                        wall_seconds: run.wall_seconds,
                    });
                    let better = match &best {
                        None => true,
                        Some(prev) => {
                            score(&run.output, loss)
                                < score(&prev.output, final_loss_of(&prev.output))
                        }
                    };
                    if better {
                        best = Some(run);
                    }
                }
                let run = best.expect("grid is non-empty");
                let sgd_csv = warm.trace.to_csv_string();
                let path = write_file(dir, "sgd_trace.csv", &sgd_csv)?;
                artifacts.push("sgd_trace.csv".into());
                trace_paths.push(path);
                (
                    format!("eta={}", run.eta),
                    Some(run.eta),
                    run.output,
                    warm_wall + run.wall_seconds,
                    run.schedule,
                    run.events,
                    Some(warm),
                )
            }
        };
    let _ = sgd_phase; // phase trace already persisted above

    let trace_csv = output.trace.to_csv_string();
    let trace_path = write_file(dir, "trace.csv", &trace_csv)?;
    artifacts.push("trace.csv".into());
    trace_paths.push(trace_path);

    if let Some(sched) = &schedule {
        write_file(dir, "schedule.txt", &sched.to_text())?;
        artifacts.push("schedule.txt".into());
    }
    if let Some(events) = &events {
        let mut log = String::new();
        for ev in events {
            log.push_str(&ev.to_string());
            log.push('\n');
        }
        write_file(dir, "events.log", &log)?;
        artifacts.push("events.log".into());
    }

    let config_text = cfg.serialize();
    write_file(dir, "config.txt", &config_text)?;
    artifacts.push("config.txt".into());

    // Theory verdict and the variance-transfer check, where they apply.
    let (corollary, theory_verdict) = match selected_eta {
        Some(eta) => {
            let (mode, delta) = match &cfg.arch {
                Arch::Serial => (ArchMode::Distributed, 0usize),
                Arch::Shared { delta, .. } => (ArchMode::Shared, *delta),
                Arch::Distributed { delta, delay, .. } => {
                    let model = make_delay_model(*delay, *delta, 0);
                    (ArchMode::Distributed, model.delta)
                }
            };
            let l = problem.estimate_l(cfg.theory_probes, 0)?;
            let verdict = build_verdict(cfg, &problem, l, mode, delta, eta);
            let live = matches!(cfg.arch, Arch::Shared { live: true, .. });
            let corollary = if live {
                None
            } else {
                let inputs = CorollaryInputs {
                    mode,
                    l,
                    eta,
                    delta,
                    d: problem.dim(),
                    b: cfg.batch_size,
                    m: cfg.inner_iters,
                };
                check_corollary1(&output.trace, &inputs).ok()
            };
            (corollary, Some(verdict))
        }
        None => (None, None),
    };

    let last = output.trace.last().cloned();
    let summary = Summary {
        method: method_label(&cfg.method).to_string(),
        arch: arch_label(&cfg.arch),
        n: problem.num_samples(),
        d: problem.dim(),
        final_loss: last.as_ref().map(|r| r.loss).unwrap_or(f64::NAN),
        final_grad_norm_sq: last.as_ref().map(|r| r.grad_norm_sq).unwrap_or(f64::NAN),
        wall_seconds,
        virtual_ticks: match &cfg.arch {
            Arch::Distributed { .. } => last.as_ref().map(|r| r.wall_ns),
            _ => None,
        },
        diverged: output.trace.diverged(),
        max_staleness: output.max_staleness,
        selected: selected_label,
        grid: grid_results,
        corollary,
        theory: theory_verdict,
        artifacts: artifacts.clone(),
        config: config_text,
    };
    let summary_json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Format(format!("summary serialization: {e}")))?;
    let summary_path = write_file(dir, "summary.json", &summary_json)?;

    Ok(ExperimentArtifacts {
        dir: dir.to_path_buf(),
        trace_paths,
        summary_path,
        summary,
    })
}

/// Runs into the config's (environment-overridable) output directory.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentArtifacts> {
    let dir = cfg.effective_out_dir();
    run_experiment_in(cfg, &dir)
}

/// Ordering key for grid selection: diverged runs sort last, then final loss.
fn score(out: &RunOutput, final_loss: f64) -> (bool, f64) {
    (
        out.trace.diverged(),
        if final_loss.is_finite() {
            final_loss
        } else {
            f64::INFINITY
        },
    )
}

pub(crate) fn build_verdict(
    cfg: &RunConfig,
    problem: &FiniteSumProblem,
    l: f64,
    mode: ArchMode,
    delta: usize,
    eta: f64,
) -> TheoryVerdict {
    let delay_bound_sq = theory::delay_bound(mode, cfg.theory_u0, cfg.batch_size, problem.dim());
    let recommended = theory::recommended_settings(
        mode,
        problem.num_samples(),
        cfg.theory_alpha,
        cfg.theory_u0,
        cfg.batch_size,
        problem.dim(),
        l,
    )
    .ok();
    match TheoryParams::new(
        mode,
        l,
        eta,
        2.0 * l,
        cfg.batch_size,
        cfg.inner_iters,
        problem.dim(),
        problem.num_samples(),
        delta as f64,
    ) {
        Ok(params) => {
            let report = theory::theory_report(&params, None);
            TheoryVerdict {
                l_estimate: l,
                mode,
                gamma: Some(report.gamma),
                feasible: report.feasible,
                half_condition_ok: Some(report.half_condition_ok),
                corollary_factor: Some(params.corollary_factor()),
                delay_bound_sq,
                recommended,
            }
        }
        Err(_) => TheoryVerdict {
            l_estimate: l,
            mode,
            gamma: None,
            feasible: false,
            half_condition_ok: None,
            corollary_factor: None,
            delay_bound_sq,
            recommended,
        },
    }
}
