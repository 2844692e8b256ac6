use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use asyvr::config::{Arch, Method, RunConfig};
use asyvr::corollary::{check_corollary1, CorollaryInputs};
use asyvr::experiment::{build_problem, run_experiment_in};
use asyvr::sweep::sweep_workers;
use asyvr_core::dist::make_delay_model;
use asyvr_core::theory::{self, ArchMode, TheoryParams};

#[derive(Parser)]
#[command(
    name = "asyvr",
    about = "Asynchronous variance-reduced SGD experiment runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file (flat `key = value` lines).
    config: PathBuf,
    /// Override a config key, e.g. --set run.seed=7 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (overrides the config and ASYVR_OUT_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write trace + summary artifacts.
    Run(Common),
    /// Run the config once per worker count and emit a speedup table.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated worker counts; must include 1.
        #[arg(long, value_delimiter = ',', required = true)]
        workers: Vec<usize>,
    },
    /// Evaluate the convergence-theory quantities for the config.
    Theory(Common),
    /// Check the variance-transfer inequality on a recorded trace.
    CheckCorollary {
        /// Trace CSV produced by `run`.
        trace: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_overrides(set: &[String]) -> anyhow::Result<Vec<(String, String)>> {
    set.iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .with_context(|| format!("--set needs KEY=VALUE, got: {kv}"))
        })
        .collect()
}

fn load_config(common: &Common) -> anyhow::Result<(RunConfig, PathBuf)> {
    let overrides = parse_overrides(&common.set)?;
    let mut cfg = RunConfig::from_file(&common.config, &overrides)
        .with_context(|| format!("reading config {}", common.config.display()))?;
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
        return Ok((cfg.clone(), out.clone()));
    }
    let dir = cfg.effective_out_dir();
    Ok((cfg, dir))
}

fn selected_eta(cfg: &RunConfig) -> Option<f64> {
    match &cfg.method {
        Method::Svrg { eta, .. } | Method::SgdThenSvrg { eta, .. } => Some(*eta),
        Method::Sgd { .. } => None,
    }
}

fn arch_mode_and_delta(cfg: &RunConfig) -> (ArchMode, usize) {
    match &cfg.arch {
        Arch::Serial => (ArchMode::Distributed, 0),
        Arch::Shared { delta, .. } => (ArchMode::Shared, *delta),
        Arch::Distributed { delta, delay, .. } => (
            ArchMode::Distributed,
            make_delay_model(*delay, *delta, 0).delta,
        ),
    }
}

fn cmd_run(common: Common) -> anyhow::Result<ExitCode> {
    let (cfg, dir) = load_config(&common)?;
    let artifacts = run_experiment_in(&cfg, &dir)?;
    let s = &artifacts.summary;
    println!("method:        {} ({})", s.method, s.selected);
    println!("architecture:  {}", s.arch);
    println!("problem:       n = {}, d = {}", s.n, s.d);
    println!("final loss:    {}", s.final_loss);
    println!("final |grad|2: {}", s.final_grad_norm_sq);
    println!("wall seconds:  {:.3}", s.wall_seconds);
    if let Some(ticks) = s.virtual_ticks {
        println!("virtual ticks: {ticks}");
    }
    if let Some(tau) = s.max_staleness {
        println!("max staleness: {tau}");
    }
    if let Some(theory) = &s.theory {
        match theory.gamma {
            Some(g) => println!(
                "theory:        gamma = {g:.3e}, feasible = {}",
                theory.feasible
            ),
            None => println!("theory:        parameters infeasible for the rate bound"),
        }
    }
    if let Some(core) = &s.corollary {
        println!(
            "corollary:     applicable = {}, all epochs pass = {}",
            core.applicable, core.all_pass
        );
    }
    println!("artifacts in:  {}", artifacts.dir.display());
    if s.diverged {
        eprintln!("run diverged");
        return Ok(ExitCode::from(1));
    }
    if let Some(core) = &s.corollary {
        if core.applicable && !core.all_pass {
            eprintln!("variance-transfer inequality violated");
            return Ok(ExitCode::from(3));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(common: Common, workers: Vec<usize>) -> anyhow::Result<ExitCode> {
    let (cfg, dir) = load_config(&common)?;
    let (table, _) = sweep_workers(&cfg, &workers, &dir)?;
    println!("target loss {} ({} timing)", table.target_loss, table.unit);
    println!(
        "{:>8} {:>14} {:>14} {:>10}",
        "workers", "wall", "to-target", "speedup"
    );
    for row in &table.rows {
        let speedup = table
            .speedup
            .get(&row.workers)
            .map(|s| format!("{s:.3}"))
            .unwrap_or_else(|| "-".into());
        let tt = row
            .time_to_target
            .map(|t| format!("{t:.3}"))
            .unwrap_or_else(|| "not reached".into());
        println!(
            "{:>8} {:>14.3} {:>14} {:>10}",
            row.workers, row.wall, tt, speedup
        );
    }
    if !table.failures.is_empty() {
        eprintln!("counts with failures: {:?}", table.failures);
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_theory(common: Common) -> anyhow::Result<ExitCode> {
    let (cfg, dir) = load_config(&common)?;
    let problem = build_problem(&cfg)?;
    let l = problem.estimate_l(cfg.theory_probes, 0)?;
    let (mode, delta) = arch_mode_and_delta(&cfg);
    let eta = match selected_eta(&cfg) {
        Some(eta) => eta,
        None => {
            theory::recommended_settings(
                mode,
                problem.num_samples(),
                cfg.theory_alpha,
                cfg.theory_u0,
                cfg.batch_size,
                problem.dim(),
                l,
            )?
            .eta
        }
    };
    println!(
        "problem:      n = {}, d = {}",
        problem.num_samples(),
        problem.dim()
    );
    println!("L estimate:   {l}");
    println!("mode:         {mode:?}, delta = {delta}, eta = {eta}");
    let bound = theory::delay_bound(mode, cfg.theory_u0, cfg.batch_size, problem.dim());
    if bound > 0.0 {
        println!("delay bound:  Delta^2 < {bound} (Delta < {})", bound.sqrt());
    } else {
        println!(
            "delay bound:  none admissible for u0 = {}, b = {}",
            cfg.theory_u0, cfg.batch_size
        );
    }
    match theory::recommended_settings(
        mode,
        problem.num_samples(),
        cfg.theory_alpha,
        cfg.theory_u0,
        cfg.batch_size,
        problem.dim(),
        l,
    ) {
        Ok(rec) => println!(
            "recommended:  eta = {}, beta = {}, m = {}",
            rec.eta, rec.beta, rec.m
        ),
        Err(e) => println!("recommended:  unavailable ({e})"),
    }
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
            println!(
                "gamma:        {} (feasible: {})",
                report.gamma, report.feasible
            );
            println!(
                "c_0:          {} (closed form {})",
                report.c[0], report.c0_closed
            );
            println!(
                "half cond.:   c_t+1 <= beta/2 holds: {}",
                report.half_condition_ok
            );
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("theory.json");
            std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
            println!("report:       {}", path.display());
            if report.feasible {
                println!("verdict:      FEASIBLE");
                Ok(ExitCode::SUCCESS)
            } else {
                println!("verdict:      INFEASIBLE (some Gamma_t <= 0)");
                Ok(ExitCode::from(1))
            }
        }
        Err(e) => {
            println!("verdict:      INFEASIBLE ({e})");
            Ok(ExitCode::from(1))
        }
    }
}

fn cmd_check(trace_path: PathBuf, common: Common) -> anyhow::Result<ExitCode> {
    let (cfg, _) = load_config(&common)?;
    let problem = build_problem(&cfg)?;
    let eta = match selected_eta(&cfg) {
        Some(eta) => eta,
        None => bail!("check-corollary needs an svrg method config (svrg.eta)"),
    };
    let trace = asyvr_core::Trace::read_csv(std::io::BufReader::new(
        std::fs::File::open(&trace_path)
            .with_context(|| format!("opening {}", trace_path.display()))?,
    ))?;
    let (mode, delta) = arch_mode_and_delta(&cfg);
    let l = problem.estimate_l(cfg.theory_probes, 0)?;
    let inputs = CorollaryInputs {
        mode,
        l,
        eta,
        delta,
        d: problem.dim(),
        b: cfg.batch_size,
        m: cfg.inner_iters,
    };
    let report = check_corollary1(&trace, &inputs)?;
    if !report.applicable {
        println!(
            "bound inapplicable: {}",
            report.reason.as_deref().unwrap_or("unknown")
        );
        return Ok(ExitCode::from(2));
    }
    println!(
        "factor {} (delta = {delta}, zero-delay epochs require exact equality)",
        report.factor.unwrap_or(f64::NAN),
    );
    for epoch in &report.epochs {
        println!(
            "epoch {:>4}: sum|v|^2 = {:<22} sum|u|^2 = {:<22} ratio = {:<10.6} {}",
            epoch.epoch,
            epoch.sum_v_sq,
            epoch.sum_u_sq,
            epoch.ratio,
            if epoch.pass { "pass" } else { "FAIL" }
        );
    }
    if report.all_pass {
        println!("all epochs pass");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("violations found");
        Ok(ExitCode::from(1))
    }
}

fn main() -> anyhow::Result<ExitCode> {
    match Cli::parse().command {
        Command::Run(common) => cmd_run(common),
        Command::Sweep { common, workers } => cmd_sweep(common, workers),
        Command::Theory(common) => cmd_theory(common),
        Command::CheckCorollary { trace, common } => cmd_check(trace, common),
    }
}
