//! Flat `key = value` run configuration with CLI overrides.
//!
//! The format is line-oriented: blank lines and `#` comments are ignored,
//! everything else is `key = value`. Keys are dotted. `--set key=value`
//! overrides win over the file. Parsing is strict: unknown keys and malformed
//! values are errors that name the offending line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use asyvr_core::dist::DelayKind;
use asyvr_core::shared::ScheduleModel;
use asyvr_core::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    LeastSquares,
    LogisticNonconvex { lambda: f64 },
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        n: usize,
        p: usize,
        classes: usize,
        noise: f64,
        seed: u64,
    },
    SyntheticRegression {
        n: usize,
        p: usize,
        noise: f64,
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        limit: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Sgd {
        alpha: f64,
        beta: f64,
        grid_alpha: Vec<f64>,
        grid_beta: Vec<f64>,
    },
    Svrg {
        eta: f64,
        grid_eta: Vec<f64>,
    },
    SgdThenSvrg {
        sgd_epochs: usize,
        alpha: f64,
        beta: f64,
        eta: f64,
        grid_eta: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Arch {
    Serial,
    Shared {
        workers: usize,
        block: Option<usize>,
        delta: usize,
        schedule: ScheduleModel,
        schedule_seed: u64,
        live: bool,
    },
    Distributed {
        workers: usize,
        delay: DelayKind,
        delta: usize,
        delay_seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub l2: f64,
    pub data: DataSource,
    pub method: Method,
    pub arch: Arch,
    pub epochs: usize,
    pub inner_iters: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub record_every_iter: bool,
    pub theory_u0: f64,
    pub theory_alpha: f64,
    pub theory_probes: usize,
    pub out_dir: PathBuf,
}

/// Key-value view used during parsing; tracks line numbers for diagnostics.
struct Raw {
    values: BTreeMap<String, (String, usize)>,
    consumed: BTreeMap<String, bool>,
}

impl Raw {
    fn take(&mut self, key: &str) -> Option<String> {
        if let Some((v, _)) = self.values.get(key) {
            self.consumed.insert(key.to_string(), true);
            return Some(v.clone());
        }
        None
    }

    fn line_of(&self, key: &str) -> usize {
        self.values.get(key).map(|(_, l)| *l).unwrap_or(0)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v.trim().parse().map_err(|_| {
                Error::Format(format!(
                    "line {}: bad value for {key}: {v}",
                    self.line_of(key)
                ))
            }),
        }
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.take(key)
            .ok_or_else(|| Error::Format(format!("missing required key: {key}")))
    }

    fn require_parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.require(key)?;
        v.trim().parse().map_err(|_| {
            Error::Format(format!(
                "line {}: bad value for {key}: {v}",
                self.line_of(key)
            ))
        })
    }

    fn parse_list(&mut self, key: &str) -> Result<Vec<f64>> {
        match self.take(key) {
            None => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|tok| {
                    tok.trim().parse().map_err(|_| {
                        Error::Format(format!(
                            "line {}: bad list entry in {key}: {tok}",
                            self.line_of(key)
                        ))
                    })
                })
                .collect(),
        }
    }
}

fn parse_pairs(text: &str) -> Result<Raw> {
    let mut values = BTreeMap::new();
    for (lineno, raw_line) in text.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!(
                "line {}: expected key = value, got: {line}",
                lineno + 1
            ))
        })?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(Error::Format(format!("line {}: empty key", lineno + 1)));
        }
        if values.contains_key(&key) {
            return Err(Error::Format(format!(
                "line {}: duplicate key {key}",
                lineno + 1
            )));
        }
        values.insert(key, (value.trim().to_string(), lineno + 1));
    }
    Ok(Raw {
        values,
        consumed: BTreeMap::new(),
    })
}

impl RunConfig {
    /// Parses config text plus `key=value` overrides (overrides win).
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
        let mut raw = parse_pairs(text)?;
        for (k, v) in overrides {
            raw.values
                .insert(k.trim().to_string(), (v.trim().to_string(), 0));
        }

        let problem = match raw.require("problem.kind")?.as_str() {
            "least_squares" => ProblemSpec::LeastSquares,
            "logistic_nonconvex" => ProblemSpec::LogisticNonconvex {
                lambda: raw.parse("problem.lambda", 0.1)?,
            },
            "mlp" => ProblemSpec::Mlp {
                hidden: raw.parse("problem.hidden", 16)?,
            },
            other => {
                return Err(Error::Format(format!(
                    "line {}: unknown problem.kind: {other}",
                    raw.line_of("problem.kind")
                )))
            }
        };
        let l2 = raw.parse("problem.l2", 0.0)?;

        let data = match raw.require("data.source")?.as_str() {
            "synthetic" => DataSource::Synthetic {
                n: raw.require_parse("data.n")?,
                p: raw.require_parse("data.p")?,
                classes: raw.parse("data.classes", 2)?,
                noise: raw.parse("data.noise", 0.0)?,
                seed: raw.parse("data.seed", 0)?,
            },
            "synthetic_regression" => DataSource::SyntheticRegression {
                n: raw.require_parse("data.n")?,
                p: raw.require_parse("data.p")?,
                noise: raw.parse("data.noise", 0.0)?,
                seed: raw.parse("data.seed", 0)?,
            },
            "idx" => DataSource::Idx {
                images: PathBuf::from(raw.require("data.images")?),
                labels: PathBuf::from(raw.require("data.labels")?),
                limit: raw.parse("data.limit", usize::MAX)?,
            },
            other => {
                return Err(Error::Format(format!(
                    "line {}: unknown data.source: {other}",
                    raw.line_of("data.source")
                )))
            }
        };

        let method = match raw.require("method")?.as_str() {
            "sgd" => Method::Sgd {
                alpha: raw.parse("sgd.alpha", 0.1)?,
                beta: raw.parse("sgd.beta", 0.0)?,
                grid_alpha: raw.parse_list("sgd.grid.alpha")?,
                grid_beta: raw.parse_list("sgd.grid.beta")?,
            },
            "svrg" => Method::Svrg {
                eta: raw.require_parse("svrg.eta")?,
                grid_eta: raw.parse_list("svrg.grid.eta")?,
            },
            "sgd_then_svrg" => Method::SgdThenSvrg {
                sgd_epochs: raw.parse("warmstart.epochs", 1)?,
                alpha: raw.parse("sgd.alpha", 0.1)?,
                beta: raw.parse("sgd.beta", 0.0)?,
                eta: raw.require_parse("svrg.eta")?,
                grid_eta: raw.parse_list("svrg.grid.eta")?,
            },
            other => {
                return Err(Error::Format(format!(
                    "line {}: unknown method: {other}",
                    raw.line_of("method")
                )))
            }
        };

        let arch = match raw.require("arch")?.as_str() {
            "serial" => Arch::Serial,
            "shared" => {
                let mode = raw.parse("shared.mode", "replay".to_string())?;
                let live = match mode.as_str() {
                    "live" => true,
                    "replay" => false,
                    other => {
                        return Err(Error::Format(format!(
                            "line {}: shared.mode must be live or replay, got {other}",
                            raw.line_of("shared.mode")
                        )))
                    }
                };
                let schedule = match raw.parse("shared.schedule", "none".to_string())?.as_str() {
                    "none" => ScheduleModel::None,
                    "uniform" => ScheduleModel::Uniform,
                    "adversarial_max" => ScheduleModel::AdversarialMax,
                    other => {
                        return Err(Error::Format(format!(
                            "line {}: unknown shared.schedule: {other}",
                            raw.line_of("shared.schedule")
                        )))
                    }
                };
                Arch::Shared {
                    workers: raw.parse("shared.workers", 1)?,
                    block: raw
                        .take("shared.block")
                        .map(|v| {
                            v.trim().parse().map_err(|_| {
                                Error::Format(format!(
                                    "line {}: bad value for shared.block: {v}",
                                    raw.line_of("shared.block")
                                ))
                            })
                        })
                        .transpose()?,
                    delta: raw.parse("shared.delta", 0)?,
                    schedule,
                    schedule_seed: raw.parse("shared.schedule_seed", 0)?,
                    live,
                }
            }
            "distributed" => {
                let delay = match raw.parse("dist.delay", "fifo_zero".to_string())?.as_str() {
                    "fifo_zero" => DelayKind::FifoZero,
                    "uniform" => DelayKind::Uniform,
                    "fixed" => DelayKind::Fixed,
                    other => {
                        return Err(Error::Format(format!(
                            "line {}: unknown dist.delay: {other}",
                            raw.line_of("dist.delay")
                        )))
                    }
                };
                Arch::Distributed {
                    workers: raw.parse("dist.workers", 1)?,
                    delay,
                    delta: raw.parse("dist.delta", 0)?,
                    delay_seed: raw.parse("dist.delay_seed", 0)?,
                }
            }
            other => {
                return Err(Error::Format(format!(
                    "line {}: unknown arch: {other}",
                    raw.line_of("arch")
                )))
            }
        };

        let record_every_iter = match raw
            .parse("run.record_every_iter", "false".to_string())?
            .as_str()
        {
            "true" => true,
            "false" => false,
            other => {
                return Err(Error::Format(format!(
                    "line {}: run.record_every_iter must be true or false, got {other}",
                    raw.line_of("run.record_every_iter")
                )))
            }
        };

        let cfg = RunConfig {
            problem,
            l2,
            data,
            method,
            arch,
            epochs: raw.require_parse("run.epochs")?,
            inner_iters: raw.require_parse("run.m")?,
            batch_size: raw.require_parse("run.b")?,
            seed: raw.parse("run.seed", 0)?,
            record_every_iter,
            theory_u0: raw.parse("theory.u0", 0.01)?,
            theory_alpha: raw.parse("theory.alpha", 1.0)?,
            theory_probes: raw.parse("theory.probes", 20)?,
            out_dir: PathBuf::from(raw.parse("out.dir", "out".to_string())?),
        };

        for (key, (_, lineno)) in &raw.values {
            if !raw.consumed.get(key).copied().unwrap_or(false) && *lineno > 0 {
                return Err(Error::Format(format!("line {lineno}: unknown key: {key}")));
            }
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::parse(&text, overrides)
    }

    /// Canonical serialization; `parse(serialize(cfg))` reproduces `cfg`.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        match &self.problem {
            ProblemSpec::LeastSquares => put("problem.kind", "least_squares".into()),
            ProblemSpec::LogisticNonconvex { lambda } => {
                put("problem.kind", "logistic_nonconvex".into());
                put("problem.lambda", lambda.to_string());
            }
            ProblemSpec::Mlp { hidden } => {
                put("problem.kind", "mlp".into());
                put("problem.hidden", hidden.to_string());
            }
        }
        put("problem.l2", self.l2.to_string());
        match &self.data {
            DataSource::Synthetic {
                n,
                p,
                classes,
                noise,
                seed,
            } => {
                put("data.source", "synthetic".into());
                put("data.n", n.to_string());
                put("data.p", p.to_string());
                put("data.classes", classes.to_string());
                put("data.noise", noise.to_string());
                put("data.seed", seed.to_string());
            }
            DataSource::SyntheticRegression { n, p, noise, seed } => {
                put("data.source", "synthetic_regression".into());
                put("data.n", n.to_string());
                put("data.p", p.to_string());
                put("data.noise", noise.to_string());
                put("data.seed", seed.to_string());
            }
            DataSource::Idx {
                images,
                labels,
                limit,
            } => {
                put("data.source", "idx".into());
                put("data.images", images.display().to_string());
                put("data.labels", labels.display().to_string());
                put("data.limit", limit.to_string());
            }
        }
        match &self.method {
            Method::Sgd {
                alpha,
                beta,
                grid_alpha,
                grid_beta,
            } => {
                put("method", "sgd".into());
                put("sgd.alpha", alpha.to_string());
                put("sgd.beta", beta.to_string());
                if !grid_alpha.is_empty() {
                    put("sgd.grid.alpha", join(grid_alpha));
                }
                if !grid_beta.is_empty() {
                    put("sgd.grid.beta", join(grid_beta));
                }
            }
            Method::Svrg { eta, grid_eta } => {
                put("method", "svrg".into());
                put("svrg.eta", eta.to_string());
                if !grid_eta.is_empty() {
                    put("svrg.grid.eta", join(grid_eta));
                }
            }
            Method::SgdThenSvrg {
                sgd_epochs,
                alpha,
                beta,
                eta,
                grid_eta,
            } => {
                put("method", "sgd_then_svrg".into());
                put("warmstart.epochs", sgd_epochs.to_string());
                put("sgd.alpha", alpha.to_string());
                put("sgd.beta", beta.to_string());
                put("svrg.eta", eta.to_string());
                if !grid_eta.is_empty() {
                    put("svrg.grid.eta", join(grid_eta));
                }
            }
        }
        match &self.arch {
            Arch::Serial => put("arch", "serial".into()),
            Arch::Shared {
                workers,
                block,
                delta,
                schedule,
                schedule_seed,
                live,
            } => {
                put("arch", "shared".into());
                put("shared.workers", workers.to_string());
                if let Some(b) = block {
                    put("shared.block", b.to_string());
                }
                put("shared.delta", delta.to_string());
                let model = match schedule {
                    ScheduleModel::None => "none",
                    ScheduleModel::Uniform => "uniform",
                    ScheduleModel::AdversarialMax => "adversarial_max",
                };
                put("shared.schedule", model.into());
                put("shared.schedule_seed", schedule_seed.to_string());
                put(
                    "shared.mode",
                    if *live {
                        "live".into()
                    } else {
                        "replay".into()
                    },
                );
            }
            Arch::Distributed {
                workers,
                delay,
                delta,
                delay_seed,
            } => {
                put("arch", "distributed".into());
                put("dist.workers", workers.to_string());
                let kind = match delay {
                    DelayKind::FifoZero => "fifo_zero",
                    DelayKind::Uniform => "uniform",
                    DelayKind::Fixed => "fixed",
                };
                put("dist.delay", kind.into());
                put("dist.delta", delta.to_string());
                put("dist.delay_seed", delay_seed.to_string());
            }
        }
        put("run.epochs", self.epochs.to_string());
        put("run.m", self.inner_iters.to_string());
        put("run.b", self.batch_size.to_string());
        put("run.seed", self.seed.to_string());
        put("run.record_every_iter", self.record_every_iter.to_string());
        put("theory.u0", self.theory_u0.to_string());
        put("theory.alpha", self.theory_alpha.to_string());
        put("theory.probes", self.theory_probes.to_string());
        put("out.dir", self.out_dir.display().to_string());
        s
    }

    /// Output directory after the `ASYVR_OUT_DIR` environment override.
    pub fn effective_out_dir(&self) -> PathBuf {
        match std::env::var_os("ASYVR_OUT_DIR") {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.out_dir.clone(),
        }
    }
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}
