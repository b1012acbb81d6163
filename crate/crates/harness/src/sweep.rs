//! Single runs and one-axis sweeps over (value, seed) grids.

use std::fmt;
use std::path::Path;

use lql_core::agents::{train, Method, TrainReport};
use lql_core::Run;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::aggregate::{aggregate, write_summary, Curve, SummaryRow};
use crate::config::{EnvKind, ExperimentConfig};
use crate::output::RunDir;
use crate::{Error, Result};

/// Trains one run of `cfg` (dataset and MDP rebuilt from the config).
pub fn run_training(cfg: &ExperimentConfig) -> Result<Run> {
    let mdp = cfg.env.build()?;
    let data = cfg.dataset.load(&mdp)?;
    Ok(train(&mdp, &data, &cfg.train)?)
}

/// `report.csv`, plus `hinge.csv` when statistics were recorded.
pub fn write_report(dir: &mut RunDir, report: &TrainReport, with_hinge: bool) -> Result<()> {
    report.write_csv(dir.create_file("report.csv")?)?;
    if with_hinge {
        report.write_hinge_csv(dir.create_file("hinge.csv")?)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Axis {
    TrajLen,
    /// Both hinge weights.
    Lambda,
    Nstep,
    /// Slip probability of the environment.
    Sigma,
    /// Trajectories per batch.
    Batch,
    Method,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("axis serializes");
        f.write_str(v.as_str().expect("unit variant"))
    }
}

/// What stays constant as `traj_len` changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Fixed {
    /// Longer trajectories mean more transitions, hence more compute.
    TrajsPerBatch,
    /// `trajs_per_batch · traj_len` held at its base value.
    TotalBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub axis: Axis,
    pub values: Vec<Value>,
    pub seeds: Vec<u64>,
    pub fixed: Fixed,
}

fn as_usize(v: &Value) -> Option<usize> {
    v.as_u64().map(|x| x as usize).or_else(|| v.as_str()?.parse().ok())
}

fn as_f64(v: &Value) -> Option<f64> {
    v.as_f64().or_else(|| v.as_str()?.parse().ok())
}

/// Value text without JSON quotes.
pub fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Usage("sweep needs at least one value".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Usage("sweep needs at least one seed".into()));
        }
        if self.fixed == Fixed::TotalBatch && self.axis != Axis::TrajLen {
            return Err(Error::Usage(format!("--fixed total_batch only applies to the traj_len axis, not {}", self.axis)));
        }
        Ok(())
    }

    pub fn label(&self, v: &Value) -> String {
        format!("{}={}", self.axis, value_label(v))
    }

    /// Config of one sweep point.
    pub fn point(&self, base: &ExperimentConfig, v: &Value, seed: u64) -> Result<ExperimentConfig> {
        let bad = || Error::Usage(format!("value `{}` does not fit axis {}", value_label(v), self.axis));
        let mut cfg = base.clone();
        match self.axis {
            Axis::TrajLen => {
                let l = as_usize(v).filter(|&l| l > 0).ok_or_else(bad)?;
                if self.fixed == Fixed::TotalBatch {
                    let total = base.train.trajs_per_batch * base.train.traj_len;
                    cfg.train.trajs_per_batch = (total / l).max(1);
                }
                cfg.train.traj_len = l;
            }
            Axis::Lambda => {
                let x = as_f64(v).ok_or_else(bad)?;
                cfg.train.lambda_lb = x;
                cfg.train.lambda_ub = x;
            }
            Axis::Nstep => cfg.train.nstep = as_usize(v).ok_or_else(bad)?,
            Axis::Sigma => cfg.env.slip = as_f64(v).ok_or_else(bad)?,
            Axis::Batch => cfg.train.trajs_per_batch = as_usize(v).ok_or_else(bad)?,
            Axis::Method => cfg.train.method = v.as_str().ok_or_else(bad)?.parse::<Method>()?,
        }
        cfg.train.seed = seed;
        cfg.seeds = vec![seed];
        cfg.train.validate()?;
        Ok(cfg)
    }
}

pub fn env_label(kind: EnvKind) -> String {
    value_label(&serde_json::to_value(kind).expect("kind serializes"))
}

/// Metrics aggregated by `sweep`.
pub const SWEEP_METRICS: [&str; 3] = ["success_rate", "mean_online_q", "max_abs_q"];

pub fn curves_for(metric: &str, runs: &[(String, String, TrainReport)]) -> Vec<Curve> {
    runs.iter()
        .map(|(group, task, rep)| Curve {
            group: group.clone(),
            task: task.clone(),
            points: rep
                .points
                .iter()
                .map(|p| {
                    let v = match metric {
                        "success_rate" => p.success_rate,
                        "mean_online_q" => p.mean_online_q,
                        "max_abs_q" => p.max_abs_q,
                        other => panic!("unknown metric {other}"),
                    };
                    (p.step, v)
                })
                .collect(),
        })
        .collect()
}

/// Runs every (value, seed) point in parallel, each into
/// `runs/<axis>=<value>/seed-<s>/` with its own manifest, then writes
/// `aggregate.csv`.
pub fn run_sweep(base: &ExperimentConfig, plan: &SweepPlan, dir: &mut RunDir, argv: &[String]) -> Result<Vec<SummaryRow>> {
    plan.validate()?;
    let jobs: Vec<(Value, u64)> = plan
        .values
        .iter()
        .flat_map(|v| plan.seeds.iter().map(move |&s| (v.clone(), s)))
        .collect();
    // Resolve everything first so a bad value fails before any training.
    let points: Vec<(String, u64, ExperimentConfig)> = jobs
        .iter()
        .map(|(v, s)| Ok((plan.label(v), *s, plan.point(base, v, *s)?)))
        .collect::<Result<_>>()?;
    let root = dir.path().to_path_buf();
    let runs: Vec<(String, String, TrainReport)> = points
        .par_iter()
        .map(|(label, seed, cfg)| {
            let rel = format!("runs/{label}/seed-{seed}");
            let report = run_point(&root.join(&rel), cfg, argv)?;
            Ok((label.clone(), env_label(cfg.env.kind), report))
        })
        .collect::<Result<_>>()?;
    for (label, seed, _) in &points {
        dir.file(&format!("runs/{label}/seed-{seed}/report.csv"))?;
    }
    let mut rows = Vec::new();
    for metric in SWEEP_METRICS {
        rows.extend(aggregate(&curves_for(metric, &runs), metric, base.train.seed));
    }
    write_summary(&rows, dir.create_file("aggregate.csv")?)?;
    Ok(rows)
}

fn run_point(path: &Path, cfg: &ExperimentConfig, argv: &[String]) -> Result<TrainReport> {
    let mut dir = RunDir::create_at(path.to_path_buf(), "train", argv, cfg.to_value())?;
    let outcome = run_training(cfg).and_then(|run| {
        write_report(&mut dir, &run.report, cfg.train.hinge_stats)?;
        Ok(run.report)
    });
    dir.finish(&outcome)?;
    outcome
}
