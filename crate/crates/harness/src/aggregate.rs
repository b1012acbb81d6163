//! Means with percentile-bootstrap intervals over runs.
//!
//! Resampling is curve-level: one draw picks whole runs (with replacement,
//! independently within each task), and that draw is reused for every eval
//! step. A group's statistic is the mean over tasks of the per-task mean.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::Result;

pub const BOOTSTRAP_ITERS: usize = 1000;
pub const CI_LEVEL: f64 = 0.95;

/// One run's metric trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub group: String,
    pub task: String,
    pub points: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub group: String,
    pub metric: String,
    pub step: u64,
    pub runs: usize,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

pub const SUMMARY_COLUMNS: [&str; 7] = ["group", "metric", "step", "runs", "mean", "ci_lo", "ci_hi"];

/// Mean over tasks of per-task means; `tasks[t][r]` is run `r` of task `t`.
fn task_mean(tasks: &[Vec<f64>]) -> f64 {
    tasks.iter().map(|runs| runs.iter().sum::<f64>() / runs.len() as f64).sum::<f64>() / tasks.len() as f64
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    // Linear interpolation between order statistics.
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `(mean, lo, hi)` for a single statistic.
pub fn bootstrap_ci<R: Rng + ?Sized>(tasks: &[Vec<f64>], iters: usize, level: f64, rng: &mut R) -> Option<(f64, f64, f64)> {
    let curves: Vec<Vec<Vec<f64>>> = tasks.iter().map(|runs| runs.iter().map(|&x| vec![x]).collect()).collect();
    curve_bootstrap(&curves, iters, level, rng).map(|v| v[0])
}

/// `tasks[t][r][j]`: value at step index `j` of run `r` in task `t`.
/// Returns `(mean, lo, hi)` per step index, or `None` when any task has no
/// runs.
pub fn curve_bootstrap<R: Rng + ?Sized>(
    tasks: &[Vec<Vec<f64>>],
    iters: usize,
    level: f64,
    rng: &mut R,
) -> Option<Vec<(f64, f64, f64)>> {
    if tasks.is_empty() || tasks.iter().any(|t| t.is_empty()) {
        return None;
    }
    let steps = tasks[0][0].len();
    let at = |j: usize, pick: &dyn Fn(usize, usize) -> usize| -> f64 {
        let per_task: Vec<Vec<f64>> = tasks
            .iter()
            .enumerate()
            .map(|(t, runs)| (0..runs.len()).map(|r| runs[pick(t, r)][j]).collect())
            .collect();
        task_mean(&per_task)
    };
    let means: Vec<f64> = (0..steps).map(|j| at(j, &|_, r| r)).collect();
    let mut samples = vec![Vec::with_capacity(iters); steps];
    for _ in 0..iters {
        let draw: Vec<Vec<usize>> = tasks
            .iter()
            .map(|runs| (0..runs.len()).map(|_| rng.gen_range(0..runs.len())).collect())
            .collect();
        for (j, s) in samples.iter_mut().enumerate() {
            s.push(at(j, &|t, r| draw[t][r]));
        }
    }
    let alpha = (1.0 - level) / 2.0;
    Some(
        samples
            .into_iter()
            .zip(means)
            .map(|(mut s, m)| {
                s.sort_by(f64::total_cmp);
                // Clamp so float noise never puts the point outside its interval.
                (m, percentile(&s, alpha).min(m), percentile(&s, 1.0 - alpha).max(m))
            })
            .collect(),
    )
}

/// Summaries per group and eval step. Steps present in only some runs of
/// a group are dropped; empty groups are skipped with a warning.
pub fn aggregate(curves: &[Curve], metric: &str, seed: u64) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<&str, BTreeMap<&str, Vec<&Curve>>> = BTreeMap::new();
    for c in curves {
        groups.entry(&c.group).or_default().entry(&c.task).or_default().push(c);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (group, tasks) in groups {
        let all: Vec<&Curve> = tasks.values().flatten().copied().collect();
        let steps: Vec<u64> = all[0]
            .points
            .iter()
            .map(|p| p.0)
            .filter(|s| all.iter().all(|c| c.points.iter().any(|p| p.0 == *s)))
            .collect();
        if steps.is_empty() {
            log::warn!("group `{group}` has no eval step shared by all runs; skipped");
            continue;
        }
        let values: Vec<Vec<Vec<f64>>> = tasks
            .values()
            .map(|runs| {
                runs.iter()
                    .map(|c| steps.iter().map(|s| c.points.iter().find(|p| p.0 == *s).unwrap().1).collect())
                    .collect()
            })
            .collect();
        let Some(stats) = curve_bootstrap(&values, BOOTSTRAP_ITERS, CI_LEVEL, &mut rng) else {
            log::warn!("group `{group}` is empty; skipped");
            continue;
        };
        for (step, (mean, lo, hi)) in steps.iter().zip(stats) {
            out.push(SummaryRow {
                group: group.to_string(),
                metric: metric.to_string(),
                step: *step,
                runs: all.len(),
                mean,
                ci_lo: lo,
                ci_hi: hi,
            });
        }
    }
    out
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        wr.write_record([
            r.group.clone(),
            r.metric.clone(),
            r.step.to_string(),
            r.runs.to_string(),
            r.mean.to_string(),
            r.ci_lo.to_string(),
            r.ci_hi.to_string(),
        ])?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_summary<R: std::io::Read>(r: R) -> Result<Vec<SummaryRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rd.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
