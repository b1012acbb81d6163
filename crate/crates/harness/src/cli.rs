//! `lql` command line. Every subcommand takes `--config FILE` (optional;
//! defaults fill the rest) and repeatable `--set key.path=value`
//! overrides. Dedicated flags are shorthands for common overrides.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error,
//! 3 `verify-theory` completed with a bound violated.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use lql_core::mdp::write_dataset_csv;
use lql_core::theory::write_theory_csv;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::aggregate::{aggregate, write_summary, Curve};
use crate::config::ExperimentConfig;
use crate::hinge::collect_hinge_stats;
use crate::output::{output_root, RunDir};
use crate::plots::{figure_rows, load_inputs, write_plot_csv, Figure};
use crate::sweep::{env_label, run_sweep, run_training, write_report, Axis, Fixed, SweepPlan};
use crate::verify::verify_theory;
use crate::{Error, Result, EXIT_BOUNDS, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "lql", version, about = "LQL / TD experiments on exactly solvable MDPs")]
pub struct Cli {
    /// Output root; defaults to $LQL_OUTPUT_ROOT, then ./lql-out.
    #[arg(long, global = true)]
    pub out_root: Option<PathBuf>,
    /// Run directory name under the root (default: command plus config hash).
    #[arg(long, global = true)]
    pub name: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// JSON experiment config, or a manifest from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override `key.path=value` (value parsed as JSON when possible).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the offline dataset and MDP of a config.
    GenDataset {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        transitions: Option<usize>,
    },
    /// One training run.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// One axis swept over values and seeds, with an aggregate.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Comma-separated seeds (default: `seeds` from the config).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, value_enum, default_value = "trajs_per_batch")]
        fixed: Fixed,
    },
    /// Monte-Carlo false penalties against their bounds.
    VerifyTheory {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "sigma", value_delimiter = ',')]
        sigmas: Vec<f64>,
        #[arg(long = "gamma", value_delimiter = ',')]
        gammas: Vec<f64>,
        #[arg(long = "L", value_delimiter = ',')]
        lengths: Vec<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
    },
    /// Training runs with hinge statistics recorded, one per seed.
    HingeStats {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Per-figure CSV series from sweep or hinge-stats outputs.
    EmitPlots {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long = "figure", value_enum, required = true)]
        figures: Vec<Figure>,
    },
}

#[derive(Debug, Args, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub traj_len: Option<usize>,
    /// Sets both hinge weights.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub nstep: Option<usize>,
    /// Offline steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

impl TrainFlags {
    fn overrides(&self) -> Vec<String> {
        let mut o = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push(format!("train.{k}={v}"));
            }
        };
        push("method", self.method.as_ref().map(|m| Value::String(m.clone()).to_string()));
        push("seed", self.seed.map(|x| x.to_string()));
        push("traj_len", self.traj_len.map(|x| x.to_string()));
        push("lambda_lb", self.lambda.map(|x| x.to_string()));
        push("lambda_ub", self.lambda.map(|x| x.to_string()));
        push("nstep", self.nstep.map(|x| x.to_string()));
        push("offline_steps", self.steps.map(|x| x.to_string()));
        push("lr", self.lr.map(|x| x.to_string()));
        o
    }
}

fn load(args: &ConfigArgs, extra: Vec<String>) -> Result<ExperimentConfig> {
    let mut overrides = args.set.clone();
    overrides.extend(extra);
    ExperimentConfig::load(args.config.as_deref(), &overrides)
}

/// Parses `argv` (program name first) and runs; returns the exit code.
pub fn run(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli, argv) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Ctx<'a> {
    root: PathBuf,
    name: Option<&'a str>,
    argv: &'a [String],
}

impl Ctx<'_> {
    /// Creates the run directory, runs `body`, and records the outcome.
    fn execute(&self, command: &str, config: Value, body: impl FnOnce(&mut RunDir) -> Result<i32>) -> Result<i32> {
        let hash = crate::config::config_hash(&config);
        let name = self.name.map_or_else(|| format!("{command}-{}", &hash[..12]), str::to_string);
        let mut dir = RunDir::create(&self.root, &name, command, self.argv, config)?;
        let path = dir.path().to_path_buf();
        let outcome = body(&mut dir);
        dir.finish(&outcome)?;
        println!("{}", path.display());
        outcome
    }
}

fn dispatch(cli: &Cli, argv: &[String]) -> Result<i32> {
    let ctx = Ctx { root: output_root(cli.out_root.as_deref()), name: cli.name.as_deref(), argv };
    match &cli.command {
        Command::GenDataset { cfg, seed, transitions } => {
            let mut extra = Vec::new();
            if let Some(s) = seed {
                extra.push(format!("dataset.seed={s}"));
            }
            if let Some(n) = transitions {
                extra.push(format!("dataset.transitions={n}"));
            }
            let cfg = load(cfg, extra)?;
            ctx.execute("gen-dataset", cfg.to_value(), |dir| {
                let mdp = cfg.env.build()?;
                let data = cfg.dataset.load(&mdp)?;
                write_dataset_csv(&data, dir.create_file("dataset.csv")?)?;
                let p = dir.file("mdp.json")?;
                std::fs::write(&p, mdp.to_json()?).map_err(Error::io(format!("writing {}", p.display())))?;
                dir.set_extra(json!({ "transitions": data.len() }));
                Ok(EXIT_OK)
            })
        }
        Command::Train { cfg, train } => {
            let cfg = load(cfg, train.overrides())?;
            ctx.execute("train", cfg.to_value(), |dir| {
                let run = run_training(&cfg)?;
                write_report(dir, &run.report, cfg.train.hinge_stats)?;
                if let Some(p) = run.report.last() {
                    log::info!("final success {:.3}, mean Q {:.4}", p.success_rate, p.mean_online_q);
                }
                Ok(EXIT_OK)
            })
        }
        Command::Sweep { cfg, train, axis, values, seeds, fixed } => {
            let cfg = load(cfg, train.overrides())?;
            let plan = SweepPlan {
                axis: *axis,
                values: values.iter().map(|v| serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.clone()))).collect(),
                seeds: if seeds.is_empty() { cfg.seeds.clone() } else { seeds.clone() },
                fixed: *fixed,
            };
            plan.validate()?;
            // Resolve every point up front: a bad value is a usage error.
            for v in &plan.values {
                plan.point(&cfg, v, plan.seeds[0])?;
            }
            let config = json!({ "experiment": cfg.to_value(), "sweep": plan });
            ctx.execute("sweep", config, |dir| {
                run_sweep(&cfg, &plan, dir, argv)?;
                Ok(EXIT_OK)
            })
        }
        Command::VerifyTheory { cfg, sigmas, gammas, lengths, trials, burn_in } => {
            let mut cfg = load(cfg, Vec::new())?;
            let t = &mut cfg.theory;
            if !sigmas.is_empty() {
                t.sigmas = sigmas.clone();
            }
            if !gammas.is_empty() {
                t.gammas = gammas.clone();
            }
            if !lengths.is_empty() {
                t.lengths = lengths.clone();
            }
            t.trials = trials.unwrap_or(t.trials);
            t.burn_in = burn_in.unwrap_or(t.burn_in);
            if t.trials == 0 || t.lengths.contains(&0) {
                return Err(Error::Usage("need trials ≥ 1 and every L ≥ 1".into()));
            }
            ctx.execute("verify-theory", cfg.to_value(), |dir| {
                let out = verify_theory(&cfg.theory)?;
                write_theory_csv(&out.rows(), dir.create_file("theory.csv")?)?;
                let failed: Vec<&str> = out.checks.iter().filter(|c| !c.ok).map(|c| c.name.as_str()).collect();
                for f in &failed {
                    log::warn!("bound check failed: {f}");
                }
                dir.set_extra(json!({ "checks": out.checks.len(), "failed": failed }));
                Ok(if out.all_ok() { EXIT_OK } else { EXIT_BOUNDS })
            })
        }
        Command::HingeStats { cfg, train, seeds } => {
            let mut extra = train.overrides();
            extra.push("train.hinge_stats=true".into());
            let mut cfg = load(cfg, extra)?;
            if !seeds.is_empty() {
                cfg.seeds = seeds.clone();
            }
            ctx.execute("hinge-stats", cfg.to_value(), |dir| {
                hinge_stats(&cfg, dir, argv)?;
                Ok(EXIT_OK)
            })
        }
        Command::EmitPlots { cfg, inputs, figures } => {
            let cfg = load(cfg, Vec::new())?;
            let loaded = load_inputs(inputs)?;
            let config = json!({
                "experiment": cfg.to_value(),
                "inputs": inputs,
                "figures": figures.iter().map(|f| f.name()).collect::<Vec<_>>(),
            });
            ctx.execute("emit-plots", config, |dir| {
                for f in figures {
                    let rows = figure_rows(*f, &loaded);
                    if rows.is_empty() {
                        log::warn!("figure {} has no matching series in the inputs", f.name());
                    }
                    write_plot_csv(&rows, dir.create_file(&format!("plots/{}.csv", f.name()))?)?;
                }
                Ok(EXIT_OK)
            })
        }
    }
}

/// One run per seed under `runs/seed-<s>/`, then `aggregate.csv` with
/// groups `LB/d=<distance>` and metrics `frequency` and `magnitude`.
fn hinge_stats(cfg: &ExperimentConfig, dir: &mut RunDir, argv: &[String]) -> Result<()> {
    let root = dir.path().to_path_buf();
    let stats = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut c = cfg.clone();
            c.train.seed = seed;
            c.seeds = vec![seed];
            let mut run_dir = RunDir::create_at(root.join(format!("runs/seed-{seed}")), "train", argv, c.to_value())?;
            let outcome = run_training(&c).and_then(|run| {
                write_report(&mut run_dir, &run.report, true)?;
                collect_hinge_stats(&c.train, &run.report)
            });
            run_dir.finish(&outcome)?;
            outcome
        })
        .collect::<Result<Vec<_>>>()?;
    for s in &cfg.seeds {
        dir.file(&format!("runs/seed-{s}/hinge.csv"))?;
    }
    let task = env_label(cfg.env.kind);
    let mut rows = Vec::new();
    for metric in ["frequency", "magnitude"] {
        let mut curves = Vec::new();
        for st in &stats {
            let mut by_group: std::collections::BTreeMap<String, Vec<(u64, f64)>> = Default::default();
            for r in &st.rows {
                let v = if metric == "frequency" { r.frequency } else { r.magnitude };
                by_group.entry(format!("{}/d={}", r.side, r.distance)).or_default().push((r.step, v));
            }
            curves.extend(by_group.into_iter().map(|(group, points)| Curve { group, task: task.clone(), points }));
        }
        rows.extend(aggregate(&curves, metric, cfg.train.seed));
    }
    write_summary(&rows, dir.create_file("aggregate.csv")?)?;
    Ok(())
}

/// Convenience for tests and scripts: run with an explicit output root.
pub fn run_in(root: &Path, args: &[&str]) -> i32 {
    let mut argv = vec!["lql".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    argv.push("--out-root".into());
    argv.push(root.display().to_string());
    run(&argv)
}
