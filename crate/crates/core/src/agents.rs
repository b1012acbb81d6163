//! Training loops: LQL, 1-step TD, n-step TD and TD on sampled trajectories,
//! under offline, offline-then-online and symmetric-online protocols.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hinge::{HingeAccumulator, HingeStatRow};
use crate::losses::{
    lql_trajectory_loss, nstep_td_loss, td_trajectory_loss, EvalCache, HingeWeights, LossBreakdown,
};
use crate::mdp::{argmax, step, FiniteMdp, Transition};
use crate::oracle::QStar;
use crate::qfunc::{ActivationFn, FeatureMap, Optimizer, OptimizerConfig, QFunction, TargetPair};
use crate::replay::{ReplayBuffer, TrajectoryBatch};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// 1-step TD on uniformly sampled transitions.
    Td,
    /// n-step TD, one target per sampled start (`nstep` in the config).
    TdN,
    Lql,
    /// 1-step TD at every index of sampled trajectories: LQL without
    /// hinges, written independently.
    TdTraj,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    OfflineOnly,
    OfflineThenOnline,
    SymmetricOnline,
}

macro_rules! kebab_enum {
    ($ty:ty { $($variant:ident => $name:literal),* $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $name),* })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(Self::$variant),)*
                    _ => Err(Error::InvalidConfig(format!(
                        "unknown {} `{s}` (expected one of: {})",
                        stringify!($ty),
                        [$($name),*].join(", ")
                    ))),
                }
            }
        }
    };
}

kebab_enum!(Method { Td => "td", TdN => "td-n", Lql => "lql", TdTraj => "td-traj" });
kebab_enum!(Protocol {
    OfflineOnly => "offline-only",
    OfflineThenOnline => "offline-then-online",
    SymmetricOnline => "symmetric-online",
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureConfig {
    OneHot,
    /// `φ(s, a) = scale[s] · e_{(group[s], a)}`.
    Aliased { group: Vec<usize>, scale: Vec<f64> },
    /// Row-major `(s, a, dim)` table.
    Table { dim: usize, table: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReprConfig {
    Tabular,
    Linear { features: FeatureConfig },
    Mlp { hidden: Vec<usize>, activation: ActivationFn },
}

impl ReprConfig {
    pub fn build<T: Scalar, R: Rng + ?Sized>(&self, num_states: usize, num_actions: usize, rng: &mut R) -> Result<QFunction<T>> {
        match self {
            ReprConfig::Tabular => Ok(QFunction::tabular(num_states, num_actions)),
            ReprConfig::Linear { features } => {
                let fm = match features {
                    FeatureConfig::OneHot => FeatureMap::one_hot(num_states, num_actions),
                    FeatureConfig::Aliased { group, scale } => {
                        if group.len() != num_states {
                            return Err(Error::InvalidConfig(format!(
                                "aliasing groups cover {} states, MDP has {num_states}",
                                group.len()
                            )));
                        }
                        let scale: Vec<T> = scale.iter().map(|&x| T::of(x)).collect();
                        FeatureMap::aliased(num_actions, group, &scale)?
                    }
                    FeatureConfig::Table { dim, table } => FeatureMap::from_table(
                        num_states,
                        num_actions,
                        *dim,
                        table.iter().map(|&x| T::of(x)).collect(),
                    )?,
                };
                QFunction::linear(fm, None)
            }
            ReprConfig::Mlp { hidden, activation } => {
                if hidden.is_empty() || hidden.contains(&0) {
                    return Err(Error::InvalidConfig("MLP needs nonempty hidden layers".into()));
                }
                Ok(QFunction::mlp(num_states, num_actions, hidden, *activation, rng))
            }
        }
    }
}

/// Every hyperparameter of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lr: f64,
    pub tau: f64,
    pub trajs_per_batch: usize,
    pub traj_len: usize,
    pub lambda_ub: f64,
    pub lambda_lb: f64,
    pub method: Method,
    /// `n` for `td-n`.
    pub nstep: usize,
    pub protocol: Protocol,
    pub offline_steps: usize,
    pub online_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub eval_max_len: usize,
    pub seed: u64,
    pub repr: ReprConfig,
    pub optimizer: OptimizerConfig,
    pub buffer_capacity: usize,
    /// Online episodes are cut (not terminated) after this many steps.
    pub max_episode_len: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of online steps over which ε is annealed.
    pub eps_anneal_frac: f64,
    /// Record hinge activation statistics at each eval point.
    pub hinge_stats: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Minutes-scale defaults.
    pub fn desk() -> Self {
        Self {
            gamma: 0.99,
            lr: 3e-4,
            tau: 5e-3,
            trajs_per_batch: 16,
            traj_len: 8,
            lambda_ub: 1.0,
            lambda_lb: 1.0,
            method: Method::Lql,
            nstep: 8,
            protocol: Protocol::OfflineThenOnline,
            offline_steps: 20_000,
            online_steps: 20_000,
            eval_every: 500,
            eval_episodes: 50,
            eval_max_len: 200,
            seed: 0,
            repr: ReprConfig::Mlp {
                hidden: vec![64, 64],
                activation: ActivationFn::Gelu,
            },
            optimizer: OptimizerConfig::adam(),
            buffer_capacity: 1_000_000,
            max_episode_len: 200,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_anneal_frac: 0.2,
            hinge_stats: false,
        }
    }

    /// Large-scale reference values; far too slow for the desk harness.
    pub fn full_scale() -> Self {
        Self {
            trajs_per_batch: 128,
            offline_steps: 1_000_000,
            online_steps: 1_000_000,
            eval_every: 100_000,
            repr: ReprConfig::Mlp {
                hidden: vec![512; 4],
                activation: ActivationFn::Gelu,
            },
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full-scale" => Ok(Self::full_scale()),
            _ => Err(Error::InvalidConfig(format!("unknown preset `{name}`"))),
        }
    }

    /// Rows and row length of one update batch.
    pub fn batch_shape(&self) -> (usize, usize) {
        match self.method {
            Method::Lql | Method::TdTraj => (self.trajs_per_batch, self.traj_len),
            Method::Td => (self.trajs_per_batch * self.traj_len, 1),
            Method::TdN => (self.trajs_per_batch * self.traj_len, self.nstep),
        }
    }

    pub fn total_steps(&self) -> usize {
        match self.protocol {
            Protocol::OfflineOnly => self.offline_steps,
            Protocol::OfflineThenOnline => self.offline_steps + self.online_steps,
            Protocol::SymmetricOnline => self.online_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau {} outside (0, 1]", self.tau));
        }
        if self.trajs_per_batch == 0 || self.traj_len == 0 {
            return bad("trajs_per_batch and traj_len must be at least 1".into());
        }
        if !(self.lambda_ub >= 0.0 && self.lambda_lb >= 0.0) {
            return bad("hinge weights must be nonnegative".into());
        }
        if self.method == Method::TdN && self.nstep == 0 {
            return bad("td-n requires n ≥ 1".into());
        }
        if self.eval_every == 0 || self.eval_episodes == 0 || self.eval_max_len == 0 {
            return bad("eval_every, eval_episodes and eval_max_len must be at least 1".into());
        }
        if self.total_steps() == 0 {
            return bad(format!("protocol {} runs zero steps", self.protocol));
        }
        if self.protocol != Protocol::OfflineOnly && self.max_episode_len == 0 {
            return bad("max_episode_len must be at least 1".into());
        }
        if self.protocol == Protocol::SymmetricOnline && self.batch_shape().0 < 2 {
            return bad("symmetric sampling needs at least 2 rows per batch".into());
        }
        let unit = 0.0..=1.0;
        if !(unit.contains(&self.eps_start) && unit.contains(&self.eps_end) && unit.contains(&self.eps_anneal_frac)) {
            return bad("exploration schedule values must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// ε after `t` online steps.
    pub fn epsilon(&self, t: usize) -> f64 {
        let anneal = ((self.eps_anneal_frac * self.online_steps as f64).floor() as usize).max(1);
        let frac = (t as f64 / anneal as f64).min(1.0);
        self.eps_start + (self.eps_end - self.eps_start) * frac
    }
}

/// SplitMix64 over `(seed, run, trial)`.
pub fn derive_seed(seed: u64, run: u64, trial: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(seed) ^ run) ^ trial)
}

/// Independent RNG streams of one run.
pub mod stream {
    pub const INIT: u64 = 0;
    pub const SAMPLE: u64 = 1;
    pub const ENV: u64 = 2;
    pub const EVAL: u64 = 3;
    pub const PROBE: u64 = 4;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, 0))
}

/// Online/target pair with its optimizer and method.
#[derive(Debug, Clone)]
pub struct Learner<T: Scalar> {
    pub pair: TargetPair<T>,
    optimizer: Optimizer<T>,
    weights: HingeWeights<T>,
    method: Method,
    nstep: usize,
    trajs: usize,
    traj_len: usize,
    rows: usize,
    len: usize,
    grads: Vec<T>,
}

impl<T: Scalar> Learner<T> {
    pub fn new(pair: TargetPair<T>, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let (rows, len) = cfg.batch_shape();
        let n = pair.online.num_params();
        Ok(Self {
            optimizer: Optimizer::new(cfg.optimizer, T::of(cfg.lr), n),
            weights: HingeWeights::new(T::of(cfg.lambda_ub), T::of(cfg.lambda_lb))?,
            method: cfg.method,
            nstep: cfg.nstep,
            trajs: cfg.trajs_per_batch,
            traj_len: cfg.traj_len,
            rows,
            len,
            grads: vec![T::zero(); n],
            pair,
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    /// Samples this method's batch shape, splitting rows evenly across
    /// `sources` (earlier sources take the remainder).
    pub fn sample<R: Rng + ?Sized>(&self, sources: &[&ReplayBuffer<T>], rng: &mut R) -> Result<TrajectoryBatch<T>> {
        sample_split(sources, self.rows, self.len, rng)
    }

    /// One update of the configured method on a fresh batch.
    pub fn update<R: Rng + ?Sized>(&mut self, sources: &[&ReplayBuffer<T>], rng: &mut R) -> Result<LossBreakdown<T>> {
        let batch = self.sample(sources, rng)?;
        self.step(&batch)
    }

    /// One update of the configured method on a given batch.
    pub fn step(&mut self, batch: &TrajectoryBatch<T>) -> Result<LossBreakdown<T>> {
        let td = match self.method {
            Method::Lql => return self.lql_step(batch),
            Method::Td => self.nstep_step(batch, 1)?,
            Method::TdN => self.nstep_step(batch, self.nstep)?,
            Method::TdTraj => self.td_trajectory_step(batch)?,
        };
        Ok(LossBreakdown {
            td,
            total: td,
            ..Default::default()
        })
    }

    /// Samples `trajs_per_batch` trajectories of length `L` and takes one
    /// LQL step.
    pub fn lql_update<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer<T>, rng: &mut R) -> Result<LossBreakdown<T>> {
        let batch = sample_split(&[buffer], self.trajs, self.traj_len, rng)?;
        self.lql_step(&batch)
    }

    /// Samples `trajs_per_batch · L` transitions and takes one TD step.
    pub fn td_update<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer<T>, rng: &mut R) -> Result<T> {
        let batch = sample_split(&[buffer], self.trajs * self.traj_len, 1, rng)?;
        self.nstep_step(&batch, 1)
    }

    /// Samples `trajs_per_batch · L` length-`n` segments and takes one n-step
    /// TD step.
    pub fn nstep_update<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer<T>, rng: &mut R) -> Result<T> {
        let batch = sample_split(&[buffer], self.trajs * self.traj_len, self.nstep, rng)?;
        self.nstep_step(&batch, self.nstep)
    }

    pub fn lql_step(&mut self, batch: &TrajectoryBatch<T>) -> Result<LossBreakdown<T>> {
        let inv_b = T::one() / T::of_usize(batch.batch_size());
        self.grads.fill(T::zero());
        let mut out = LossBreakdown::default();
        for row in 0..batch.batch_size() {
            let cache = EvalCache::build(batch, row, &self.pair.online, &self.pair.target)?;
            let (bd, mut dq) = lql_trajectory_loss(batch, row, &cache, self.weights, false)?;
            out.td += bd.td;
            out.lb += bd.lb;
            out.ub += bd.ub;
            out.total += bd.total;
            dq.iter_mut().for_each(|d| *d *= inv_b);
            cache.backward(&self.pair.online, &dq, &mut self.grads)?;
        }
        out.td *= inv_b;
        out.lb *= inv_b;
        out.ub *= inv_b;
        out.total *= inv_b;
        self.apply()?;
        Ok(out)
    }

    /// n-step TD with one target at the head of every row.
    pub fn nstep_step(&mut self, batch: &TrajectoryBatch<T>, n: usize) -> Result<T> {
        let inv_b = T::one() / T::of_usize(batch.batch_size());
        self.grads.fill(T::zero());
        let mut total = T::zero();
        for row in 0..batch.batch_size() {
            let cache = EvalCache::build_nstep(batch, row, &self.pair.online, &self.pair.target, n)?;
            let t = nstep_td_loss(batch, row, &cache, 0, n)?;
            total += t.value;
            cache.backward(&self.pair.online, &[t.dq * inv_b], &mut self.grads)?;
        }
        self.apply()?;
        Ok(total * inv_b)
    }

    /// 1-step TD at every index of every row.
    pub fn td_trajectory_step(&mut self, batch: &TrajectoryBatch<T>) -> Result<T> {
        let inv_b = T::one() / T::of_usize(batch.batch_size());
        self.grads.fill(T::zero());
        let mut total = T::zero();
        for row in 0..batch.batch_size() {
            let cache = EvalCache::build(batch, row, &self.pair.online, &self.pair.target)?;
            let (loss, mut dq) = td_trajectory_loss(batch, row, &cache)?;
            total += loss;
            dq.iter_mut().for_each(|d| *d *= inv_b);
            cache.backward(&self.pair.online, &dq, &mut self.grads)?;
        }
        self.apply()?;
        Ok(total * inv_b)
    }

    fn apply(&mut self) -> Result<()> {
        self.optimizer.step(&mut self.pair.online, &self.grads)?;
        self.pair.soft_update()
    }

    /// Per-pair hinge penalties on `batch` at the current parameters,
    /// without a gradient step. Counts evaluations like an update would.
    pub fn probe_hinges(&self, batch: &TrajectoryBatch<T>, acc: &mut HingeAccumulator) -> Result<()> {
        for row in 0..batch.batch_size() {
            let cache = EvalCache::build(batch, row, &self.pair.online, &self.pair.target)?;
            let (bd, _) = lql_trajectory_loss(batch, row, &cache, self.weights, true)?;
            acc.add(&bd, &cache.q_online_logged);
        }
        Ok(())
    }
}

fn sample_split<T: Scalar, R: Rng + ?Sized>(
    sources: &[&ReplayBuffer<T>],
    rows: usize,
    len: usize,
    rng: &mut R,
) -> Result<TrajectoryBatch<T>> {
    let Some((first, rest)) = sources.split_first() else {
        return Err(Error::EmptyBuffer);
    };
    let n = sources.len();
    let share = |j: usize| rows / n + usize::from(j < rows % n);
    let mut batch = first.sample_trajectories(share(0), len, rng)?;
    for (j, src) in rest.iter().enumerate() {
        batch = batch.concat(&src.sample_trajectories(share(j + 1), len, rng)?)?;
    }
    Ok(batch)
}

/// Something that picks a greedy action.
pub trait GreedyPolicy {
    fn act(&self, s: usize) -> usize;
}

impl<T: Scalar> GreedyPolicy for QFunction<T> {
    fn act(&self, s: usize) -> usize {
        argmax(&self.peek(s))
    }
}

impl<T: Scalar> GreedyPolicy for QStar<T> {
    fn act(&self, s: usize) -> usize {
        self.greedy(s)
    }
}

/// Fraction of greedy rollouts from `mdp.start()` that reach a goal state
/// within `max_len` steps.
pub fn evaluate_policy<T: Scalar, P: GreedyPolicy + ?Sized, R: Rng + ?Sized>(
    mdp: &FiniteMdp<T>,
    q: &P,
    episodes: usize,
    max_len: usize,
    rng: &mut R,
) -> f64 {
    let episodes = episodes.max(1);
    let mut wins = 0usize;
    for _ in 0..episodes {
        let mut s = mdp.start();
        for _ in 0..max_len {
            let (sn, _, done) = step(mdp, s, q.act(s), rng).expect("greedy action in range");
            if mdp.is_goal(sn) {
                wins += 1;
                break;
            }
            if done {
                break;
            }
            s = sn;
        }
    }
    wins as f64 / episodes as f64
}

/// Metrics at one evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    pub success_rate: f64,
    /// Over non-terminal states and all actions.
    pub mean_online_q: f64,
    pub max_abs_q: f64,
    pub max_q: f64,
    /// Loss means over the updates since the previous point.
    pub td: f64,
    pub lb: f64,
    pub ub: f64,
    pub total: f64,
    /// Cumulative Q evaluations made by updates.
    pub evals: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub points: Vec<EvalPoint>,
    /// Filled when hinge statistics are enabled.
    pub hinge: Vec<HingeStatRow>,
    /// Where the final online parameters were written, if anywhere.
    pub checkpoint: Option<String>,
}

pub const REPORT_COLUMNS: [&str; 9] = [
    "step",
    "success_rate",
    "mean_online_q",
    "max_abs_q",
    "td",
    "lb",
    "ub",
    "total",
    "evals",
];

impl TrainReport {
    pub fn last(&self) -> Option<&EvalPoint> {
        self.points.last()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(REPORT_COLUMNS)?;
        for p in &self.points {
            wr.write_record([
                p.step.to_string(),
                p.success_rate.to_string(),
                p.mean_online_q.to_string(),
                p.max_abs_q.to_string(),
                p.td.to_string(),
                p.lb.to_string(),
                p.ub.to_string(),
                p.total.to_string(),
                p.evals.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_hinge_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for row in &self.hinge {
            wr.serialize(row)?;
        }
        if self.hinge.is_empty() {
            wr.write_record(["side", "distance", "step", "count", "frequency", "magnitude"])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Report plus the trained networks.
#[derive(Debug, Clone)]
pub struct TrainRun<T: Scalar> {
    pub report: TrainReport,
    pub pair: TargetPair<T>,
}

#[derive(Default)]
struct Window {
    td: f64,
    lb: f64,
    ub: f64,
    total: f64,
    n: usize,
}

impl Window {
    fn add<T: Scalar>(&mut self, b: &LossBreakdown<T>) {
        self.td += b.td.to_f64_lossy();
        self.lb += b.lb.to_f64_lossy();
        self.ub += b.ub.to_f64_lossy();
        self.total += b.total.to_f64_lossy();
        self.n += 1;
    }

    fn take(&mut self) -> [f64; 4] {
        let n = self.n.max(1) as f64;
        let out = [self.td / n, self.lb / n, self.ub / n, self.total / n];
        *self = Self::default();
        out
    }
}

fn q_summary<T: Scalar>(mdp: &FiniteMdp<T>, q: &QFunction<T>) -> (f64, f64, f64) {
    let (mut sum, mut n, mut max_abs, mut max) = (0.0, 0usize, 0.0f64, f64::NEG_INFINITY);
    for s in (0..mdp.num_states()).filter(|&s| !mdp.is_terminal(s)) {
        for v in q.peek(s) {
            let v = v.to_f64_lossy();
            sum += v;
            n += 1;
            // NaN must surface as a blow-up, so compare with negation.
            if !(v.abs() <= max_abs) {
                max_abs = v.abs();
            }
            if !(v <= max) {
                max = v;
            }
        }
    }
    (sum / n.max(1) as f64, max_abs, max)
}

/// Online episode state.
struct Actor {
    s: usize,
    t: usize,
    episode_id: u64,
    steps: usize,
}

/// Runs the configured protocol on `mdp` with `dataset` as offline data.
pub fn train<T: Scalar>(mdp: &FiniteMdp<T>, dataset: &[Transition<T>], cfg: &TrainConfig) -> Result<TrainRun<T>> {
    cfg.validate()?;
    if (mdp.gamma().to_f64_lossy() - cfg.gamma).abs() > 1e-12 {
        return Err(Error::InvalidConfig(format!(
            "config gamma {} differs from MDP gamma {}",
            cfg.gamma,
            mdp.gamma()
        )));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidConfig(format!("protocol {} needs offline data", cfg.protocol)));
    }
    if dataset
        .iter()
        .any(|t| t.s >= mdp.num_states() || t.s_next >= mdp.num_states() || t.a >= mdp.num_actions())
    {
        return Err(Error::InvalidConfig("dataset references states or actions outside the MDP".into()));
    }

    let mut init_rng = stream_rng(cfg.seed, stream::INIT);
    let mut sample_rng = stream_rng(cfg.seed, stream::SAMPLE);
    let mut env_rng = stream_rng(cfg.seed, stream::ENV);
    let mut eval_rng = stream_rng(cfg.seed, stream::EVAL);
    let mut probe_rng = stream_rng(cfg.seed, stream::PROBE);

    let q = cfg.repr.build::<T, _>(mdp.num_states(), mdp.num_actions(), &mut init_rng)?;
    let mut learner = Learner::new(TargetPair::new(q, T::of(cfg.tau))?, cfg)?;

    let mut offline = ReplayBuffer::new(cfg.buffer_capacity, mdp.gamma());
    offline.push_dataset(dataset)?;
    let mut online = ReplayBuffer::new(cfg.buffer_capacity, mdp.gamma());

    let offline_steps = match cfg.protocol {
        Protocol::SymmetricOnline => 0,
        _ => cfg.offline_steps,
    };
    let total = cfg.total_steps();
    let mut actor = Actor {
        s: mdp.start(),
        t: 0,
        episode_id: dataset.iter().map(|t| t.episode_id).max().map_or(0, |m| m + 1),
        steps: 0,
    };

    let mut report = TrainReport::default();
    let mut window = Window::default();
    let mut evals = 0u64;
    for step_idx in 1..=total {
        if step_idx > offline_steps {
            let tr = act(mdp, &learner.pair.online, cfg, &mut actor, &mut env_rng)?;
            match cfg.protocol {
                Protocol::SymmetricOnline => online.push_episode(&[tr])?,
                _ => offline.push_episode(&[tr])?,
            }
        }
        let before = learner.pair.eval_count();
        let breakdown = match cfg.protocol {
            Protocol::SymmetricOnline => learner.update(&[&offline, &online], &mut sample_rng)?,
            _ => learner.update(&[&offline], &mut sample_rng)?,
        };
        evals += learner.pair.eval_count() - before;
        window.add(&breakdown);

        if step_idx % cfg.eval_every == 0 || step_idx == total {
            let (mean, max_abs, max) = q_summary(mdp, &learner.pair.online);
            let success = evaluate_policy(mdp, &learner.pair.online, cfg.eval_episodes, cfg.eval_max_len, &mut eval_rng);
            let [td, lb, ub, tot] = window.take();
            report.points.push(EvalPoint {
                step: step_idx as u64,
                success_rate: success,
                mean_online_q: mean,
                max_abs_q: max_abs,
                max_q: max,
                td,
                lb,
                ub,
                total: tot,
                evals,
            });
            if cfg.hinge_stats {
                let (rows, len) = (cfg.trajs_per_batch, cfg.traj_len);
                let probe = match cfg.protocol {
                    Protocol::SymmetricOnline => sample_split(&[&offline, &online], rows.max(2), len, &mut probe_rng)?,
                    _ => sample_split(&[&offline], rows, len, &mut probe_rng)?,
                };
                let mut acc = HingeAccumulator::new();
                learner.probe_hinges(&probe, &mut acc)?;
                report.hinge.extend(acc.rows(step_idx as u64));
            }
        }
    }
    Ok(TrainRun {
        report,
        pair: learner.pair,
    })
}

/// One ε-greedy environment step.
fn act<T: Scalar, R: Rng + ?Sized>(
    mdp: &FiniteMdp<T>,
    q: &QFunction<T>,
    cfg: &TrainConfig,
    actor: &mut Actor,
    rng: &mut R,
) -> Result<Transition<T>> {
    let eps = cfg.epsilon(actor.steps);
    actor.steps += 1;
    let a = if rng.gen::<f64>() < eps {
        rng.gen_range(0..mdp.num_actions())
    } else {
        q.act(actor.s)
    };
    let (s_next, r, done) = step(mdp, actor.s, a, rng)?;
    let tr = Transition {
        episode_id: actor.episode_id,
        step_index: actor.t as u64,
        s: actor.s,
        a,
        r,
        s_next,
        done,
    };
    actor.t += 1;
    actor.s = s_next;
    if done || actor.t >= cfg.max_episode_len {
        actor.s = mdp.start();
        actor.t = 0;
        actor.episode_id += 1;
    }
    Ok(tr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Td, Method::TdN, Method::Lql, Method::TdTraj] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{m}\""));
        }
        assert!("sarsa".parse::<Method>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::desk();
        assert!(c.validate().is_ok());
        c.method = Method::TdN;
        c.nstep = 0;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let mut c = TrainConfig::desk();
        c.lambda_lb = -0.5;
        assert!(c.validate().is_err());
        let json = r#"{"method": "td", "bogus": 1}"#;
        assert!(serde_json::from_str::<TrainConfig>(json).is_err());
        let c: TrainConfig = serde_json::from_str(r#"{"method": "td-n", "nstep": 4}"#).unwrap();
        assert_eq!((c.method, c.nstep, c.traj_len), (Method::TdN, 4, 8));
    }

    #[test]
    fn batch_shapes_match_transitions() {
        let mut c = TrainConfig::desk();
        for m in [Method::Td, Method::TdN, Method::Lql, Method::TdTraj] {
            c.method = m;
            let (rows, len) = c.batch_shape();
            match m {
                Method::Lql | Method::TdTraj => assert_eq!(rows * len, 128),
                _ => assert_eq!(rows, 128),
            }
        }
    }

    #[test]
    fn epsilon_schedule() {
        let c = TrainConfig {
            online_steps: 1000,
            ..TrainConfig::desk()
        };
        assert_eq!(c.epsilon(0), 1.0);
        assert!((c.epsilon(100) - 0.525).abs() < 1e-12);
        assert!((c.epsilon(200) - 0.05).abs() < 1e-12);
        assert!((c.epsilon(900) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn seeds_differ_by_stream() {
        assert_ne!(derive_seed(1, 0, 0), derive_seed(1, 1, 0));
        assert_ne!(derive_seed(1, 0, 0), derive_seed(1, 0, 1));
        assert_eq!(derive_seed(7, 3, 2), derive_seed(7, 3, 2));
    }
}
