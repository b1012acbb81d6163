//! Experiment configuration: environment, offline dataset, training
//! hyperparameters, seeds, and the theory grid.
//!
//! Files are JSON. Overrides use dotted paths (`train.lr=0.01`) applied to
//! the parsed JSON before it is checked against the schema, so a typo in
//! either place is rejected the same way.

use std::path::{Path, PathBuf};

use lql_core::agents::TrainConfig;
use lql_core::mdp::{
    apply_slip_noise, build_bad_tail, build_chain, build_gridmaze, build_lure_chain, generate_dataset_from,
    read_dataset_csv, BehaviorPolicy, GridLayout, RewardMode, CHAIN_FORWARD,
};
use lql_core::oracle::value_iteration;
use lql_core::{Mdp, Transition};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    Chain,
    LureChain,
    /// `layout` rows, or an open `height × width` room when empty.
    Grid,
    BadTail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub length: usize,
    pub reward: RewardMode,
    /// Lure reward of `lure-chain`.
    pub lure: f64,
    pub layout: Vec<String>,
    pub height: usize,
    pub width: usize,
    pub gamma: f64,
    /// Slip probability applied on top of the base dynamics.
    pub slip: f64,
    pub start: Option<usize>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            kind: EnvKind::Chain,
            length: 10,
            reward: RewardMode::GoalPlusOne,
            lure: 0.1,
            layout: Vec::new(),
            height: 5,
            width: 5,
            gamma: 0.99,
            slip: 0.0,
            start: None,
        }
    }
}

impl EnvConfig {
    pub fn build(&self) -> Result<Mdp> {
        let base = match self.kind {
            EnvKind::Chain => build_chain(self.length, self.reward, self.gamma)?,
            EnvKind::LureChain => build_lure_chain(self.length, self.lure, self.gamma)?,
            EnvKind::Grid => {
                let layout = if self.layout.is_empty() {
                    if self.height == 0 || self.width == 0 {
                        return Err(Error::Usage("grid needs a layout or positive height and width".into()));
                    }
                    GridLayout::open(self.height, self.width)
                } else {
                    GridLayout::new(&self.layout)
                };
                build_gridmaze(&layout, self.reward, self.gamma)?.mdp
            }
            EnvKind::BadTail => build_bad_tail(self.gamma)?,
        };
        let mdp = if self.slip > 0.0 { apply_slip_noise(&base, self.slip)? } else { base };
        match self.start {
            Some(s) => Ok(mdp.with_start(s)?),
            None => Ok(mdp),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BehaviorConfig {
    Uniform,
    /// Two-action chains: forward with probability `p`.
    Forward { p: f64 },
    /// Row-major `(s, a)` action probabilities.
    Table { probs: Vec<f64> },
    /// ε-greedy around the exact optimum.
    EpsilonGreedy { epsilon: f64 },
}

impl BehaviorConfig {
    pub fn build(&self, mdp: &Mdp) -> Result<BehaviorPolicy<f64>> {
        let na = mdp.num_actions();
        Ok(match self {
            BehaviorConfig::Uniform => BehaviorPolicy::uniform(na),
            BehaviorConfig::Forward { p } => {
                if na != 2 {
                    return Err(Error::Usage(format!("forward behavior needs 2 actions, MDP has {na}")));
                }
                let mut row = [1.0 - p; 2];
                row[CHAIN_FORWARD] = *p;
                BehaviorPolicy::table(row.repeat(mdp.num_states()), 2)?
            }
            BehaviorConfig::Table { probs } => BehaviorPolicy::table(probs.clone(), na)?,
            BehaviorConfig::EpsilonGreedy { epsilon } => {
                let qs = value_iteration(mdp, 1e-10)?;
                BehaviorPolicy::epsilon_greedy(qs.q, na, *epsilon)?
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NamedStarts {
    /// The MDP's own start state.
    Start,
    /// Every non-terminal state.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Starts {
    Named(NamedStarts),
    List(Vec<usize>),
}

impl Starts {
    pub fn resolve(&self, mdp: &Mdp) -> Vec<usize> {
        match self {
            Starts::Named(NamedStarts::Start) => vec![mdp.start()],
            Starts::Named(NamedStarts::All) => (0..mdp.num_states()).filter(|&s| !mdp.is_terminal(s)).collect(),
            Starts::List(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub behavior: BehaviorConfig,
    pub transitions: usize,
    pub max_len: usize,
    pub starts: Starts,
    pub seed: u64,
    /// Read this CSV instead of generating.
    pub path: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            behavior: BehaviorConfig::Uniform,
            transitions: 20_000,
            max_len: 200,
            starts: Starts::Named(NamedStarts::Start),
            seed: 0,
            path: None,
        }
    }
}

impl DatasetConfig {
    pub fn load(&self, mdp: &Mdp) -> Result<Vec<Transition>> {
        if let Some(path) = &self.path {
            let f = std::fs::File::open(path).map_err(Error::io(format!("opening {}", path.display())))?;
            return Ok(read_dataset_csv(f)?);
        }
        let pol = self.behavior.build(mdp)?;
        let starts = self.starts.resolve(mdp);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok(generate_dataset_from(mdp, &pol, self.transitions, self.max_len, &starts, &mut rng)?)
    }
}

/// Grid of slip chains for `verify-theory`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub sigmas: Vec<f64>,
    pub gammas: Vec<f64>,
    #[serde(rename = "L")]
    pub lengths: Vec<usize>,
    pub trials: usize,
    pub burn_in: usize,
    pub chain_length: usize,
    /// Behavior forward probability on the chain.
    pub forward_p: f64,
    pub seed: u64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            sigmas: vec![0.1, 0.3, 0.5],
            gammas: vec![0.9, 0.99],
            lengths: vec![2, 4, 8, 16],
            trials: 100_000,
            burn_in: 5,
            chain_length: 10,
            forward_p: 0.7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub dataset: DatasetConfig,
    /// `train.gamma` is replaced by `env.gamma` on resolution.
    pub train: TrainConfig,
    /// Seeds for multi-run commands; `train` uses `train.seed`.
    pub seeds: Vec<u64>,
    pub theory: TheoryConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            dataset: DatasetConfig::default(),
            train: TrainConfig::desk(),
            seeds: vec![0, 1, 2, 3, 4],
            theory: TheoryConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses JSON (a config or a run manifest) and applies `key=value`
    /// overrides.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let mut v: Value = serde_json::from_str(text)?;
        if let Some(inner) = manifest_config(&v) {
            v = inner.clone();
        }
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        let mut cfg: ExperimentConfig = serde_json::from_value(v)?;
        cfg.train.gamma = cfg.env.gamma;
        cfg.train.validate()?;
        if cfg.seeds.is_empty() {
            return Err(Error::Usage("`seeds` must not be empty".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(Error::io(format!("reading config {}", p.display())))?,
            None => "{}".to_string(),
        };
        Self::from_json(&text, overrides)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        config_hash(&self.to_value())
    }
}

fn manifest_config(v: &Value) -> Option<&Value> {
    let obj = v.as_object()?;
    if !obj.contains_key("config_hash") {
        return None;
    }
    let cfg = obj.get("config")?;
    // Sweep and plot manifests wrap the experiment next to their own settings.
    Some(cfg.get("experiment").unwrap_or(cfg))
}

/// Hex SHA-256 of the compact JSON encoding.
pub fn config_hash(v: &Value) -> String {
    let digest = Sha256::digest(v.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// `a.b.c=value`; the value is read as JSON when it parses, else as a string.
pub fn apply_override(root: &mut Value, item: &str) -> Result<()> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override `{item}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        if key.is_empty() {
            return Err(Error::Usage(format!("override `{item}` has an empty key")));
        }
        if !cur.is_object() {
            if cur.is_null() {
                *cur = Value::Object(Default::default());
            } else {
                return Err(Error::Usage(format!("override `{item}`: `{key}` is inside a non-object")));
            }
        }
        let obj = cur.as_object_mut().expect("object");
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(key.to_string()).or_insert(Value::Null);
    }
    unreachable!("split yields at least one key")
}
