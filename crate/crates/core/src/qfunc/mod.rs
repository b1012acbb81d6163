//! Q-function representations over a flat parameter vector, Polyak target
//! copies, and an exact forward-evaluation counter.
//!
//! Every representation counts one evaluation per `(s, a)` value it
//! produces: `evaluate` adds 1, `values`/`greedy_action` add `num_actions`.
//! Gradients are taken through [`QFunction::forward`], which records what the
//! backward pass needs so that no second forward pass is required.

mod features;
mod mlp;
mod optim;

use std::io::{BufRead, BufReader, Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;

pub use features::FeatureMap;
pub use mlp::{ActivationFn, MlpLayout, MlpTape};
pub use optim::{Adam, Optimizer, OptimizerConfig};

use crate::error::{Error, Result};
use crate::mdp::argmax;
use crate::Scalar;

#[derive(Debug, Clone)]
pub enum Repr<T: Scalar> {
    Tabular,
    Linear(Arc<FeatureMap<T>>),
    Mlp(Arc<MlpLayout>),
}

impl<T: Scalar> Repr<T> {
    fn kind(&self) -> &'static str {
        match self {
            Repr::Tabular => "tabular",
            Repr::Linear(_) => "linear",
            Repr::Mlp(_) => "mlp",
        }
    }
}

#[derive(Debug)]
pub struct QFunction<T: Scalar> {
    num_states: usize,
    num_actions: usize,
    repr: Repr<T>,
    params: Vec<T>,
    evals: AtomicU64,
}

impl<T: Scalar> Clone for QFunction<T> {
    fn clone(&self) -> Self {
        Self {
            num_states: self.num_states,
            num_actions: self.num_actions,
            repr: self.repr.clone(),
            params: self.params.clone(),
            evals: AtomicU64::new(self.eval_count()),
        }
    }
}

/// A recorded online evaluation `Q_θ(s, a)`.
#[derive(Debug, Clone)]
pub struct Activation<T: Scalar> {
    pub s: usize,
    pub a: usize,
    pub value: T,
    tape: Option<MlpTape<T>>,
}

impl<T: Scalar> QFunction<T> {
    /// Zero-initialized table.
    pub fn tabular(num_states: usize, num_actions: usize) -> Self {
        Self::with_params(num_states, num_actions, Repr::Tabular, vec![T::zero(); num_states * num_actions])
    }

    /// Table loaded from row-major `(s, a)` values.
    pub fn tabular_from(num_states: usize, num_actions: usize, table: &[T]) -> Result<Self> {
        if table.len() != num_states * num_actions {
            return Err(Error::InvalidInput("table shape mismatch".into()));
        }
        Ok(Self::with_params(num_states, num_actions, Repr::Tabular, table.to_vec()))
    }

    /// Linear model with the given weights (zero if `None`).
    pub fn linear(features: FeatureMap<T>, weights: Option<Vec<T>>) -> Result<Self> {
        let w = weights.unwrap_or_else(|| vec![T::zero(); features.dim()]);
        if w.len() != features.dim() {
            return Err(Error::InvalidInput("weight/feature dimension mismatch".into()));
        }
        Ok(Self::with_params(
            features.num_states(),
            features.num_actions(),
            Repr::Linear(Arc::new(features)),
            w,
        ))
    }

    /// MLP with hidden layer sizes `hidden`, randomly initialized.
    pub fn mlp<R: Rng + ?Sized>(
        num_states: usize,
        num_actions: usize,
        hidden: &[usize],
        activation: ActivationFn,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![num_states];
        sizes.extend_from_slice(hidden);
        sizes.push(num_actions);
        let layout = MlpLayout::new(sizes, activation);
        let params = layout.init(rng);
        Self::with_params(num_states, num_actions, Repr::Mlp(Arc::new(layout)), params)
    }

    fn with_params(num_states: usize, num_actions: usize, repr: Repr<T>, params: Vec<T>) -> Self {
        Self {
            num_states,
            num_actions,
            repr,
            params,
            evals: AtomicU64::new(0),
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn repr(&self) -> &Repr<T> {
        &self.repr
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn eval_count(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn reset_eval_count(&self) {
        self.evals.store(0, Ordering::Relaxed);
    }

    fn count(&self, n: usize) {
        self.evals.fetch_add(n as u64, Ordering::Relaxed);
    }

    fn check(&self, s: usize, a: usize) -> Result<()> {
        if s >= self.num_states || a >= self.num_actions {
            return Err(Error::InvalidInput(format!(
                "({s},{a}) outside {}×{}",
                self.num_states, self.num_actions
            )));
        }
        Ok(())
    }

    /// Same-shaped representation check.
    pub fn same_shape(&self, other: &Self) -> bool {
        self.num_states == other.num_states
            && self.num_actions == other.num_actions
            && self.params.len() == other.params.len()
            && self.repr.kind() == other.repr.kind()
    }

    fn raw(&self, s: usize, a: usize) -> T {
        match &self.repr {
            Repr::Tabular => self.params[s * self.num_actions + a],
            Repr::Linear(f) => f.phi(s, a).iter().zip(&self.params).map(|(&x, &w)| x * w).sum(),
            Repr::Mlp(layout) => layout.forward(&self.params, s, None)[a],
        }
    }

    fn raw_values(&self, s: usize) -> Vec<T> {
        match &self.repr {
            Repr::Mlp(layout) => layout.forward(&self.params, s, None),
            _ => (0..self.num_actions).map(|a| self.raw(s, a)).collect(),
        }
    }

    /// `Q(s, a)`; counts one evaluation.
    pub fn evaluate(&self, s: usize, a: usize) -> Result<T> {
        self.check(s, a)?;
        self.count(1);
        Ok(self.raw(s, a))
    }

    /// `Q(s, ·)`; counts `num_actions` evaluations.
    pub fn values(&self, s: usize) -> Result<Vec<T>> {
        self.check(s, 0)?;
        self.count(self.num_actions);
        Ok(self.raw_values(s))
    }

    /// Argmax over actions, ties to the lowest id; counts `num_actions`.
    pub fn greedy_action(&self, s: usize) -> Result<usize> {
        Ok(argmax(&self.values(s)?))
    }

    /// `a* = argmax_a Q(s, a)` and `Q(s, a*)`; counts `num_actions + 1`
    /// evaluations but computes the action values once.
    pub fn greedy_with_value(&self, s: usize) -> Result<(usize, T)> {
        self.check(s, 0)?;
        self.count(self.num_actions + 1);
        let v = self.raw_values(s);
        let a = argmax(&v);
        Ok((a, v[a]))
    }

    /// Uncounted `Q(s, ·)` for acting and reporting.
    pub fn peek(&self, s: usize) -> Vec<T> {
        self.raw_values(s)
    }

    /// Uncounted full table, for reporting only.
    pub fn table(&self) -> Vec<T> {
        (0..self.num_states).flat_map(|s| self.raw_values(s)).collect()
    }

    /// `Q(s, a)` with what the backward pass needs; counts one evaluation.
    pub fn forward(&self, s: usize, a: usize) -> Result<Activation<T>> {
        self.check(s, a)?;
        self.count(1);
        Ok(match &self.repr {
            Repr::Mlp(layout) => {
                let mut tape = MlpTape::default();
                let value = layout.forward(&self.params, s, Some(&mut tape))[a];
                Activation {
                    s,
                    a,
                    value,
                    tape: Some(tape),
                }
            }
            _ => Activation {
                s,
                a,
                value: self.raw(s, a),
                tape: None,
            },
        })
    }

    /// Adds `coeff · ∂Q(s, a)/∂θ` for a recorded evaluation into `grads`.
    pub fn backward(&self, act: &Activation<T>, coeff: T, grads: &mut [T]) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::InvalidInput("gradient shape mismatch".into()));
        }
        match &self.repr {
            Repr::Tabular => grads[act.s * self.num_actions + act.a] += coeff,
            Repr::Linear(f) => {
                for (g, &x) in grads.iter_mut().zip(f.phi(act.s, act.a)) {
                    *g += coeff * x;
                }
            }
            Repr::Mlp(layout) => {
                let tape = act
                    .tape
                    .as_ref()
                    .ok_or_else(|| Error::InvalidInput("activation recorded without tape".into()))?;
                layout.backward(&self.params, tape, act.s, act.a, coeff, grads);
            }
        }
        Ok(())
    }

    /// Plain gradient step `θ ← θ - lr · grads`.
    pub fn apply_gradient(&mut self, grads: &[T], lr: T) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::InvalidInput("gradient shape mismatch".into()));
        }
        for (p, &g) in self.params.iter_mut().zip(grads) {
            *p -= lr * g;
        }
        Ok(())
    }

    fn shape_tag(&self) -> String {
        match &self.repr {
            Repr::Tabular => format!("{}x{}", self.num_states, self.num_actions),
            Repr::Linear(f) => format!("{}", f.dim()),
            Repr::Mlp(l) => l.sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("x"),
        }
    }

    /// CSV checkpoint: a `#` shape header, then `index,value` rows written
    /// in shortest round-trip form.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# kind={} states={} actions={} shape={} params={}",
            self.repr.kind(),
            self.num_states,
            self.num_actions,
            self.shape_tag(),
            self.params.len()
        )?;
        writeln!(w, "index,value")?;
        for (i, p) in self.params.iter().enumerate() {
            writeln!(w, "{i},{p}")?;
        }
        Ok(())
    }

    /// Loads parameters into a representation of the same shape.
    pub fn read_checkpoint<R: Read>(&mut self, r: R) -> Result<()> {
        let mut lines = BufReader::new(r).lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        let expected = format!(
            "# kind={} states={} actions={} shape={} params={}",
            self.repr.kind(),
            self.num_states,
            self.num_actions,
            self.shape_tag(),
            self.params.len()
        );
        if header.trim() != expected {
            return Err(Error::InvalidInput(format!("checkpoint header `{header}` does not match `{expected}`")));
        }
        if lines.next().transpose()?.as_deref().map(str::trim) != Some("index,value") {
            return Err(Error::InvalidInput("missing column header".into()));
        }
        let mut params = Vec::with_capacity(self.params.len());
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (i, v) = line
                .split_once(',')
                .ok_or_else(|| Error::InvalidInput(format!("bad checkpoint row `{line}`")))?;
            if i.trim().parse::<usize>().ok() != Some(params.len()) {
                return Err(Error::InvalidInput(format!("out-of-order checkpoint row `{line}`")));
            }
            params.push(
                v.trim()
                    .parse::<T>()
                    .map_err(|_| Error::InvalidInput(format!("bad value `{v}`")))?,
            );
        }
        if params.len() != self.params.len() {
            return Err(Error::InvalidInput("checkpoint parameter count mismatch".into()));
        }
        self.params = params;
        Ok(())
    }
}

/// Online network with a Polyak-averaged target copy.
#[derive(Debug, Clone)]
pub struct TargetPair<T: Scalar> {
    pub online: QFunction<T>,
    pub target: QFunction<T>,
    tau: T,
}

impl<T: Scalar> TargetPair<T> {
    /// Target starts as an exact copy of `online`.
    pub fn new(online: QFunction<T>, tau: T) -> Result<Self> {
        if !(tau > T::zero() && tau <= T::one()) {
            return Err(Error::InvalidInput(format!("tau {tau} outside (0, 1]")));
        }
        let target = online.clone();
        target.reset_eval_count();
        Ok(Self { online, target, tau })
    }

    pub fn from_parts(online: QFunction<T>, target: QFunction<T>, tau: T) -> Result<Self> {
        if !online.same_shape(&target) {
            return Err(Error::InvalidInput("online/target shapes differ".into()));
        }
        if !(tau > T::zero() && tau <= T::one()) {
            return Err(Error::InvalidInput(format!("tau {tau} outside (0, 1]")));
        }
        Ok(Self { online, target, tau })
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    /// `θ̄ ← τ θ + (1 - τ) θ̄`.
    pub fn soft_update(&mut self) -> Result<()> {
        if !self.online.same_shape(&self.target) {
            return Err(Error::InvalidInput("online/target shapes differ".into()));
        }
        if self.tau == T::one() {
            self.target.params.copy_from_slice(&self.online.params);
            return Ok(());
        }
        let keep = T::one() - self.tau;
        for (t, &o) in self.target.params.iter_mut().zip(&self.online.params) {
            *t = self.tau * o + keep * *t;
        }
        Ok(())
    }

    /// Evaluations made by both networks.
    pub fn eval_count(&self) -> u64 {
        self.online.eval_count() + self.target.eval_count()
    }
}
