//! TD, n-step TD and the two hinge-penalty families over one replayed
//! trajectory, computed from a single cache of network evaluations.
//!
//! Every loss here is a function of the online values `Q_θ(s_k, a_k)` only;
//! target quantities are constants. Each routine therefore also returns
//! `∂loss/∂Q_θ(s_k, a_k)`, which the caller chains through
//! [`QFunction::backward`].

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use crate::error::{Error, Result};
use crate::qfunc::{Activation, QFunction};
use crate::replay::TrajectoryBatch;
use crate::Scalar;

/// Network outputs for one trajectory row.
///
/// Entries that were not evaluated hold NaN; bootstrap values at a terminal
/// state are 0.
#[derive(Debug, Clone)]
pub struct EvalCache<T: Scalar> {
    /// `Q_θ(s_k, a_k)`.
    pub q_online_logged: Vec<T>,
    /// `Q_θ̄(s_k, a*_k)` for `k = 0..=valid_len`.
    pub q_target_greedy: Vec<T>,
    /// `a*_k = argmax_a Q_θ̄(s_k, a)`.
    pub greedy_actions: Vec<usize>,
    pub valid_len: usize,
    activations: Vec<Activation<T>>,
}

impl<T: Scalar> EvalCache<T> {
    /// The evaluations of one LQL update on a row: `Q_θ(s_k, a_k)` for
    /// `k < valid_len`, then greedy actions and `Q_θ̄(s_k, a*_k)` for
    /// `k ≤ valid_len`.
    pub fn build(batch: &TrajectoryBatch<T>, row: usize, online: &QFunction<T>, target: &QFunction<T>) -> Result<Self> {
        let v = batch.valid_len(row);
        Self::build_with(batch, row, online, target, v, 0..=v)
    }

    /// The evaluations of an n-step target at `k = 0`: one online value and
    /// one bootstrap at `s_m`, `m = min(n, valid_len)`.
    pub fn build_nstep(
        batch: &TrajectoryBatch<T>,
        row: usize,
        online: &QFunction<T>,
        target: &QFunction<T>,
        n: usize,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        let m = n.min(batch.valid_len(row));
        Self::build_with(batch, row, online, target, 1, m..=m)
    }

    fn build_with(
        batch: &TrajectoryBatch<T>,
        row: usize,
        online: &QFunction<T>,
        target: &QFunction<T>,
        online_upto: usize,
        targets: RangeInclusive<usize>,
    ) -> Result<Self> {
        let v = batch.valid_len(row);
        let mut activations = Vec::with_capacity(online_upto);
        for k in 0..online_upto {
            activations.push(online.forward(batch.state(row, k), batch.action(row, k))?);
        }
        let mut q_target_greedy = vec![T::nan(); v + 1];
        let mut greedy_actions = vec![usize::MAX; v + 1];
        for k in targets {
            let s = batch.state(row, k);
            let (a_star, value) = target.greedy_with_value(s)?;
            greedy_actions[k] = a_star;
            q_target_greedy[k] = if batch.is_terminal(row, k) { T::zero() } else { value };
        }
        let mut q_online_logged: Vec<T> = activations.iter().map(|a| a.value).collect();
        q_online_logged.resize(v, T::nan());
        Ok(Self {
            q_online_logged,
            q_target_greedy,
            greedy_actions,
            valid_len: v,
            activations,
        })
    }

    /// A cache from literal values (no gradient tape).
    pub fn from_values(q_online_logged: Vec<T>, q_target_greedy: Vec<T>) -> Result<Self> {
        let v = q_online_logged.len();
        if q_target_greedy.len() != v + 1 {
            return Err(Error::InvalidInput("need valid_len + 1 bootstrap values".into()));
        }
        Ok(Self {
            q_online_logged,
            q_target_greedy,
            greedy_actions: vec![usize::MAX; v + 1],
            valid_len: v,
            activations: Vec::new(),
        })
    }

    pub fn activations(&self) -> &[Activation<T>] {
        &self.activations
    }

    /// Chains `dq[k] · ∂Q_θ(s_k, a_k)/∂θ` into `grads`.
    pub fn backward(&self, online: &QFunction<T>, dq: &[T], grads: &mut [T]) -> Result<()> {
        if dq.len() > self.activations.len() {
            return Err(Error::InvalidInput("more coefficients than recorded evaluations".into()));
        }
        for (act, &c) in self.activations.iter().zip(dq) {
            if c != T::zero() {
                online.backward(act, c, grads)?;
            }
        }
        Ok(())
    }

    fn online(&self, k: usize) -> Result<T> {
        match self.q_online_logged.get(k) {
            Some(&q) if !q.is_nan() => Ok(q),
            _ => Err(Error::InvalidIndex(format!("Q_θ(s_{k}, a_{k}) not in cache"))),
        }
    }

    fn boot(&self, k: usize) -> Result<T> {
        match self.q_target_greedy.get(k) {
            Some(&q) if !q.is_nan() => Ok(q),
            _ => Err(Error::InvalidIndex(format!("Q_θ̄(s_{k}, a*_{k}) not in cache"))),
        }
    }
}

fn check_row<T: Scalar>(batch: &TrajectoryBatch<T>, row: usize, cache: &EvalCache<T>) -> Result<()> {
    if row >= batch.batch_size() || cache.valid_len != batch.valid_len(row) {
        return Err(Error::InvalidInput(format!("cache does not belong to row {row}")));
    }
    Ok(())
}

/// A loss value and its derivative with respect to `Q_θ(s_k, a_k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term<T> {
    pub value: T,
    pub dq: T,
}

/// `(Q_θ(s_k,a_k) - [r_k + γ Q_θ̄(s_{k+1}, a*_{k+1})])²`.
pub fn td_loss<T: Scalar>(batch: &TrajectoryBatch<T>, row: usize, cache: &EvalCache<T>, k: usize) -> Result<Term<T>> {
    check_row(batch, row, cache)?;
    if k >= cache.valid_len {
        return Err(Error::InvalidIndex(format!("k = {k} ≥ valid length {}", cache.valid_len)));
    }
    let y = batch.reward(row, k) + batch.powers().get(1) * cache.boot(k + 1)?;
    let diff = cache.online(k)? - y;
    Ok(Term {
        value: diff * diff,
        dq: T::two() * diff,
    })
}

/// `(Q_θ(s_k,a_k) - [G_{k:k+m} + γ^m Q_θ̄(s_{k+m}, a*_{k+m})])²` with
/// `m = min(n, valid_len - k)`.
pub fn nstep_td_loss<T: Scalar>(
    batch: &TrajectoryBatch<T>,
    row: usize,
    cache: &EvalCache<T>,
    k: usize,
    n: usize,
) -> Result<Term<T>> {
    check_row(batch, row, cache)?;
    if n == 0 {
        return Err(Error::InvalidIndex("n must be at least 1".into()));
    }
    if k >= cache.valid_len {
        return Err(Error::InvalidIndex(format!("k = {k} ≥ valid length {}", cache.valid_len)));
    }
    let m = n.min(cache.valid_len - k);
    let pow = batch.powers();
    let mut g = T::zero();
    for u in 0..m {
        g += pow.get(u) * batch.reward(row, k + u);
    }
    let y = g + pow.get(m) * cache.boot(k + m)?;
    let diff = cache.online(k)? - y;
    Ok(Term {
        value: diff * diff,
        dq: T::two() * diff,
    })
}

/// `F(k) = {k+2, …, valid_len}`.
pub fn future_index_set(k: usize, valid_len: usize) -> RangeInclusive<usize> {
    if valid_len < k + 2 {
        #[allow(clippy::reversed_empty_ranges)]
        return 1..=0;
    }
    k + 2..=valid_len
}

/// `P(k) = {1, …, k}`, including the same-state term `i = k`.
pub fn past_index_set(k: usize) -> RangeInclusive<usize> {
    1..=k
}

/// `[G_{k:ℓ} + γ^{ℓ-k} Q_θ̄(s_ℓ, a*_ℓ) - Q_θ(s_k, a_k)]₊²`.
pub fn lb_penalty<T: Scalar>(
    batch: &TrajectoryBatch<T>,
    row: usize,
    cache: &EvalCache<T>,
    k: usize,
    l: usize,
) -> Result<Term<T>> {
    check_row(batch, row, cache)?;
    if k >= cache.valid_len || !future_index_set(k, cache.valid_len).contains(&l) {
        return Err(Error::InvalidIndices(format!("ℓ = {l} ∉ F({k})")));
    }
    let inner = batch.g(row, k, l) + batch.powers().get(l - k) * cache.boot(l)? - cache.online(k)?;
    let h = inner.relu();
    Ok(Term {
        value: h * h,
        dq: -T::two() * h,
    })
}

/// `[G_{i:k} + γ^{k-i} Q_θ(s_k, a_k) - Q_θ̄(s_i, a*_i)]₊²`.
pub fn ub_penalty<T: Scalar>(
    batch: &TrajectoryBatch<T>,
    row: usize,
    cache: &EvalCache<T>,
    i: usize,
    k: usize,
) -> Result<Term<T>> {
    check_row(batch, row, cache)?;
    if k >= cache.valid_len || !past_index_set(k).contains(&i) {
        return Err(Error::InvalidIndices(format!("i = {i} ∉ P({k})")));
    }
    let disc = batch.powers().get(k - i);
    let inner = batch.g(row, i, k) + disc * cache.online(k)? - cache.boot(i)?;
    let h = inner.relu();
    Ok(Term {
        value: h * h,
        dq: T::two() * h * disc,
    })
}

/// Mean of [`lb_penalty`] over `F(k)`; 0 when `F(k)` is empty.
pub fn lb_aggregate<T: Scalar>(batch: &TrajectoryBatch<T>, row: usize, cache: &EvalCache<T>, k: usize) -> Result<Term<T>> {
    if k >= cache.valid_len {
        return Err(Error::InvalidIndex(format!("k = {k} ≥ valid length {}", cache.valid_len)));
    }
    mean_of(future_index_set(k, cache.valid_len).map(|l| lb_penalty(batch, row, cache, k, l)))
}

/// Mean of [`ub_penalty`] over `P(k)`; 0 when `P(k)` is empty.
pub fn ub_aggregate<T: Scalar>(batch: &TrajectoryBatch<T>, row: usize, cache: &EvalCache<T>, k: usize) -> Result<Term<T>> {
    if k >= cache.valid_len {
        return Err(Error::InvalidIndex(format!("k = {k} ≥ valid length {}", cache.valid_len)));
    }
    mean_of(past_index_set(k).map(|i| ub_penalty(batch, row, cache, i, k)))
}

fn mean_of<T: Scalar>(terms: impl Iterator<Item = Result<Term<T>>>) -> Result<Term<T>> {
    let (mut value, mut dq, mut n) = (T::zero(), T::zero(), 0usize);
    for t in terms {
        let t = t?;
        value += t.value;
        dq += t.dq;
        n += 1;
    }
    if n == 0 {
        return Ok(Term {
            value: T::zero(),
            dq: T::zero(),
        });
    }
    let inv = T::one() / T::of_usize(n);
    Ok(Term {
        value: value * inv,
        dq: dq * inv,
    })
}

/// Loss terms at one index `k`, or averaged over a trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossBreakdown<T: Scalar> {
    pub td: T,
    pub lb: T,
    pub ub: T,
    pub total: T,
    /// `(k, ℓ) → δ_LB`, filled only when pair collection is requested.
    pub per_pair_lb: BTreeMap<(usize, usize), T>,
    /// `(i, k) → δ_UB`, filled only when pair collection is requested.
    pub per_pair_ub: BTreeMap<(usize, usize), T>,
}

/// Hinge weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HingeWeights<T> {
    pub lambda_ub: T,
    pub lambda_lb: T,
}

impl<T: Scalar> HingeWeights<T> {
    pub fn new(lambda_ub: T, lambda_lb: T) -> Result<Self> {
        if !(lambda_ub >= T::zero() && lambda_lb >= T::zero()) {
            return Err(Error::InvalidConfig(format!(
                "hinge weights must be nonnegative, got λ_UB = {lambda_ub}, λ_LB = {lambda_lb}"
            )));
        }
        Ok(Self { lambda_ub, lambda_lb })
    }
}

/// `ℓ_TD(k) + λ_UB ℓ_UB(k) + λ_LB ℓ_LB(k)` and its derivative in
/// `Q_θ(s_k, a_k)`.
pub fn lql_loss<T: Scalar>(
    batch: &TrajectoryBatch<T>,
    row: usize,
    cache: &EvalCache<T>,
    k: usize,
    weights: HingeWeights<T>,
    collect_pairs: bool,
) -> Result<(LossBreakdown<T>, T)> {
    let td = td_loss(batch, row, cache, k)?;
    let mut out = LossBreakdown::default();
    let lb = if collect_pairs {
        let mut parts = Vec::new();
        for l in future_index_set(k, cache.valid_len) {
            let t = lb_penalty(batch, row, cache, k, l)?;
            out.per_pair_lb.insert((k, l), t.value);
            parts.push(Ok(t));
        }
        mean_of(parts.into_iter())?
    } else {
        lb_aggregate(batch, row, cache, k)?
    };
    let ub = if collect_pairs {
        let mut parts = Vec::new();
        for i in past_index_set(k) {
            let t = ub_penalty(batch, row, cache, i, k)?;
            out.per_pair_ub.insert((i, k), t.value);
            parts.push(Ok(t));
        }
        mean_of(parts.into_iter())?
    } else {
        ub_aggregate(batch, row, cache, k)?
    };
    out.td = td.value;
    out.lb = lb.value;
    out.ub = ub.value;
    out.total = td.value + weights.lambda_ub * ub.value + weights.lambda_lb * lb.value;
    let dq = td.dq + weights.lambda_ub * ub.dq + weights.lambda_lb * lb.dq;
    Ok((out, dq))
}

/// Trajectory loss: mean of [`lql_loss`] over `k < valid_len`, with
/// per-index coefficients `∂/∂Q_θ(s_k, a_k)` of that mean.
pub fn lql_trajectory_loss<T: Scalar>(
    batch: &TrajectoryBatch<T>,
    row: usize,
    cache: &EvalCache<T>,
    weights: HingeWeights<T>,
    collect_pairs: bool,
) -> Result<(LossBreakdown<T>, Vec<T>)> {
    check_row(batch, row, cache)?;
    let v = cache.valid_len;
    let inv = T::one() / T::of_usize(v);
    let mut out = LossBreakdown::default();
    let mut dq = Vec::with_capacity(v);
    for k in 0..v {
        let (b, d) = lql_loss(batch, row, cache, k, weights, collect_pairs)?;
        out.td += b.td;
        out.lb += b.lb;
        out.ub += b.ub;
        out.total += b.total;
        out.per_pair_lb.extend(b.per_pair_lb);
        out.per_pair_ub.extend(b.per_pair_ub);
        dq.push(d * inv);
    }
    out.td *= inv;
    out.lb *= inv;
    out.ub *= inv;
    out.total *= inv;
    Ok((out, dq))
}

/// 1-step TD averaged over every index of a sampled trajectory.
pub fn td_trajectory_loss<T: Scalar>(batch: &TrajectoryBatch<T>, row: usize, cache: &EvalCache<T>) -> Result<(T, Vec<T>)> {
    check_row(batch, row, cache)?;
    let v = cache.valid_len;
    let inv = T::one() / T::of_usize(v);
    let mut total = T::zero();
    let mut dq = Vec::with_capacity(v);
    for k in 0..v {
        let t = td_loss(batch, row, cache, k)?;
        total += t.value;
        dq.push(t.dq * inv);
    }
    Ok((total * inv, dq))
}
