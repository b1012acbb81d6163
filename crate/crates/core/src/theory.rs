//! False penalties of the hinge terms at `Q = Q*`: violation signals,
//! Bellman noise, horizon-free constants, Cantelli bounds, exact mean gaps
//! and Monte-Carlo estimates.
//!
//! Trajectories for estimation start at `mdp.start()`, follow the behavior
//! policy for a fixed burn-in horizon `B`, and position `i = B` is the
//! first state of the sampled window. Terminal states absorb with reward 0.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::derive_seed;
use crate::error::{Error, Result};
use crate::hinge::Side;
use crate::mdp::{sample_successor, BehaviorPolicy, FiniteMdp};
use crate::oracle::{behavior_chain, suboptimality_gap, QStar};
use crate::Scalar;

/// Bound constants from `(r_max, γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants<T> {
    pub r_max: T,
    pub gamma: T,
    /// `r_max / (1 - γ)`.
    pub q_max: T,
    /// `r_max + (1 + γ) q_max + 2 q_max`.
    pub m: T,
    /// `(m / (1 - γ))²`.
    pub v_inf: T,
}

impl<T: Scalar> TheoryConstants<T> {
    pub fn new(r_max: T, gamma: T) -> Result<Self> {
        if !(gamma >= T::zero() && gamma < T::one()) || !(r_max >= T::zero()) {
            return Err(Error::InvalidInput(format!("need r_max ≥ 0 and γ ∈ [0,1), got {r_max}, {gamma}")));
        }
        let one = T::one();
        let q_max = r_max / (one - gamma);
        let m = r_max + (one + gamma) * q_max + T::two() * q_max;
        let v = m / (one - gamma);
        Ok(Self {
            r_max,
            gamma,
            q_max,
            m,
            v_inf: v * v,
        })
    }

    pub fn of_mdp(mdp: &FiniteMdp<T>) -> Result<Self> {
        Self::new(mdp.r_max(), mdp.gamma())
    }
}

/// A behavior path: `actions.len() == states.len()` (an action is logged
/// at the last state too) and `rewards.len() == states.len() - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path<T> {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<T>,
}

impl<T: Scalar> Path<T> {
    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    fn check(&self, i: usize, l: usize) -> Result<()> {
        if self.states.len() != self.rewards.len() + 1 || self.actions.len() != self.states.len() {
            return Err(Error::InvalidInput("malformed path".into()));
        }
        if i + l > self.len() {
            return Err(Error::InvalidIndices(format!("i + L = {} beyond path length {}", i + l, self.len())));
        }
        Ok(())
    }

    /// `G_{i:i+L}` by direct summation.
    pub fn discounted_return(&self, gamma: T, i: usize, l: usize) -> T {
        let mut g = T::zero();
        let mut d = T::one();
        for k in 0..l {
            g += d * self.rewards[i + k];
            d *= gamma;
        }
        g
    }
}

/// `ε = r + γ V*(s') - Q*(s, a)`.
pub fn bellman_noise<T: Scalar>(mdp: &FiniteMdp<T>, qstar: &QStar<T>, s: usize, a: usize, s_next: usize, r: T) -> Result<T> {
    if s >= mdp.num_states() || a >= mdp.num_actions() || s_next >= mdp.num_states() || mdp.prob(s, a, s_next) <= T::zero()
    {
        return Err(Error::InvalidInput(format!("({s}, {a}) → {s_next} is not a supported transition")));
    }
    Ok(r + mdp.gamma() * qstar.v[s_next] - qstar.q(s, a))
}

/// `Z_L = G_{i:i+L} + γ^L Q*(s_{i+L}, a*) - Q*(s_i, a_i)`.
pub fn lb_violation_signal<T: Scalar>(mdp: &FiniteMdp<T>, path: &Path<T>, qstar: &QStar<T>, i: usize, l: usize) -> Result<T> {
    path.check(i, l)?;
    let g = path.discounted_return(mdp.gamma(), i, l);
    Ok(g + mdp.gamma().powi(l as i32) * qstar.v[path.states[i + l]] - qstar.q(path.states[i], path.actions[i]))
}

/// `U_L = G_{i:i+L} + γ^L Q*(s_{i+L}, a_{i+L}) - Q*(s_i, a*)`.
pub fn ub_violation_signal<T: Scalar>(mdp: &FiniteMdp<T>, path: &Path<T>, qstar: &QStar<T>, i: usize, l: usize) -> Result<T> {
    path.check(i, l)?;
    let g = path.discounted_return(mdp.gamma(), i, l);
    Ok(g + mdp.gamma().powi(l as i32) * qstar.q(path.states[i + l], path.actions[i + l]) - qstar.v[path.states[i]])
}

fn noise_at<T: Scalar>(mdp: &FiniteMdp<T>, path: &Path<T>, qstar: &QStar<T>, j: usize) -> Result<T> {
    bellman_noise(mdp, qstar, path.states[j], path.actions[j], path.states[j + 1], path.rewards[j])
}

fn gap_at<T: Scalar>(path: &Path<T>, qstar: &QStar<T>, j: usize) -> T {
    suboptimality_gap(qstar, path.states[j], path.actions[j])
}

/// `Σ_{k<L} γ^k ε_{i+k} - Σ_{j=1}^{L-1} γ^j Δ_{i+j}`.
pub fn lb_violation_telescoped<T: Scalar>(mdp: &FiniteMdp<T>, path: &Path<T>, qstar: &QStar<T>, i: usize, l: usize) -> Result<T> {
    path.check(i, l)?;
    let gamma = mdp.gamma();
    let (mut noise, mut gaps, mut d) = (T::zero(), T::zero(), T::one());
    for k in 0..l {
        noise += d * noise_at(mdp, path, qstar, i + k)?;
        if k >= 1 {
            gaps += d * gap_at(path, qstar, i + k);
        }
        d *= gamma;
    }
    Ok(noise - gaps)
}

/// `Σ_{k<L} γ^k ε_{i+k} - Σ_{k=0}^{L} γ^k Δ_{i+k}`.
pub fn ub_violation_telescoped<T: Scalar>(mdp: &FiniteMdp<T>, path: &Path<T>, qstar: &QStar<T>, i: usize, l: usize) -> Result<T> {
    path.check(i, l)?;
    let gamma = mdp.gamma();
    let (mut noise, mut gaps, mut d) = (T::zero(), T::zero(), T::one());
    for k in 0..=l {
        if k < l {
            noise += d * noise_at(mdp, path, qstar, i + k)?;
        }
        gaps += d * gap_at(path, qstar, i + k);
        d *= gamma;
    }
    Ok(noise - gaps)
}

/// `V / (V + μ²)`.
pub fn cantelli_prob_bound<T: Scalar>(v: T, mu: T) -> Result<T> {
    check_cantelli(v, mu)?;
    Ok(v / (v + mu * mu))
}

/// `V / (2 (√(V + μ²) + μ))`.
pub fn cantelli_hinge_bound<T: Scalar>(v: T, mu: T) -> Result<T> {
    check_cantelli(v, mu)?;
    Ok(v / (T::two() * ((v + mu * mu).sqrt() + mu)))
}

fn check_cantelli<T: Scalar>(v: T, mu: T) -> Result<()> {
    if !(v > T::zero()) {
        return Err(Error::InvalidInput(format!("variance bound {v} must be positive")));
    }
    if !(mu >= T::zero()) {
        return Err(Error::InvalidInput(format!("mean gap {mu} must be nonnegative")));
    }
    Ok(())
}

/// `(Pr bound, E[hinge²] bound)` for one side. The LB side uses `μ = γ Δ̄`,
/// the UB side `μ = Δ̄`. Neither depends on `L`.
pub fn false_penalty_bounds<T: Scalar>(c: &TheoryConstants<T>, delta_bar: T, side: Side) -> Result<(T, T)> {
    let mu = match side {
        Side::Lb => c.gamma * delta_bar,
        Side::Ub => delta_bar,
    };
    let prob = cantelli_prob_bound(c.v_inf, mu)?;
    let sq = c.v_inf.sqrt() * cantelli_hinge_bound(c.v_inf, mu)?;
    Ok((prob, sq))
}

/// State distribution after `steps` behavior steps from `mdp.start()`.
pub fn occupancy<T: Scalar>(mdp: &FiniteMdp<T>, behavior: &BehaviorPolicy<T>, steps: usize) -> Vec<T> {
    let ns = mdp.num_states();
    let (m, _) = behavior_chain(mdp, behavior);
    let mut d = vec![T::zero(); ns];
    d[mdp.start()] = T::one();
    for _ in 0..steps {
        let mut next = vec![T::zero(); ns];
        for s in 0..ns {
            if d[s] == T::zero() {
                continue;
            }
            for sn in 0..ns {
                next[sn] += d[s] * m[s * ns + sn];
            }
        }
        d = next;
    }
    d
}

/// `E[Δ_{i+j}]` with `i` at the burn-in horizon.
pub fn expected_gap<T: Scalar>(mdp: &FiniteMdp<T>, behavior: &BehaviorPolicy<T>, qstar: &QStar<T>, steps: usize) -> T {
    occupancy(mdp, behavior, steps)
        .iter()
        .enumerate()
        .map(|(s, &ds)| {
            let pi = behavior.probs(s);
            ds * (0..mdp.num_actions()).map(|a| pi[a] * suboptimality_gap(qstar, s, a)).sum::<T>()
        })
        .sum()
}

/// `Δ̄_LB = E[Δ_{i+1}]`, `Δ̄_UB = E[Δ_i]`.
pub fn exact_delta_bar<T: Scalar>(
    mdp: &FiniteMdp<T>,
    behavior: &BehaviorPolicy<T>,
    qstar: &QStar<T>,
    side: Side,
    burn_in: usize,
) -> T {
    match side {
        Side::Lb => expected_gap(mdp, behavior, qstar, burn_in + 1),
        Side::Ub => expected_gap(mdp, behavior, qstar, burn_in),
    }
}

/// Exact `-E[Z_L] = Σ_{j=1}^{L-1} γ^j E[Δ_{i+j}]` (LB) or
/// `-E[U_L] = Σ_{k=0}^{L} γ^k E[Δ_{i+k}]` (UB).
pub fn exact_mu<T: Scalar>(
    mdp: &FiniteMdp<T>,
    behavior: &BehaviorPolicy<T>,
    qstar: &QStar<T>,
    side: Side,
    l: usize,
    burn_in: usize,
) -> T {
    let range = match side {
        Side::Lb => 1..l,
        Side::Ub => 0..l + 1,
    };
    range
        .map(|j| mdp.gamma().powi(j as i32) * expected_gap(mdp, behavior, qstar, burn_in + j))
        .sum()
}

/// Signals at most this fraction of `max(q_max, 1)` count as zero.
pub const VIOLATION_TOL: f64 = 1e-10;

/// Monte-Carlo false-penalty estimate for one side and horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FalsePenaltyEstimate {
    pub side: Side,
    pub l: usize,
    pub gamma: f64,
    pub trials: usize,
    pub burn_in: usize,
    pub prob_violation: f64,
    pub prob_se: f64,
    pub mean_sq_penalty: f64,
    pub sq_se: f64,
    /// Sample mean of the negated signal (`μ_D` / `μ_U` estimate).
    pub mean_neg_signal: f64,
    pub mean_neg_signal_se: f64,
    pub delta_bar: f64,
    pub prob_bound: f64,
    pub sq_bound: f64,
}

impl FalsePenaltyEstimate {
    /// Estimates sit under their bounds at the 3-sigma level.
    pub fn within_bounds(&self) -> bool {
        self.prob_violation + 3.0 * self.prob_se <= self.prob_bound && self.mean_sq_penalty + 3.0 * self.sq_se <= self.sq_bound
    }
}

/// Samples one window of `l` transitions (plus the logged action at its
/// end) after `burn_in` behavior steps.
pub fn sample_path<T: Scalar, R: rand::Rng + ?Sized>(
    mdp: &FiniteMdp<T>,
    behavior: &BehaviorPolicy<T>,
    burn_in: usize,
    l: usize,
    rng: &mut R,
) -> Path<T> {
    let mut s = mdp.start();
    for _ in 0..burn_in {
        let a = behavior.sample(s, rng);
        s = sample_successor(mdp.successors(s, a), rng);
    }
    let mut path = Path {
        states: Vec::with_capacity(l + 1),
        actions: Vec::with_capacity(l + 1),
        rewards: Vec::with_capacity(l),
    };
    for _ in 0..l {
        let a = behavior.sample(s, rng);
        path.states.push(s);
        path.actions.push(a);
        path.rewards.push(mdp.reward(s, a));
        s = sample_successor(mdp.successors(s, a), rng);
    }
    path.states.push(s);
    path.actions.push(behavior.sample(s, rng));
    path
}

/// Estimates for both sides from `trials` independent windows. Trial `t`
/// uses the seed `derive_seed(seed, cell, t)`, so results do not depend on
/// thread scheduling.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_false_penalty<T: Scalar>(
    mdp: &FiniteMdp<T>,
    behavior: &BehaviorPolicy<T>,
    qstar: &QStar<T>,
    l: usize,
    trials: usize,
    burn_in: usize,
    seed: u64,
    cell: u64,
) -> Result<[FalsePenaltyEstimate; 2]> {
    if trials == 0 || l == 0 {
        return Err(Error::InvalidInput("need at least one trial and L ≥ 1".into()));
    }
    if behavior.num_actions() != mdp.num_actions() {
        return Err(Error::InvalidInput("policy/MDP action count mismatch".into()));
    }
    let signals: Vec<(f64, f64)> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, cell, t));
            let path = sample_path(mdp, behavior, burn_in, l, &mut rng);
            let z = lb_violation_signal(mdp, &path, qstar, 0, l).map(|x| x.to_f64_lossy());
            let u = ub_violation_signal(mdp, &path, qstar, 0, l).map(|x| x.to_f64_lossy());
            Ok((z?, u?))
        })
        .collect::<Result<_>>()?;
    let c = TheoryConstants::of_mdp(mdp)?;
    // Signals that are zero in exact arithmetic can round to ±1e-17.
    let tol = VIOLATION_TOL * c.q_max.to_f64_lossy().max(1.0);
    let mut out = Vec::with_capacity(2);
    for side in [Side::Lb, Side::Ub] {
        let xs: Vec<f64> = signals
            .iter()
            .map(|&(z, u)| if side == Side::Lb { z } else { u })
            .collect();
        let (p, p_se) = mean_se(xs.iter().map(|&x| if x > tol { 1.0 } else { 0.0 }));
        let (sq, sq_se) = mean_se(xs.iter().map(|&x| if x > tol { x * x } else { 0.0 }));
        let (neg, neg_se) = mean_se(xs.iter().map(|&x| -x));
        let delta_bar = exact_delta_bar(mdp, behavior, qstar, side, burn_in);
        let (pb, sb) = false_penalty_bounds(&c, delta_bar, side)?;
        out.push(FalsePenaltyEstimate {
            side,
            l,
            gamma: mdp.gamma().to_f64_lossy(),
            trials,
            burn_in,
            prob_violation: p,
            prob_se: p_se,
            mean_sq_penalty: sq,
            sq_se,
            mean_neg_signal: neg,
            mean_neg_signal_se: neg_se,
            delta_bar: delta_bar.to_f64_lossy(),
            prob_bound: pb.to_f64_lossy(),
            sq_bound: sb.to_f64_lossy(),
        });
    }
    Ok([out[0], out[1]])
}

/// Sample mean and its standard error.
fn mean_se(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
    for x in xs {
        n += 1;
        let d = x - mean;
        mean += d / n as f64;
        m2 += d * (x - mean);
    }
    if n < 2 {
        return (mean, 0.0);
    }
    let var = m2 / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// One CSV row of a theory report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub side: Side,
    #[serde(rename = "L")]
    pub l: usize,
    pub gamma: f64,
    pub sigma: f64,
    pub trials: usize,
    pub prob_est: f64,
    pub prob_se: f64,
    pub prob_bound: f64,
    pub sq_est: f64,
    pub sq_se: f64,
    pub sq_bound: f64,
    pub delta_bar: f64,
}

impl TheoryRow {
    pub fn new(e: &FalsePenaltyEstimate, sigma: f64) -> Self {
        Self {
            side: e.side,
            l: e.l,
            gamma: e.gamma,
            sigma,
            trials: e.trials,
            prob_est: e.prob_violation,
            prob_se: e.prob_se,
            prob_bound: e.prob_bound,
            sq_est: e.mean_sq_penalty,
            sq_se: e.sq_se,
            sq_bound: e.sq_bound,
            delta_bar: e.delta_bar,
        }
    }
}

pub fn write_theory_csv<W: Write>(rows: &[TheoryRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
