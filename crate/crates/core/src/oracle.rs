//! Exact ground truth: value iteration, suboptimality gaps, and the biased
//! fixed point of the n-step backup under a fixed behavior policy.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::{argmax, BehaviorPolicy, FiniteMdp};
use crate::Scalar;

/// Default solver tolerance for oracles.
pub const ORACLE_TOL: f64 = 1e-10;

/// Optimal action values.
#[derive(Debug, Clone)]
pub struct QStar<T: Scalar> {
    num_actions: usize,
    /// Row-major `(s, a)`.
    pub q: Vec<T>,
    /// `v[s] = max_a q[s, a]`.
    pub v: Vec<T>,
    /// Sup-norm Bellman residual of `q`.
    pub residual: T,
    /// Sup-norm distance between successive iterates.
    pub trace: Vec<T>,
}

impl<T: Scalar> QStar<T> {
    pub fn q(&self, s: usize, a: usize) -> T {
        self.q[s * self.num_actions + a]
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_states(&self) -> usize {
        self.v.len()
    }

    /// Greedy action, ties to the lowest id.
    pub fn greedy(&self, s: usize) -> usize {
        argmax(&self.q[s * self.num_actions..][..self.num_actions])
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row<T> {
            s: usize,
            a: usize,
            q: T,
        }
        let mut wr = csv::Writer::from_writer(w);
        for (i, &q) in self.q.iter().enumerate() {
            wr.serialize(Row {
                s: i / self.num_actions,
                a: i % self.num_actions,
                q,
            })?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn state_values<T: Scalar>(mdp: &FiniteMdp<T>, q: &[T], v: &mut [T]) {
    let na = mdp.num_actions();
    for (s, vs) in v.iter_mut().enumerate() {
        *vs = if mdp.is_terminal(s) {
            T::zero()
        } else {
            q[s * na..][..na].iter().copied().fold(T::neg_infinity(), T::max)
        };
    }
}

/// One Bellman optimality backup of `v` into `out`.
fn backup<T: Scalar>(mdp: &FiniteMdp<T>, v: &[T], out: &mut [T]) {
    let na = mdp.num_actions();
    let gamma = mdp.gamma();
    for s in 0..mdp.num_states() {
        for a in 0..na {
            out[s * na + a] = if mdp.is_terminal(s) {
                T::zero()
            } else {
                let ev: T = mdp.successors(s, a).iter().map(|&(sn, p)| p * v[sn]).sum();
                mdp.reward(s, a) + gamma * ev
            };
        }
    }
}

fn sup_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).fold(T::zero(), T::max)
}

/// Iterates the Bellman optimality operator from zero until the sup-norm
/// residual is at most `tol`.
pub fn value_iteration<T: Scalar>(mdp: &FiniteMdp<T>, tol: T) -> Result<QStar<T>> {
    if !(tol > T::zero()) {
        return Err(Error::InvalidInput(format!("tolerance {tol} must be positive")));
    }
    let n = mdp.num_states() * mdp.num_actions();
    let mut q = vec![T::zero(); n];
    let mut next = vec![T::zero(); n];
    let mut v = vec![T::zero(); mdp.num_states()];
    let mut trace = Vec::new();
    loop {
        state_values(mdp, &q, &mut v);
        backup(mdp, &v, &mut next);
        let residual = sup_dist(&q, &next);
        if residual <= tol {
            return Ok(QStar {
                num_actions: mdp.num_actions(),
                q,
                v,
                residual,
                trace,
            });
        }
        trace.push(residual);
        std::mem::swap(&mut q, &mut next);
        // A γ-contraction cannot stall, but a tolerance below the
        // floating-point floor can.
        if trace.len() > 1_000_000 {
            return Err(Error::InvalidInput(format!("tolerance {tol} unreachable")));
        }
    }
}

/// `Q*(s, a*(s)) - Q*(s, a)`.
pub fn suboptimality_gap<T: Scalar>(qstar: &QStar<T>, s: usize, a: usize) -> T {
    qstar.v[s] - qstar.q(s, a)
}

/// Behavior-induced state chain `M(s, s') = Σ_b π(b|s) P(s'|s,b)` and
/// expected reward `r_π(s)`.
pub(crate) fn behavior_chain<T: Scalar>(mdp: &FiniteMdp<T>, behavior: &BehaviorPolicy<T>) -> (Vec<T>, Vec<T>) {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut m = vec![T::zero(); ns * ns];
    let mut r = vec![T::zero(); ns];
    for s in 0..ns {
        let pi = behavior.probs(s);
        for b in 0..na {
            if pi[b] == T::zero() {
                continue;
            }
            r[s] += pi[b] * mdp.reward(s, b);
            for &(sn, p) in mdp.successors(s, b) {
                m[s * ns + sn] += pi[b] * p;
            }
        }
    }
    (m, r)
}

fn mat_vec<T: Scalar>(m: &[T], x: &[T]) -> Vec<T> {
    let n = x.len();
    (0..n).map(|i| m[i * n..][..n].iter().zip(x).map(|(&a, &b)| a * b).sum()).collect()
}

fn mat_mul<T: Scalar>(a: &[T], b: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == T::zero() {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

/// Fixed point of
/// `T_n Q(s,a) = E[Σ_{u<n} γ^u r_u + γ^n max_a' Q(s_n, a') | s_0 = s, a_0 = a]`
/// where actions after the first follow `behavior`. The expectation is
/// expanded exactly through powers of the behavior-induced chain.
pub fn nstep_fixed_point<T: Scalar>(
    mdp: &FiniteMdp<T>,
    behavior: &BehaviorPolicy<T>,
    n: usize,
    tol: T,
) -> Result<Vec<T>> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    if !(tol > T::zero()) {
        return Err(Error::InvalidInput(format!("tolerance {tol} must be positive")));
    }
    if behavior.num_actions() != mdp.num_actions() {
        return Err(Error::InvalidInput("policy/MDP action count mismatch".into()));
    }
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let gamma = mdp.gamma();
    let (m, r_pi) = behavior_chain(mdp, behavior);
    // w = Σ_{u=0}^{n-2} γ^u M^u r_π and K = M^{n-1}.
    let mut w = vec![T::zero(); ns];
    let mut term = r_pi;
    let mut k = {
        let mut id = vec![T::zero(); ns * ns];
        for i in 0..ns {
            id[i * ns + i] = T::one();
        }
        id
    };
    let mut disc = T::one();
    for _ in 0..n - 1 {
        for (wi, &ti) in w.iter_mut().zip(&term) {
            *wi += disc * ti;
        }
        term = mat_vec(&m, &term);
        k = mat_mul(&m, &k, ns);
        disc *= gamma;
    }
    let tail = disc; // γ^{n-1}

    let mut q = vec![T::zero(); ns * na];
    let mut v = vec![T::zero(); ns];
    loop {
        state_values(mdp, &q, &mut v);
        let kv = mat_vec(&k, &v);
        let cont: Vec<T> = w.iter().zip(&kv).map(|(&a, &b)| a + tail * b).collect();
        let mut next = vec![T::zero(); ns * na];
        for s in 0..ns {
            if mdp.is_terminal(s) {
                continue;
            }
            for a in 0..na {
                let ev: T = mdp.successors(s, a).iter().map(|&(sn, p)| p * cont[sn]).sum();
                next[s * na + a] = mdp.reward(s, a) + gamma * ev;
            }
        }
        let d = sup_dist(&q, &next);
        q = next;
        if d <= tol {
            return Ok(q);
        }
    }
}
