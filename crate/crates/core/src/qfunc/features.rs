use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

/// Dense feature table `φ(s, a) ∈ R^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct FeatureMap<T: Scalar> {
    num_states: usize,
    num_actions: usize,
    dim: usize,
    table: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn from_table(num_states: usize, num_actions: usize, dim: usize, table: Vec<T>) -> Result<Self> {
        if dim == 0 || table.len() != num_states * num_actions * dim {
            return Err(Error::InvalidInput(format!(
                "feature table of {} entries for {num_states}×{num_actions}×{dim}",
                table.len()
            )));
        }
        Ok(Self {
            num_states,
            num_actions,
            dim,
            table,
        })
    }

    pub fn from_fn(num_states: usize, num_actions: usize, dim: usize, f: impl Fn(usize, usize) -> Vec<T>) -> Result<Self> {
        let mut table = Vec::with_capacity(num_states * num_actions * dim);
        for s in 0..num_states {
            for a in 0..num_actions {
                let phi = f(s, a);
                if phi.len() != dim {
                    return Err(Error::InvalidInput(format!("φ({s},{a}) has {} entries, expected {dim}", phi.len())));
                }
                table.extend(phi);
            }
        }
        Self::from_table(num_states, num_actions, dim, table)
    }

    /// One indicator per `(s, a)`: the linear model is then a table.
    pub fn one_hot(num_states: usize, num_actions: usize) -> Self {
        let dim = num_states * num_actions;
        Self::from_fn(num_states, num_actions, dim, |s, a| {
            let mut v = vec![T::zero(); dim];
            v[s * num_actions + a] = T::one();
            v
        })
        .expect("consistent shape")
    }

    /// State aggregation with per-state scaling: `φ(s, a) = scale[s] ·
    /// e_{(group[s], a)}`. States of one group share a weight per action.
    /// Non-uniform scales inside a group break the averaging property of
    /// plain aggregation.
    pub fn aliased(num_actions: usize, group: &[usize], scale: &[T]) -> Result<Self> {
        if group.len() != scale.len() {
            return Err(Error::InvalidInput("group/scale length mismatch".into()));
        }
        let groups = group.iter().copied().max().map_or(0, |g| g + 1);
        let dim = groups * num_actions;
        Self::from_fn(group.len(), num_actions, dim, |s, a| {
            let mut v = vec![T::zero(); dim];
            v[group[s] * num_actions + a] = scale[s];
            v
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn phi(&self, s: usize, a: usize) -> &[T] {
        &self.table[(s * self.num_actions + a) * self.dim..][..self.dim]
    }
}
