use serde::{Deserialize, Serialize};

use super::QFunction;
use crate::error::{Error, Result};
use crate::Scalar;

/// Optimizer selection with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerConfig {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerConfig {
    pub fn adam() -> Self {
        OptimizerConfig::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    beta1: T,
    beta2: T,
    eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

#[derive(Debug, Clone)]
pub enum Optimizer<T: Scalar> {
    Sgd { lr: T },
    Adam { lr: T, state: Adam<T> },
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(cfg: OptimizerConfig, lr: T, num_params: usize) -> Self {
        match cfg {
            OptimizerConfig::Sgd => Optimizer::Sgd { lr },
            OptimizerConfig::Adam { beta1, beta2, eps } => Optimizer::Adam {
                lr,
                state: Adam {
                    beta1: T::of(beta1),
                    beta2: T::of(beta2),
                    eps: T::of(eps),
                    m: vec![T::zero(); num_params],
                    v: vec![T::zero(); num_params],
                    t: 0,
                },
            },
        }
    }

    pub fn step(&mut self, q: &mut QFunction<T>, grads: &[T]) -> Result<()> {
        match self {
            Optimizer::Sgd { lr } => q.apply_gradient(grads, *lr),
            Optimizer::Adam { lr, state } => {
                if grads.len() != state.m.len() || grads.len() != q.num_params() {
                    return Err(Error::InvalidInput("gradient shape mismatch".into()));
                }
                state.t += 1;
                let bc1 = T::one() - state.beta1.powi(state.t);
                let bc2 = T::one() - state.beta2.powi(state.t);
                let params = q.params_mut();
                for i in 0..grads.len() {
                    let g = grads[i];
                    state.m[i] = state.beta1 * state.m[i] + (T::one() - state.beta1) * g;
                    state.v[i] = state.beta2 * state.v[i] + (T::one() - state.beta2) * g * g;
                    let m_hat = state.m[i] / bc1;
                    let v_hat = state.v[i] / bc2;
                    params[i] -= *lr * m_hat / (v_hat.sqrt() + state.eps);
                }
                Ok(())
            }
        }
    }
}
