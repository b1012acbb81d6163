//! Fully connected network over a one-hot state encoding with one output
//! per action. Backpropagation is written out by hand.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationFn {
    /// Tanh approximation of GELU.
    Gelu,
    Tanh,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

impl ActivationFn {
    #[inline]
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            ActivationFn::Gelu => {
                let u = T::of(SQRT_2_OVER_PI) * (x + T::of(GELU_C) * x * x * x);
                T::of(0.5) * x * (T::one() + u.tanh())
            }
            ActivationFn::Tanh => x.tanh(),
        }
    }

    #[inline]
    fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            ActivationFn::Gelu => {
                let c = T::of(SQRT_2_OVER_PI);
                let u = c * (x + T::of(GELU_C) * x * x * x);
                let t = u.tanh();
                let du = c * (T::one() + T::of(3.0 * GELU_C) * x * x);
                T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * du
            }
            ActivationFn::Tanh => {
                let t = x.tanh();
                T::one() - t * t
            }
        }
    }
}

/// Layer sizes `[num_states, hidden..., num_actions]` and the offsets of
/// each `(W, b)` pair in the flat parameter vector. `W` is row-major
/// `(out, in)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpLayout {
    pub sizes: Vec<usize>,
    pub activation: ActivationFn,
    offsets: Vec<usize>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTape<T> {
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<T>>,
    /// Post-activations of each hidden layer.
    post: Vec<Vec<T>>,
}

impl MlpLayout {
    pub fn new(sizes: Vec<usize>, activation: ActivationFn) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut o = 0;
        for w in sizes.windows(2) {
            offsets.push(o);
            o += w[0] * w[1] + w[1];
        }
        offsets.push(o);
        Self {
            sizes,
            activation,
            offsets,
        }
    }

    pub fn num_params(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// He-scaled normal weights for hidden layers, `1/√fan_in` for the
    /// output layer, zero biases.
    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let mut p = vec![T::zero(); self.num_params()];
        for l in 0..self.layers() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let gain = if l + 1 == self.layers() { 1.0 } else { 2.0 };
            let std = (gain / fan_in as f64).sqrt();
            for w in &mut p[self.offsets[l]..][..fan_in * fan_out] {
                let z: f64 = rng.sample(StandardNormal);
                *w = T::of(z * std);
            }
        }
        p
    }

    /// Action values at state `s`, optionally recording a tape.
    pub fn forward<T: Scalar>(&self, params: &[T], s: usize, tape: Option<&mut MlpTape<T>>) -> Vec<T> {
        let layers = self.layers();
        let mut pre_all = Vec::with_capacity(layers - 1);
        let mut post_all = Vec::with_capacity(layers - 1);
        // First layer over a one-hot input is a column lookup.
        let (n_in, n_out) = (self.sizes[0], self.sizes[1]);
        let w = &params[self.offsets[0]..][..n_in * n_out];
        let b = &params[self.offsets[0] + n_in * n_out..][..n_out];
        let mut x: Vec<T> = (0..n_out).map(|j| w[j * n_in + s] + b[j]).collect();
        for l in 1..layers {
            let pre = x;
            let post: Vec<T> = pre.iter().map(|&z| self.activation.apply(z)).collect();
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &params[self.offsets[l]..][..n_in * n_out];
            let b = &params[self.offsets[l] + n_in * n_out..][..n_out];
            x = (0..n_out)
                .map(|j| {
                    let row = &w[j * n_in..][..n_in];
                    row.iter().zip(&post).fold(b[j], |acc, (&wij, &h)| acc + wij * h)
                })
                .collect();
            pre_all.push(pre);
            post_all.push(post);
        }
        if let Some(t) = tape {
            t.pre = pre_all;
            t.post = post_all;
        }
        x
    }

    /// Adds `coeff · ∂Q(s, a)/∂θ` into `grads`.
    pub fn backward<T: Scalar>(&self, params: &[T], tape: &MlpTape<T>, s: usize, a: usize, coeff: T, grads: &mut [T]) {
        let layers = self.layers();
        let mut delta = vec![T::zero(); self.sizes[layers]];
        delta[a] = coeff;
        for l in (1..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let input = &tape.post[l - 1];
            let (gw, gb) = grads[self.offsets[l]..][..n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let w = &params[self.offsets[l]..][..n_in * n_out];
            let mut back = vec![T::zero(); n_in];
            for j in 0..n_out {
                let d = delta[j];
                if d == T::zero() {
                    continue;
                }
                gb[j] += d;
                let grow = &mut gw[j * n_in..][..n_in];
                let wrow = &w[j * n_in..][..n_in];
                for i in 0..n_in {
                    grow[i] += d * input[i];
                    back[i] += d * wrow[i];
                }
            }
            let pre = &tape.pre[l - 1];
            delta = back
                .into_iter()
                .zip(pre)
                .map(|(g, &z)| g * self.activation.derivative(z))
                .collect();
        }
        let (n_in, n_out) = (self.sizes[0], self.sizes[1]);
        let (gw, gb) = grads[self.offsets[0]..][..n_in * n_out + n_out].split_at_mut(n_in * n_out);
        for j in 0..n_out {
            gw[j * n_in + s] += delta[j];
            gb[j] += delta[j];
        }
    }
}

impl<T> Default for MlpTape<T> {
    fn default() -> Self {
        Self {
            pre: Vec::new(),
            post: Vec::new(),
        }
    }
}
