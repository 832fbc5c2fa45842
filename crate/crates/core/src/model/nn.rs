//! Shared neural building blocks: dense stacks with explicit backward
//! passes, the Adam update rule, and a central-difference gradient checker.
//!
//! Everything runs on flat `f64` buffers with deterministic, seeded
//! initialization; parameter vectors flatten layer by layer (weights
//! row-major `[out][in]`, then biases) so optimizers and gradient checks
//! can treat a whole network as one slice.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the post-activation value.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `[out][in]`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    fn new_seeded(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        // small random biases keep rectifier pre-activations away from
        // exact zeros, where finite-difference probes straddle the kink
        let b = (0..out_dim).map(|_| rng.random_range(-0.05..0.05)).collect();
        Self {
            in_dim,
            out_dim,
            w,
            b,
        }
    }

    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out[o] = acc;
        }
    }

    fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// A dense stack: `dims = [in, h1, .., out]` with `activation` on every
/// layer except optionally the last (`activate_output`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpStack {
    pub activation: Activation,
    pub activate_output: bool,
    pub layers: Vec<Linear>,
}

/// Per-layer post-activation values from one forward pass; `values[0]` is
/// the input.
pub struct StackCache {
    values: Vec<Vec<f64>>,
}

impl StackCache {
    pub fn output(&self) -> &[f64] {
        self.values.last().unwrap()
    }
}

impl MlpStack {
    pub fn new_seeded(
        dims: &[usize],
        activation: Activation,
        activate_output: bool,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(dims.len() >= 2, "stack needs input and output dims");
        let layers = dims
            .windows(2)
            .map(|w| Linear::new_seeded(w[0], w[1], rng))
            .collect();
        Self {
            activation,
            activate_output,
            layers,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().unwrap().in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Linear::n_params).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).values.pop().unwrap()
    }

    pub fn forward_cached(&self, x: &[f64]) -> StackCache {
        debug_assert_eq!(x.len(), self.in_dim());
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.to_vec());
        for (li, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.out_dim];
            layer.forward_into(values.last().unwrap(), &mut out);
            let is_last = li + 1 == self.layers.len();
            if !is_last || self.activate_output {
                for v in &mut out {
                    *v = self.activation.apply(*v);
                }
            }
            values.push(out);
        }
        StackCache { values }
    }

    /// Backpropagates `grad_out` (gradient of the loss w.r.t. the stack
    /// output), accumulating parameter gradients into
    /// `grad_flat[offset..offset + n_params()]` and returning the gradient
    /// w.r.t. the stack input.
    pub fn backward(
        &self,
        cache: &StackCache,
        grad_out: &[f64],
        grad_flat: &mut [f64],
        offset: usize,
    ) -> Vec<f64> {
        let mut delta = grad_out.to_vec();
        // parameter offsets per layer
        let mut layer_offsets = Vec::with_capacity(self.layers.len());
        let mut acc = offset;
        for layer in &self.layers {
            layer_offsets.push(acc);
            acc += layer.n_params();
        }
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &cache.values[li];
            let output = &cache.values[li + 1];
            let is_last = li + 1 == self.layers.len();
            if !is_last || self.activate_output {
                for (d, &a) in delta.iter_mut().zip(output) {
                    *d *= self.activation.derivative_from_output(a);
                }
            }
            let base = layer_offsets[li];
            let gw = base;
            let gb = base + layer.w.len();
            for o in 0..layer.out_dim {
                let d = delta[o];
                let row = gw + o * layer.in_dim;
                for (k, &xi) in input.iter().enumerate() {
                    grad_flat[row + k] += d * xi;
                }
                grad_flat[gb + o] += d;
            }
            let mut next = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let d = delta[o];
                let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (n, wi) in next.iter_mut().zip(row) {
                    *n += d * wi;
                }
            }
            delta = next;
        }
        delta
    }

    pub fn append_flat(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            out.extend_from_slice(&layer.w);
            out.extend_from_slice(&layer.b);
        }
    }

    pub fn load_flat(&mut self, src: &[f64], cursor: &mut usize) {
        for layer in &mut self.layers {
            let nw = layer.w.len();
            layer.w.copy_from_slice(&src[*cursor..*cursor + nw]);
            *cursor += nw;
            let nb = layer.b.len();
            layer.b.copy_from_slice(&src[*cursor..*cursor + nb]);
            *cursor += nb;
        }
    }
}

/// Adam with bias correction; state lives alongside the flat parameter
/// vector it updates.
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// In-place max-subtracted softmax.
pub fn softmax_in_place(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

/// Central finite-difference check: returns the maximum relative error
/// between `analytic` and the numerical gradient over `probes` parameter
/// indices. `loss` must be a pure function of the parameter vector.
///
/// The denominator is floored at 1e-6: central differences with step 1e-5
/// on a loss of order 1 carry ~1e-11 of rounding noise, so coordinates
/// whose true gradient sits below the noise floor are compared absolutely.
#[cfg_attr(not(test), allow(dead_code))]
pub fn check_gradient(
    mut loss: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    probes: &[usize],
    step: f64,
) -> f64 {
    let mut work = params.to_vec();
    let mut max_rel = 0.0f64;
    for &i in probes {
        let orig = work[i];
        work[i] = orig + step;
        let plus = loss(&work);
        work[i] = orig - step;
        let minus = loss(&work);
        work[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stack_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for activation in [Activation::Relu, Activation::Tanh] {
            let stack = MlpStack::new_seeded(&[3, 5, 2], activation, false, &mut rng);
            let x = [0.3, -0.8, 1.2];
            let target = [0.25, -0.5];
            let mut flat = Vec::new();
            stack.append_flat(&mut flat);
            // loss = 0.5 * sum (out - target)^2
            let mut grad = vec![0.0; stack.n_params()];
            let cache = stack.forward_cached(&x);
            let grad_out: Vec<f64> = cache
                .output()
                .iter()
                .zip(target)
                .map(|(o, t)| o - t)
                .collect();
            stack.backward(&cache, &grad_out, &mut grad, 0);
            let probes: Vec<usize> = (0..stack.n_params()).collect();
            let max_rel = check_gradient(
                |p| {
                    let mut s = stack.clone();
                    let mut cursor = 0;
                    s.load_flat(p, &mut cursor);
                    let out = s.forward(&x);
                    0.5 * out
                        .iter()
                        .zip(target)
                        .map(|(o, t)| (o - t) * (o - t))
                        .sum::<f64>()
                },
                &flat,
                &grad,
                &probes,
                1e-5,
            );
            assert!(max_rel < 1e-6, "{activation:?}: max rel err {max_rel}");
        }
    }

    #[test]
    fn adam_decreases_a_quadratic() {
        let mut params = vec![5.0, -3.0];
        let mut opt = Adam::new(0.1, 2);
        for _ in 0..500 {
            let grads: Vec<f64> = params.iter().map(|p| 2.0 * p).collect();
            opt.step(&mut params, &grads);
        }
        assert!(params.iter().all(|p| p.abs() < 1e-2));
    }

    #[test]
    fn softmax_of_identical_scores_is_exactly_uniform() {
        let mut s = vec![1.7; 8];
        softmax_in_place(&mut s);
        for v in s {
            assert_eq!(v, 1.0 / 8.0);
        }
    }

    #[test]
    fn flat_round_trip_preserves_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let stack = MlpStack::new_seeded(&[4, 6, 3], Activation::Relu, true, &mut rng);
        let mut flat = Vec::new();
        stack.append_flat(&mut flat);
        let mut copy = stack.clone();
        let mut cursor = 0;
        copy.load_flat(&flat, &mut cursor);
        assert_eq!(cursor, stack.n_params());
        let x = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(stack.forward(&x), copy.forward(&x));
    }
}
