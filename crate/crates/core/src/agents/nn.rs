//! Fully connected rectifier network with explicit reverse-mode gradients.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static NEXT_TAG: AtomicU64 = AtomicU64::new(1);

fn fresh_tag() -> u64 {
    NEXT_TAG.fetch_add(1, Ordering::Relaxed)
}

/// Affine layers with ReLU between them and a linear output layer.
/// Weights are row-major `out x in`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    /// Changes whenever parameters change; caches from older tags are stale.
    #[serde(skip, default = "fresh_tag")]
    tag: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.sizes == other.sizes && self.weights == other.weights && self.biases == other.biases
    }
}

/// Activations recorded by [`Mlp::forward`] for one input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    tag: u64,
    /// Input of each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
}

/// Parameter-shaped buffer, used for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &Mlp) -> Self {
        Self {
            weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().flatten().chain(self.biases.iter().flatten())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .flatten()
            .chain(self.biases.iter_mut().flatten())
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.values_mut().for_each(|v| *v *= c);
    }

    pub fn global_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }
}

impl Mlp {
    /// Fan-in uniform initialization: each weight in `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {sizes:?}")));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            weights.push((0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)).collect());
            biases.push((0..w[1]).map(|_| rng.random_range(-bound..bound)).collect());
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
            tag: fresh_tag(),
        })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {sizes:?}")));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            weights: sizes.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect(),
            biases: sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
            tag: fresh_tag(),
        })
    }

    /// Builds a network from explicit parameters, checking shapes.
    pub fn from_parts(sizes: Vec<usize>, weights: Vec<Vec<f64>>, biases: Vec<Vec<f64>>) -> Result<Self> {
        let shell = Self::zeros(&sizes)?;
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.len() != shell.weights[l].len() || b.len() != shell.biases[l].len() {
                return Err(Error::DimensionMismatch {
                    expected: shell.weights[l].len() + shell.biases[l].len(),
                    actual: w.len() + b.len(),
                });
            }
        }
        if weights.len() != shell.weights.len() || biases.len() != shell.biases.len() {
            return Err(Error::DimensionMismatch {
                expected: shell.weights.len(),
                actual: weights.len(),
            });
        }
        Ok(Self {
            sizes,
            weights,
            biases,
            tag: fresh_tag(),
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// All parameters, weights first, layer by layer.
    pub fn flat_params(&self) -> Vec<f64> {
        self.weights
            .iter()
            .flatten()
            .chain(self.biases.iter().flatten())
            .copied()
            .collect()
    }

    /// Mutable access to parameter `i` in [`Mlp::flat_params`] order.
    pub fn param_mut(&mut self, mut i: usize) -> &mut f64 {
        self.tag = fresh_tag();
        for w in &mut self.weights {
            if i < w.len() {
                return &mut w[i];
            }
            i -= w.len();
        }
        for b in &mut self.biases {
            if i < b.len() {
                return &mut b[i];
            }
            i -= b.len();
        }
        panic!("parameter index out of range")
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().flatten().chain(self.biases.iter().flatten()).all(|v| v.is_finite())
    }

    /// Hard copy of `other`'s parameters.
    pub fn copy_from(&mut self, other: &Mlp) {
        self.sizes.clone_from(&other.sizes);
        self.weights.clone_from(&other.weights);
        self.biases.clone_from(&other.biases);
        self.tag = fresh_tag();
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.sizes[0] {
            return Err(Error::DimensionMismatch {
                expected: self.sizes[0],
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Outputs only, without recording activations.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        let last = self.weights.len() - 1;
        for l in 0..=last {
            let mut z = affine(&self.weights[l], &self.biases[l], &a);
            if l < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            a = z;
        }
        Ok(a)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(x)?;
        let last = self.weights.len() - 1;
        let mut inputs = Vec::with_capacity(last + 1);
        let mut pre = Vec::with_capacity(last);
        let mut a = x.to_vec();
        for l in 0..=last {
            let z = affine(&self.weights[l], &self.biases[l], &a);
            inputs.push(a);
            if l < last {
                a = z.iter().map(|v| v.max(0.0)).collect();
                pre.push(z);
            } else {
                a = z;
            }
        }
        Ok((a, ForwardCache { tag: self.tag, inputs, pre }))
    }

    /// Parameter gradients of a scalar loss given `dL/d(output)`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64]) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(cache, grad_out, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Mlp::backward`] but accumulates into `grads`.
    pub fn backward_into(&self, cache: &ForwardCache, grad_out: &[f64], grads: &mut Gradients) -> Result<()> {
        if cache.tag != self.tag {
            return Err(Error::StaleCache(
                "parameters changed since the forward pass".into(),
            ));
        }
        if grad_out.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                actual: grad_out.len(),
            });
        }
        let mut delta = grad_out.to_vec();
        for l in (0..self.weights.len()).rev() {
            let input = &cache.inputs[l];
            let n_in = input.len();
            let gw = &mut grads.weights[l];
            for (o, &d) in delta.iter().enumerate() {
                grads.biases[l][o] += d;
                if d != 0.0 {
                    let row = &mut gw[o * n_in..(o + 1) * n_in];
                    for (g, &x) in row.iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.weights[l];
            let mut prev = vec![0.0; n_in];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    for (p, &wv) in prev.iter_mut().zip(row) {
                        *p += d * wv;
                    }
                }
            }
            for (p, &z) in prev.iter_mut().zip(&cache.pre[l - 1]) {
                if z <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
        Ok(())
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bias)| {
            let row = &w[o * n_in..(o + 1) * n_in];
            bias + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()
        })
        .collect()
}

/// Adaptive moment estimation.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(model: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
        }
    }

    pub fn step(&mut self, model: &mut Mlp, grads: &Gradients) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let params = model
            .weights
            .iter_mut()
            .flatten()
            .chain(model.biases.iter_mut().flatten());
        let moments = self.m.values_mut().zip(self.v.values_mut());
        for ((p, g), (m, v)) in params.zip(grads.values()).zip(moments) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
        model.tag = fresh_tag();
    }
}
