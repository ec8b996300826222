//! Dense layers with hand-written backpropagation.
//!
//! Batches are `Array2<f64>` with one sample per row. A [`Sequential`] stack
//! records a [`Cache`] on every training forward pass; `backward` consumes it
//! and accumulates parameter gradients. Any parameter update bumps the
//! stack's version, so a cache taken before the update is rejected.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use otws_core::{Error, Result};

/// A trainable matrix with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    m: Array2<f64>,
    v: Array2<f64>,
}

impl Param {
    pub fn new(value: Array2<f64>) -> Self {
        let zeros = Array2::zeros(value.raw_dim());
        Self {
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Batch statistics, running statistics updated.
    Train,
    /// Batch statistics, running statistics left alone.
    BatchStats,
    /// Running statistics only.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out × in`
    pub weight: Param,
    /// `1 × out`
    pub bias: Param,
}

impl Linear {
    /// Weights uniform in `±sqrt(1/in)`, zero bias.
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (1.0 / inputs as f64).sqrt();
        let w =
            Array2::from_shape_simple_fn((outputs, inputs), || rng.random_range(-bound..=bound));
        Self::from_parts(w, Array1::zeros(outputs))
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self::from_parts(Array2::zeros((outputs, inputs)), Array1::zeros(outputs))
    }

    pub fn from_parts(weight: Array2<f64>, bias: Array1<f64>) -> Self {
        assert_eq!(
            weight.nrows(),
            bias.len(),
            "bias length must match weight rows"
        );
        let b = bias.insert_axis(Axis(0));
        Self {
            weight: Param::new(weight),
            bias: Param::new(b),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.value.t()) + &self.bias.value
    }

    fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        self.weight.grad += &dy.t().dot(x);
        self.bias.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.weight.value)
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes `dy` where the pre-activation is positive, zero elsewhere.
pub fn relu_backward(pre: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(pre, |d, &p| {
        if p <= 0.0 {
            *d = 0.0
        }
    });
    dx
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub eps: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
struct BatchNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    batch_stats: bool,
}

impl BatchNorm {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(features: usize) -> Self {
        Self {
            gamma: Param::new(Array2::ones((1, features))),
            beta: Param::new(Array2::zeros((1, features))),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            eps: Self::EPS,
            momentum: Self::MOMENTUM,
        }
    }

    pub fn features(&self) -> usize {
        self.running_mean.len()
    }

    fn normalize(&mut self, x: &Array2<f64>, mode: Mode) -> BatchNormCache {
        let (mean, var) = match mode {
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
            Mode::Train | Mode::BatchStats => {
                let b = x.nrows() as f64;
                let mean = x.sum_axis(Axis(0)) / b;
                let centered = x - &mean;
                let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / b;
                if mode == Mode::Train {
                    // Running variance uses the unbiased batch estimate.
                    let unbias = if x.nrows() > 1 { b / (b - 1.0) } else { 1.0 };
                    let m = self.momentum;
                    self.running_mean = &self.running_mean * (1.0 - m) + &mean * m;
                    self.running_var = &self.running_var * (1.0 - m) + &var * (m * unbias);
                }
                (mean, var)
            }
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let xhat = (x - &mean) * &inv_std;
        BatchNormCache {
            xhat,
            inv_std,
            batch_stats: mode != Mode::Eval,
        }
    }

    fn forward(&mut self, x: &Array2<f64>, mode: Mode) -> (Array2<f64>, BatchNormCache) {
        let cache = self.normalize(x, mode);
        let y = &cache.xhat * &self.gamma.value + &self.beta.value;
        (y, cache)
    }

    fn predict(&self, x: &Array2<f64>) -> Array2<f64> {
        let inv_std = self.running_var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        (x - &self.running_mean) * &inv_std * &self.gamma.value + &self.beta.value
    }

    fn backward(&mut self, cache: &BatchNormCache, dy: &Array2<f64>) -> Array2<f64> {
        self.gamma.grad += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.beta.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dxhat = dy * &self.gamma.value;
        if !cache.batch_stats {
            return dxhat * &cache.inv_std;
        }
        let b = dy.nrows() as f64;
        let sum = dxhat.sum_axis(Axis(0));
        let proj = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        (dxhat * b - &sum - &(&cache.xhat * &proj)) * &(&cache.inv_std / b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear(Linear),
    Relu,
    BatchNorm(BatchNorm),
}

#[derive(Debug, Clone)]
enum LayerCache {
    Linear(Array2<f64>),
    Relu(Array2<f64>),
    BatchNorm(BatchNormCache),
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    version: u64,
    entries: Vec<LayerCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    pub layers: Vec<Layer>,
    version: u64,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers, version: 0 }
    }

    pub fn inputs(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l {
            Layer::Linear(lin) => Some(lin.inputs()),
            Layer::BatchNorm(bn) => Some(bn.features()),
            Layer::Relu => None,
        })
    }

    pub fn outputs(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|l| match l {
            Layer::Linear(lin) => Some(lin.outputs()),
            Layer::BatchNorm(bn) => Some(bn.features()),
            Layer::Relu => None,
        })
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        match self.inputs() {
            Some(w) if w != x.ncols() => Err(Error::invalid(format!(
                "input has {} columns, network expects {w}",
                x.ncols()
            ))),
            _ => Ok(()),
        }
    }

    /// Forward pass recording activations for [`Sequential::backward`].
    pub fn forward(&mut self, x: &Array2<f64>, mode: Mode) -> Result<(Array2<f64>, Cache)> {
        self.check_input(x)?;
        let mut entries = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = match layer {
                Layer::Linear(lin) => {
                    let out = lin.forward(&h);
                    entries.push(LayerCache::Linear(h));
                    out
                }
                Layer::Relu => {
                    let out = relu(&h);
                    entries.push(LayerCache::Relu(h));
                    out
                }
                Layer::BatchNorm(bn) => {
                    let (out, c) = bn.forward(&h, mode);
                    entries.push(LayerCache::BatchNorm(c));
                    out
                }
            };
        }
        debug_assert!(h.iter().all(|v| v.is_finite()), "non-finite activation");
        Ok((
            h,
            Cache {
                version: self.version,
                entries,
            },
        ))
    }

    /// Eval-mode forward pass without a cache; read-only.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Linear(lin) => lin.forward(&h),
                Layer::Relu => relu(&h),
                Layer::BatchNorm(bn) => bn.predict(&h),
            };
        }
        Ok(h)
    }

    /// Accumulates parameter gradients for `dy = ∂L/∂output` and returns `∂L/∂input`.
    pub fn backward(&mut self, cache: &Cache, dy: &Array2<f64>) -> Result<Array2<f64>> {
        if cache.version != self.version || cache.entries.len() != self.layers.len() {
            return Err(Error::InvalidState(
                "forward cache predates a parameter update; run forward again".into(),
            ));
        }
        let mut d = dy.clone();
        for (layer, entry) in self.layers.iter_mut().zip(&cache.entries).rev() {
            d = match (layer, entry) {
                (Layer::Linear(lin), LayerCache::Linear(x)) => lin.backward(x, &d),
                (Layer::Relu, LayerCache::Relu(pre)) => relu_backward(pre, &d),
                (Layer::BatchNorm(bn), LayerCache::BatchNorm(c)) => bn.backward(c, &d),
                _ => unreachable!("cache entries follow layer order"),
            };
        }
        Ok(d)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Linear(l) => out.extend([&l.weight, &l.bias]),
                Layer::BatchNorm(b) => out.extend([&b.gamma, &b.beta]),
                Layer::Relu => {}
            }
        }
        out
    }

    /// Mutable parameter access. Counts as a modification: outstanding caches
    /// become stale.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.version += 1;
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Linear(l) => out.extend([&mut l.weight, &mut l.bias]),
                Layer::BatchNorm(b) => out.extend([&mut b.gamma, &mut b.beta]),
                Layer::Relu => {}
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            match layer {
                Layer::Linear(l) => {
                    l.weight.zero_grad();
                    l.bias.zero_grad();
                }
                Layer::BatchNorm(b) => {
                    b.gamma.zero_grad();
                    b.beta.zero_grad();
                }
                Layer::Relu => {}
            }
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

/// Mean over all entries of the squared difference.
pub fn mse(pred: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
    check_same_shape(pred, target)?;
    let diff = pred - target;
    Ok(otws_core::dot(diff.as_slice().unwrap(), diff.as_slice().unwrap()) / pred.len() as f64)
}

/// `∂ mse / ∂ pred = 2 (pred - target) / (B·d)`
pub fn mse_grad(pred: &Array2<f64>, target: &Array2<f64>) -> Result<Array2<f64>> {
    check_same_shape(pred, target)?;
    Ok((pred - target) * (2.0 / pred.len() as f64))
}

fn check_same_shape(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "shape {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps taken so far.
    pub t: u64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
        }
    }
}

impl Adam {
    pub fn step(&mut self, params: Vec<&mut Param>, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for p in params {
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(&mut p.m)
                .and(&mut p.v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}
