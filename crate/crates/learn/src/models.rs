//! Generator and approximator networks.
//!
//! Both networks exchange measure pairs as `B × 2n` matrices: row `k` holds
//! `μ_k` in its first `n` columns and `ν_k` in the rest.

use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use otws_core::{CostMatrix, DiscreteMeasure, Error, GridGeometry, PotentialOracle, Result};

use crate::nn::{relu, BatchNorm, Cache, Layer, Linear, Mode, Sequential};

fn exact_sqrt(v: usize) -> Option<usize> {
    let r = (v as f64).sqrt().round() as usize;
    (r * r == v).then_some(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Latent dimension `l`; each half is a square image.
    pub latent_dim: usize,
    /// Points per output measure; a square grid.
    pub n: usize,
    pub lambda: f64,
    pub c: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            latent_dim: 128,
            n: 784,
            lambda: 0.3,
            c: 1e-2,
        }
    }
}

impl GeneratorConfig {
    /// 14×14 outputs from two 7×7 latent images.
    pub fn desk() -> Self {
        Self {
            latent_dim: 98,
            n: 196,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || !self.latent_dim.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "latent_dim {} must be even and positive",
                self.latent_dim
            )));
        }
        if exact_sqrt(self.latent_dim / 2).is_none() {
            return Err(Error::invalid(format!(
                "latent half {} is not a square image",
                self.latent_dim / 2
            )));
        }
        if self.n == 0 || exact_sqrt(self.n).is_none() {
            return Err(Error::invalid(format!(
                "n = {} is not a square grid",
                self.n
            )));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::invalid(format!(
                "lambda {} must lie in (0, 1)",
                self.lambda
            )));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::invalid(format!("c {} must be positive", self.c)));
        }
        Ok(())
    }

    pub fn side(&self) -> usize {
        exact_sqrt(self.n).unwrap_or(0)
    }

    pub fn latent_side(&self) -> usize {
        exact_sqrt(self.latent_dim / 2).unwrap_or(0)
    }

    pub fn geometry(&self) -> Result<Arc<GridGeometry>> {
        Ok(Arc::new(GridGeometry::square(self.side())?))
    }
}

/// Corner-aligned bilinear resampling of a `from × from` image onto a
/// `to × to` grid, as a dense `to² × from²` matrix.
pub fn bilinear_matrix(from: usize, to: usize) -> Array2<f64> {
    let mut t = Array2::zeros((to * to, from * from));
    let taps = |k: usize| -> [(usize, f64); 2] {
        if from == 1 || to == 1 {
            return [(0, 1.0), (0, 0.0)];
        }
        let x = (k * (from - 1)) as f64 / (to - 1) as f64;
        let lo = (x.floor() as usize).min(from - 1);
        let hi = (lo + 1).min(from - 1);
        let w = x - lo as f64;
        [(lo, 1.0 - w), (hi, w)]
    };
    for r in 0..to {
        for c in 0..to {
            for (sr, wr) in taps(r) {
                for (sc, wc) in taps(c) {
                    t[[r * to + c, sr * from + sc]] += wr * wc;
                }
            }
        }
    }
    t
}

/// `g(z) = normalize(λ ReLU(T z) + ReLU(W z + b) + c)`, normalized per half.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub net: Sequential,
    interp: Array2<f64>,
}

/// State kept from [`Generator::forward_train`] for the backward pass.
#[derive(Debug, Clone)]
pub struct GeneratorCache {
    net: Cache,
    output: Array2<f64>,
    sums: Array2<f64>,
}

impl Generator {
    pub fn new<R: Rng>(config: GeneratorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layer = Linear::new(config.latent_dim, 2 * config.n, rng);
        Ok(Self::with_layer(config, layer))
    }

    /// Generator whose `net_θ` is the given linear layer (followed by ReLU).
    pub fn with_layer(config: GeneratorConfig, layer: Linear) -> Self {
        let interp = bilinear_matrix(config.latent_side(), config.side());
        Self {
            net: Sequential::new(vec![Layer::Linear(layer), Layer::Relu]),
            config,
            interp,
        }
    }

    pub fn linear(&self) -> &Linear {
        match &self.net.layers[0] {
            Layer::Linear(l) => l,
            _ => unreachable!("generator net starts with its linear layer"),
        }
    }

    pub fn linear_mut(&mut self) -> &mut Linear {
        match &mut self.net.layers[0] {
            Layer::Linear(l) => l,
            _ => unreachable!("generator net starts with its linear layer"),
        }
    }

    pub fn sample_latent<R: Rng>(&self, batch: usize, rng: &mut R) -> Array2<f64> {
        Array2::from_shape_simple_fn((batch, self.config.latent_dim), || {
            rng.sample(StandardNormal)
        })
    }

    fn check_latent(&self, z: &Array2<f64>) -> Result<()> {
        if z.ncols() != self.config.latent_dim {
            return Err(Error::invalid(format!(
                "latent batch has {} columns, generator expects {}",
                z.ncols(),
                self.config.latent_dim
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("latent batch contains non-finite values"));
        }
        Ok(())
    }

    /// `λ ReLU(T z)` for both halves.
    pub fn skip(&self, z: &Array2<f64>) -> Array2<f64> {
        let (half, n) = (self.config.latent_dim / 2, self.config.n);
        let mut out = Array2::zeros((z.nrows(), 2 * n));
        for k in 0..2 {
            let tz = z
                .slice(s![.., k * half..(k + 1) * half])
                .dot(&self.interp.t());
            out.slice_mut(s![.., k * n..(k + 1) * n]).assign(&tz);
        }
        relu(&out) * self.config.lambda
    }

    /// `λ ReLU(T z) + net_θ(z)`: no constant, no normalization.
    pub fn residual(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_latent(z)?;
        Ok(self.skip(z) + &self.net.predict(z)?)
    }

    fn normalize(&self, raw: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let n = self.config.n;
        let mut out = raw.clone();
        let mut sums = Array2::zeros((raw.nrows(), 2));
        for k in 0..2 {
            let mut half = out.slice_mut(s![.., k * n..(k + 1) * n]);
            for (mut row, sum) in half.outer_iter_mut().zip(sums.column_mut(k).iter_mut()) {
                *sum = otws_core::pairwise_sum(row.as_slice().expect("contiguous row"));
                row /= *sum;
            }
        }
        (out, sums)
    }

    /// Normalized measure pairs, one per latent row.
    pub fn forward(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        let raw = self.residual(z)? + self.config.c;
        Ok(self.normalize(&raw).0)
    }

    pub fn forward_train(&mut self, z: &Array2<f64>) -> Result<(Array2<f64>, GeneratorCache)> {
        self.check_latent(z)?;
        let (net_out, net) = self.net.forward(z, Mode::Train)?;
        let raw = self.skip(z) + &net_out + self.config.c;
        let (output, sums) = self.normalize(&raw);
        Ok((output.clone(), GeneratorCache { net, output, sums }))
    }

    /// Accumulates `∂L/∂θ` given `∂L/∂output`.
    pub fn backward(&mut self, cache: &GeneratorCache, d_out: &Array2<f64>) -> Result<()> {
        if d_out.dim() != cache.output.dim() {
            return Err(Error::invalid(format!(
                "gradient shape {:?} does not match output {:?}",
                d_out.dim(),
                cache.output.dim()
            )));
        }
        let n = self.config.n;
        let mut d_raw = Array2::zeros(d_out.raw_dim());
        for k in 0..2 {
            let cols = s![.., k * n..(k + 1) * n];
            let (dy, y) = (d_out.slice(cols), cache.output.slice(cols));
            // y = r / Σr  ⇒  ∂L/∂r = (dy − ⟨dy, y⟩) / Σr
            let inner = (&dy * &y).sum_axis(Axis(1)).insert_axis(Axis(1));
            let sums = cache.sums.slice(s![.., k..k + 1]);
            d_raw.slice_mut(cols).assign(&((&dy - &inner) / sums));
        }
        self.net.backward(&cache.net, &d_raw)?;
        Ok(())
    }
}

/// Splits a `2n` row into its two measures on `geometry`.
pub fn split_pair(
    row: ArrayView1<f64>,
    geometry: &Arc<GridGeometry>,
) -> Result<(DiscreteMeasure, DiscreteMeasure)> {
    let n = geometry.len();
    if row.len() != 2 * n {
        return Err(Error::invalid(format!(
            "pair row has {} entries, expected {}",
            row.len(),
            2 * n
        )));
    }
    let mu = DiscreteMeasure::new(row.slice(s![..n]).to_owned(), geometry.clone())?;
    let nu = DiscreteMeasure::new(row.slice(s![n..]).to_owned(), geometry.clone())?;
    Ok((mu, nu))
}

/// Exchanges the `μ` and `ν` halves of every row.
pub fn swap_halves(pairs: &Array2<f64>) -> Array2<f64> {
    let n = pairs.ncols() / 2;
    let mut out = Array2::zeros(pairs.raw_dim());
    out.slice_mut(s![.., ..n]).assign(&pairs.slice(s![.., n..]));
    out.slice_mut(s![.., n..]).assign(&pairs.slice(s![.., ..n]));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproximatorConfig {
    pub n: usize,
}

impl ApproximatorConfig {
    /// Layer widths `2n → 6n → 6n → n`.
    pub fn widths(&self) -> [usize; 4] {
        [2 * self.n, 6 * self.n, 6 * self.n, self.n]
    }
}

/// Three linear layers; the first two are followed by ReLU then batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Approximator {
    pub config: ApproximatorConfig,
    pub net: Sequential,
}

impl Approximator {
    pub fn new<R: Rng>(config: ApproximatorConfig, rng: &mut R) -> Result<Self> {
        if config.n == 0 {
            return Err(Error::invalid("approximator needs n >= 1"));
        }
        let [a, b, c, d] = config.widths();
        let net = Sequential::new(vec![
            Layer::Linear(Linear::new(a, b, rng)),
            Layer::Relu,
            Layer::BatchNorm(BatchNorm::new(b)),
            Layer::Linear(Linear::new(b, c, rng)),
            Layer::Relu,
            Layer::BatchNorm(BatchNorm::new(c)),
            Layer::Linear(Linear::new(c, d, rng)),
        ]);
        Ok(Self { config, net })
    }

    pub fn zero_output_layer(&mut self) {
        if let Some(Layer::Linear(l)) = self.net.layers.last_mut() {
            l.weight.value.fill(0.0);
            l.bias.value.fill(0.0);
        }
    }

    pub fn forward(&mut self, pairs: &Array2<f64>, mode: Mode) -> Result<(Array2<f64>, Cache)> {
        self.net.forward(pairs, mode)
    }

    /// Eval-mode predictions for a batch of pairs.
    pub fn predict(&self, pairs: &Array2<f64>) -> Result<Array2<f64>> {
        self.net.predict(pairs)
    }

    /// Predicted `f` for the ordering `(μ, ν)`.
    pub fn predict_pair(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<Array1<f64>> {
        let n = self.config.n;
        if mu.len() != n || nu.len() != n {
            return Err(Error::invalid(format!(
                "measures of size {} and {}, approximator expects {n}",
                mu.len(),
                nu.len()
            )));
        }
        let mut input = Array2::zeros((1, 2 * n));
        input.slice_mut(s![0, ..n]).assign(mu.weights());
        input.slice_mut(s![0, n..]).assign(nu.weights());
        Ok(self.predict(&input)?.row(0).to_owned())
    }
}

/// Potentials predicted by a trained approximator.
pub struct ApproximatorPotentials<'a> {
    pub approx: &'a Approximator,
}

impl PotentialOracle for ApproximatorPotentials<'_> {
    fn potential(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<Array1<f64>> {
        self.approx.predict_pair(mu, nu)
    }
}

/// Largest singular value by power iteration on `WᵀW` from a fixed start.
pub fn spectral_norm(w: &Array2<f64>, steps: usize) -> f64 {
    if w.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Array1<f64> = Array1::from_shape_simple_fn(w.ncols(), || rng.sample(StandardNormal));
    let mut sigma = 0.0;
    for _ in 0..steps {
        let norm = v.dot(&v).sqrt();
        if norm == 0.0 {
            break;
        }
        v /= norm;
        let wv = w.dot(&v);
        sigma = wv.dot(&wv).sqrt();
        v = w.t().dot(&wv);
    }
    sigma
}

pub const POWER_ITERATIONS: usize = 100;

/// Scales the weight (not the bias) so its spectral norm is at most `target`.
pub fn spectral_rescale(layer: &Linear, target: f64) -> Result<Linear> {
    if !(target > 0.0) {
        return Err(Error::invalid(format!("target {target} must be positive")));
    }
    let sigma = spectral_norm(&layer.weight.value, POWER_ITERATIONS);
    let mut out = layer.clone();
    if sigma > target {
        out.weight.value *= target / sigma;
    }
    Ok(out)
}

/// Extremes of `‖F(x) − F(y)‖ / ‖x − y‖` over sampled pairs.
///
/// `max_ratio` is a lower bound on the Lipschitz constant of `F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzEstimate {
    pub max_ratio: f64,
    pub min_ratio: f64,
    pub pairs: usize,
}

/// Draws `pairs` pairs from `sample` (which fills a batch of points) and
/// evaluates `map` batchwise.
pub fn lipschitz_estimate<M, S>(
    map: M,
    mut sample: S,
    dim: usize,
    pairs: usize,
) -> Result<LipschitzEstimate>
where
    M: Fn(&Array2<f64>) -> Result<Array2<f64>>,
    S: FnMut(&mut Array2<f64>),
{
    if pairs == 0 {
        return Err(Error::invalid("need at least one pair"));
    }
    const CHUNK: usize = 1024;
    let mut est = LipschitzEstimate {
        max_ratio: 0.0,
        min_ratio: f64::INFINITY,
        pairs: 0,
    };
    let mut done = 0;
    while done < pairs {
        let b = CHUNK.min(pairs - done);
        let mut x = Array2::zeros((b, dim));
        let mut y = Array2::zeros((b, dim));
        sample(&mut x);
        sample(&mut y);
        let (fx, fy) = (map(&x)?, map(&y)?);
        for k in 0..b {
            let dx = &x.row(k) - &y.row(k);
            let din = dx.dot(&dx).sqrt();
            if din == 0.0 {
                continue;
            }
            let df = &fx.row(k) - &fy.row(k);
            let ratio = df.dot(&df).sqrt() / din;
            est.max_ratio = est.max_ratio.max(ratio);
            est.min_ratio = est.min_ratio.min(ratio);
            est.pairs += 1;
        }
        done += b;
    }
    Ok(est)
}

/// The cost matrix the approximator's measures live on.
pub fn grid_cost(n: usize) -> Result<CostMatrix> {
    let side =
        exact_sqrt(n).ok_or_else(|| Error::invalid(format!("n = {n} is not a square grid")))?;
    let g = GridGeometry::square(side)?;
    otws_core::build_cost(&g, &g, 2.0)
}
