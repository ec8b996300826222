//! Adversarial training: the generator proposes measure pairs, exact dual
//! potentials supervise the approximator, and the generator then ascends the
//! approximator's loss.

use std::io::Write;
use std::time::Instant;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use otws_core::{
    c_transform, solve_exact, verify_certificate, CostMatrix, Direction, DiscreteMeasure, Error,
    GridGeometry, Result,
};

use crate::models::{split_pair, swap_halves, Approximator, Generator};
use crate::nn::{mse, mse_grad, Adam, Mode};

/// Which loss the approximator minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// MSE against exact dual potentials.
    #[default]
    Potential,
    /// Negative dual value `-(⟨f, μ⟩ + ⟨fᶜ, ν⟩)` of the prediction.
    Transport,
}

/// Adam rate for the approximator: `2.352 / 784`, the full-scale rate with its
/// factor of `n = 784` removed. Adam steps do not scale with the loss, and the
/// unscaled rate diverges.
pub const DEFAULT_LR_APPROXIMATOR: f64 = 2.352 / 784.0;
/// Generator rate, one tenth of the approximator's.
pub const DEFAULT_LR_GENERATOR: f64 = 0.2352 / 784.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub minibatch_size: usize,
    pub inner_epochs: usize,
    pub lr_approximator: f64,
    pub lr_generator: f64,
    pub lr_decay: f64,
    pub total_unique_samples: usize,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 500,
            minibatch_size: 100,
            inner_epochs: 5,
            lr_approximator: DEFAULT_LR_APPROXIMATOR,
            lr_generator: DEFAULT_LR_GENERATOR,
            lr_decay: 0.99,
            total_unique_samples: 100_000,
            seed: 0,
            loss: LossKind::Potential,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.minibatch_size == 0
            || !self.batch_size.is_multiple_of(self.minibatch_size)
        {
            return Err(Error::invalid(format!(
                "minibatch size {} must divide batch size {}",
                self.minibatch_size, self.batch_size
            )));
        }
        if self.minibatch_size < 2 {
            return Err(Error::invalid(
                "batch normalization needs minibatches of at least 2",
            ));
        }
        if self.inner_epochs == 0 {
            return Err(Error::invalid("inner_epochs must be at least 1"));
        }
        if !(self.lr_approximator > 0.0 && self.lr_generator > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::invalid(format!(
                "lr_decay {} must lie in (0, 1]",
                self.lr_decay
            )));
        }
        if self.total_unique_samples == 0 {
            return Err(Error::invalid("total_unique_samples must be positive"));
        }
        Ok(())
    }

    /// Outer iterations needed to consume `total_unique_samples`.
    pub fn outer_iterations(&self) -> usize {
        self.total_unique_samples.div_ceil(self.batch_size)
    }

    /// `(α_i, β_i) = (α₀, β₀) · decay^i`.
    pub fn learning_rates(&self, outer: usize) -> (f64, f64) {
        let d = self.lr_decay.powi(outer as i32);
        (self.lr_approximator * d, self.lr_generator * d)
    }
}

/// Independent seeded streams.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Init = 1,
    Latent = 2,
    Shuffle = 3,
    HeldOut = 4,
}

pub fn stream_rng(seed: u64, stream: Stream, outer: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 56) ^ (outer << 16) ^ epoch);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub outer: usize,
    pub samples_seen: usize,
    pub kept: usize,
    pub dropped: usize,
    pub loss_pre: f64,
    pub loss_post: f64,
    pub generator_objective: f64,
    pub lr_approximator: f64,
    pub lr_generator: f64,
    /// Hex CRC32 of the latent batch.
    pub latent_digest: String,
    #[serde(skip)]
    pub target_time_ns: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    /// Deterministic columns only; wall time goes through [`TrainLog::write_timing_csv`].
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()
            .map_err(|e| Error::invalid(format!("flushing train log: {e}")))?;
        Ok(())
    }

    pub fn write_timing_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["outer", "target_time_ns"])?;
        for r in &self.records {
            w.write_record([r.outer.to_string(), r.target_time_ns.to_string()])?;
        }
        w.flush()
            .map_err(|e| Error::invalid(format!("flushing timing log: {e}")))?;
        Ok(())
    }
}

/// Exact targets for one generated batch.
#[derive(Debug, Clone)]
pub struct Targets {
    /// Rows of the batch that produced a certified solution.
    pub kept: Vec<usize>,
    /// Centered `f` for `(μ, ν)`.
    pub primary: Array2<f64>,
    /// `fᶜ`, the target for `(ν, μ)`.
    pub swapped: Array2<f64>,
    /// Optimal transport cost per kept row.
    pub values: Vec<f64>,
}

fn solve_row(
    row: ArrayView1<f64>,
    geometry: &std::sync::Arc<GridGeometry>,
    cost: &CostMatrix,
) -> Result<(Array1<f64>, Array1<f64>, f64)> {
    let (mu, nu) = split_pair(row, geometry)?;
    let sol = solve_exact(&mu, &nu, cost)?;
    let cert = verify_certificate(&sol, &mu, &nu, cost);
    if !cert.passed() {
        return Err(Error::SolverFailure {
            iterations: sol.iterations,
            reason: format!("certificate rejected: {cert:?}"),
        });
    }
    let f = sol.duals.f.clone();
    let g = c_transform(f.view(), cost, Direction::RowsToCols)?;
    Ok((f, g, sol.primal_value))
}

/// Solves every pair in parallel. Failed rows are dropped; half or more
/// failing is an error.
pub fn compute_targets(
    pairs: &Array2<f64>,
    geometry: &std::sync::Arc<GridGeometry>,
    cost: &CostMatrix,
) -> Result<Targets> {
    let n = geometry.len();
    let results: Vec<_> = (0..pairs.nrows())
        .into_par_iter()
        .map(|k| solve_row(pairs.row(k), geometry, cost))
        .collect();
    let mut kept = Vec::with_capacity(results.len());
    let mut primary = Vec::new();
    let mut swapped = Vec::new();
    let mut values = Vec::new();
    let mut first_error = None;
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok((f, g, v)) => {
                kept.push(k);
                primary.extend(f);
                swapped.extend(g);
                values.push(v);
            }
            Err(e) => {
                log::warn!("dropping sample {k}: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    let dropped = pairs.nrows() - kept.len();
    if 2 * dropped >= pairs.nrows() && dropped > 0 {
        return Err(Error::SolverFailure {
            iterations: 0,
            reason: format!(
                "{dropped} of {} samples failed; first failure: {}",
                pairs.nrows(),
                first_error.map(|e| e.to_string()).unwrap_or_default()
            ),
        });
    }
    let rows = kept.len();
    Ok(Targets {
        kept,
        primary: Array2::from_shape_vec((rows, n), primary).expect("n values per row"),
        swapped: Array2::from_shape_vec((rows, n), swapped).expect("n values per row"),
        values,
    })
}

/// Mean over the batch of `-(⟨f̂, μ⟩ + ⟨f̂ᶜ, ν⟩)` and its subgradient in `f̂`.
///
/// `f̂ᶜ_j = min_i C_ij − f̂_i`; its subgradient picks the smallest minimizing `i`.
pub fn transport_loss(
    pred: &Array2<f64>,
    pairs: &Array2<f64>,
    cost: &CostMatrix,
) -> Result<(f64, Array2<f64>)> {
    let n = pred.ncols();
    if pairs.ncols() != 2 * n
        || pairs.nrows() != pred.nrows()
        || cost.rows() != n
        || cost.cols() != n
    {
        return Err(Error::invalid("transport loss dimensions disagree"));
    }
    let b = pred.nrows() as f64;
    let c = cost.entries();
    let mut total = 0.0;
    let mut grad = Array2::zeros(pred.raw_dim());
    for ((f, pair), mut d) in pred
        .outer_iter()
        .zip(pairs.outer_iter())
        .zip(grad.outer_iter_mut())
    {
        let (mu, nu) = (pair.slice(s![..n]), pair.slice(s![n..]));
        let mut value = f.dot(&mu);
        for j in 0..n {
            let mut best = (c[[0, j]] - f[0], 0);
            for i in 1..n {
                let v = c[[i, j]] - f[i];
                if v < best.0 {
                    best = (v, i);
                }
            }
            value += best.0 * nu[j];
            d[best.1] += nu[j];
        }
        d.zip_mut_with(&mu, |g, &m| *g -= m);
        total -= value;
    }
    grad /= b;
    Ok((total / b, grad))
}

/// Eq.-style dual-ascent loss of the approximator's prediction for one pair.
pub fn alt_loss_ws(
    approx: &Approximator,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
) -> Result<f64> {
    let f = approx.predict_pair(mu, nu)?;
    let n = f.len();
    let mut pair = Array2::zeros((1, 2 * n));
    pair.slice_mut(s![0, ..n]).assign(mu.weights());
    pair.slice_mut(s![0, n..]).assign(nu.weights());
    Ok(transport_loss(&f.insert_axis(Axis(0)), &pair, cost)?.0)
}

fn approx_loss(
    pred: &Array2<f64>,
    target: &Array2<f64>,
    pairs: &Array2<f64>,
    cost: &CostMatrix,
    kind: LossKind,
) -> Result<(f64, Array2<f64>)> {
    match kind {
        LossKind::Potential => Ok((mse(pred, target)?, mse_grad(pred, target)?)),
        LossKind::Transport => transport_loss(pred, pairs, cost),
    }
}

/// One Adam step of the approximator on a minibatch.
fn approximator_step(
    approx: &mut Approximator,
    opt: &mut Adam,
    pairs: &Array2<f64>,
    target: &Array2<f64>,
    cost: &CostMatrix,
    kind: LossKind,
    lr: f64,
) -> Result<f64> {
    approx.net.zero_grad();
    let (pred, cache) = approx.forward(pairs, Mode::Train)?;
    let (loss, d) = approx_loss(&pred, target, pairs, cost, kind)?;
    approx.net.backward(&cache, &d)?;
    opt.step(approx.net.params_mut(), lr);
    Ok(loss)
}

/// Gradient ascent on the generator's parameters for `MSE(h(g(z)), targets)`.
///
/// The approximator runs on batch statistics and its parameters are left
/// unchanged. Returns the loss before the step.
pub fn generator_step(
    gen: &mut Generator,
    approx: &mut Approximator,
    opt: &mut Adam,
    z: &Array2<f64>,
    targets: &Array2<f64>,
    lr: f64,
) -> Result<f64> {
    gen.net.zero_grad();
    let (pairs, gcache) = gen.forward_train(z)?;
    let (pred, acache) = approx.forward(&pairs, Mode::BatchStats)?;
    let loss = mse(&pred, targets)?;
    let d_pairs = approx.net.backward(&acache, &mse_grad(&pred, targets)?)?;
    approx.net.zero_grad();
    gen.backward(&gcache, &d_pairs)?;
    if lr > 0.0 {
        let mut params = gen.net.params_mut();
        for p in params.iter_mut() {
            p.grad.mapv_inplace(|g| -g);
        }
        opt.step(params, lr);
    }
    Ok(loss)
}

/// Held-out evaluation: eval-mode predictions against exact `f` for `(μ, ν)`.
pub fn potential_mse(
    approx: &Approximator,
    pairs: &Array2<f64>,
    targets: &Array2<f64>,
) -> Result<f64> {
    mse(&approx.predict(pairs)?, targets)
}

fn select_rows(a: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    a.select(Axis(0), rows)
}

fn digest(z: &Array2<f64>) -> String {
    let mut h = crc32fast::Hasher::new();
    for v in z.iter() {
        h.update(&v.to_le_bytes());
    }
    format!("{:08x}", h.finalize())
}

/// Training state; [`Trainer::step`] runs one outer iteration.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub gen: Generator,
    pub approx: Approximator,
    pub cost: CostMatrix,
    pub cfg: TrainConfig,
    pub log: TrainLog,
    geometry: std::sync::Arc<GridGeometry>,
    approx_opt: Adam,
    gen_opt: Adam,
    outer: usize,
    samples_seen: usize,
}

impl Trainer {
    pub fn new(
        gen: Generator,
        approx: Approximator,
        cost: CostMatrix,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = gen.config.n;
        if approx.config.n != n || cost.rows() != n || cost.cols() != n {
            return Err(Error::invalid(format!(
                "generator n = {n}, approximator n = {}, cost {}x{}",
                approx.config.n,
                cost.rows(),
                cost.cols()
            )));
        }
        let geometry = gen.config.geometry()?;
        Ok(Self {
            gen,
            approx,
            cost,
            cfg,
            log: TrainLog::default(),
            geometry,
            approx_opt: Adam::default(),
            gen_opt: Adam::default(),
            outer: 0,
            samples_seen: 0,
        })
    }

    pub fn outer(&self) -> usize {
        self.outer
    }

    pub fn samples_seen(&self) -> usize {
        self.samples_seen
    }

    pub fn finished(&self) -> bool {
        self.samples_seen >= self.cfg.total_unique_samples
    }

    fn batch_loss(&self, pairs: &Array2<f64>, t: &Targets) -> Result<f64> {
        let swapped = swap_halves(pairs);
        let (p1, p2) = (self.approx.predict(pairs)?, self.approx.predict(&swapped)?);
        let a = approx_loss(&p1, &t.primary, pairs, &self.cost, self.cfg.loss)?.0;
        let b = approx_loss(&p2, &t.swapped, &swapped, &self.cost, self.cfg.loss)?.0;
        Ok(0.5 * (a + b))
    }

    pub fn step(&mut self) -> Result<&TrainRecord> {
        let cfg = self.cfg.clone();
        let outer = self.outer;
        let (lr_a, lr_g) = cfg.learning_rates(outer);
        let batch = cfg
            .batch_size
            .min(cfg.total_unique_samples - self.samples_seen.min(cfg.total_unique_samples))
            .max(cfg.minibatch_size);

        let mut rng = stream_rng(cfg.seed, Stream::Latent, outer as u64, 0);
        let z = self.gen.sample_latent(batch, &mut rng);
        let pairs = self.gen.forward(&z)?;
        let started = Instant::now();
        let targets = compute_targets(&pairs, &self.geometry, &self.cost)?;
        let target_time_ns = started.elapsed().as_nanos() as u64;

        let z = select_rows(&z, &targets.kept);
        let pairs = select_rows(&pairs, &targets.kept);
        let swapped = swap_halves(&pairs);
        let rows = targets.kept.len();
        let mb = cfg.minibatch_size.min(rows);
        let loss_pre = self.batch_loss(&pairs, &targets)?;

        let mut last = Vec::new();
        for epoch in 0..cfg.inner_epochs {
            let mut order: Vec<usize> = (0..rows).collect();
            order.shuffle(&mut stream_rng(
                cfg.seed,
                Stream::Shuffle,
                outer as u64,
                epoch as u64,
            ));
            for chunk in order.chunks(mb) {
                if chunk.len() < 2 {
                    continue;
                }
                let x = select_rows(&pairs, chunk);
                let t = select_rows(&targets.primary, chunk);
                approximator_step(
                    &mut self.approx,
                    &mut self.approx_opt,
                    &x,
                    &t,
                    &self.cost,
                    cfg.loss,
                    lr_a,
                )?;
                let xs = select_rows(&swapped, chunk);
                let ts = select_rows(&targets.swapped, chunk);
                approximator_step(
                    &mut self.approx,
                    &mut self.approx_opt,
                    &xs,
                    &ts,
                    &self.cost,
                    cfg.loss,
                    lr_a,
                )?;
                last = chunk.to_vec();
            }
        }
        let loss_post = self.batch_loss(&pairs, &targets)?;

        let generator_objective = generator_step(
            &mut self.gen,
            &mut self.approx,
            &mut self.gen_opt,
            &select_rows(&z, &last),
            &select_rows(&targets.primary, &last),
            lr_g,
        )?;

        self.samples_seen += batch;
        self.outer += 1;
        self.log.records.push(TrainRecord {
            outer,
            samples_seen: self.samples_seen,
            kept: rows,
            dropped: batch - rows,
            loss_pre,
            loss_post,
            generator_objective,
            lr_approximator: lr_a,
            lr_generator: lr_g,
            latent_digest: digest(&z),
            target_time_ns,
        });
        Ok(self.log.records.last().expect("just pushed"))
    }

    pub fn run(&mut self) -> Result<()> {
        while !self.finished() {
            self.step()?;
        }
        Ok(())
    }
}

/// Trains until `cfg.total_unique_samples` generated samples are consumed.
pub fn train_loop(
    gen: Generator,
    approx: Approximator,
    cost: CostMatrix,
    cfg: TrainConfig,
) -> Result<(Generator, Approximator, TrainLog)> {
    let mut t = Trainer::new(gen, approx, cost, cfg)?;
    t.run()?;
    Ok((t.gen, t.approx, t.log))
}
