//! Sinkhorn iterations with a caller-supplied initial column scaling.
//!
//! Two domains are available. `Linear` alternates `u = μ ./ K v` and
//! `v = ν ./ Kᵀ u` on the Gibbs kernel directly and fails loudly once a
//! scaling stops being a positive finite number. `Log` runs the same updates
//! on `log u` and `log v` with log-sum-exp reductions and works at any ε.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{
    c_transform, gibbs_kernel, CostMatrix, Direction, DiscreteMeasure, DualPair, TransportPlan,
};
use crate::sum::{pairwise_sum, pairwise_sum_by};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Linear,
    #[default]
    Log,
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Domain::Linear),
            "log" => Ok(Domain::Log),
            other => Err(Error::invalid(format!("unknown domain {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    /// Regularization ε.
    pub eps: f64,
    pub max_iters: usize,
    /// Marginal violation is measured every `check_every` iterations and at the last one.
    pub check_every: usize,
    /// Stop at the first checkpoint whose MCV is at or below this value.
    pub stop_mcv: Option<f64>,
    pub domain: Domain,
    /// Bounds applied to warm-start vectors.
    pub clamp_lo: f64,
    pub clamp_hi: f64,
}

impl SinkhornConfig {
    pub fn new(eps: f64) -> Self {
        Self {
            eps,
            max_iters: 10_000,
            check_every: 25,
            stop_mcv: None,
            domain: Domain::Log,
            clamp_lo: 1e-35,
            clamp_hi: 1e35,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::invalid(format!("eps {} must be positive", self.eps)));
        }
        if self.max_iters == 0 || self.check_every == 0 {
            return Err(Error::invalid(
                "max_iters and check_every must be at least 1",
            ));
        }
        if !(self.clamp_lo > 0.0 && self.clamp_lo < self.clamp_hi) {
            return Err(Error::invalid(format!(
                "clamp range [{}, {}] is empty or not positive",
                self.clamp_lo, self.clamp_hi
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub mcv: f64,
    /// `⟨C, Γ⟩` of the plan assembled at this iteration.
    pub primal_cost: f64,
    pub wall_time_ns: u64,
}

#[derive(Debug, Clone)]
pub struct SinkhornTrace {
    pub records: Vec<TraceRecord>,
    /// `log u`, so that `f_ε = ε log u` even when `u` itself would overflow.
    pub log_u: Array1<f64>,
    pub log_v: Array1<f64>,
    pub plan: TransportPlan,
    pub iterations: usize,
    pub eps: f64,
}

impl SinkhornTrace {
    /// `(ε log u, ε log v)`
    pub fn potentials(&self) -> DualPair {
        DualPair::new(&self.log_u * self.eps, &self.log_v * self.eps)
    }

    /// `(u, v)`; entries may overflow to infinity at small ε.
    pub fn scalings(&self) -> (Array1<f64>, Array1<f64>) {
        (self.log_u.mapv(f64::exp), self.log_v.mapv(f64::exp))
    }

    pub fn final_mcv(&self) -> f64 {
        self.records.last().map_or(f64::INFINITY, |r| r.mcv)
    }

    /// First checkpoint iteration whose MCV is at or below `threshold`.
    pub fn iterations_to(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.mcv <= threshold)
            .map(|r| r.iteration)
    }

    /// Adds time spent before the run (warm-start construction) to every record.
    pub fn shift_wall_time(&mut self, ns: u64) {
        for r in &mut self.records {
            r.wall_time_ns += ns;
        }
    }
}

/// Runs Sinkhorn from `v0` (strictly positive, finite).
pub fn sinkhorn_run(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
    cfg: &SinkhornConfig,
    v0: ArrayView1<f64>,
) -> Result<SinkhornTrace> {
    if let Some(x) = v0.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::invalid(format!(
            "initial scaling entry {x} is not positive and finite"
        )));
    }
    sinkhorn_run_log_init(mu, nu, cost, cfg, v0.mapv(f64::ln).view())
}

/// Same as [`sinkhorn_run`] with the initial scaling given as `log v0`.
pub fn sinkhorn_run_log_init(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
    cfg: &SinkhornConfig,
    log_v0: ArrayView1<f64>,
) -> Result<SinkhornTrace> {
    cfg.validate()?;
    let (m, n) = (mu.len(), nu.len());
    if cost.rows() != m || cost.cols() != n || log_v0.len() != n {
        return Err(Error::invalid(format!(
            "cost {}x{}, marginals {m} and {n}, initial scaling {}",
            cost.rows(),
            cost.cols(),
            log_v0.len()
        )));
    }
    if !mu.is_strictly_positive() || !nu.is_strictly_positive() {
        return Err(Error::invalid(
            "Sinkhorn requires strictly positive marginals",
        ));
    }
    if let Some(x) = log_v0.iter().find(|x| !x.is_finite()) {
        return Err(Error::invalid(format!(
            "initial log-scaling entry {x} is not finite"
        )));
    }
    let started = Instant::now();
    match cfg.domain {
        Domain::Log => LogRunner::new(mu, nu, cost, cfg).run(log_v0, started),
        Domain::Linear => LinearRunner::new(mu, nu, cost, cfg)?.run(log_v0, started),
    }
}

/// Shared checkpoint bookkeeping: assembles the plan into `buffer`, records
/// the MCV and transport cost.
struct Checkpoints<'a> {
    mu: &'a DiscreteMeasure,
    nu: &'a DiscreteMeasure,
    cost: &'a [f64],
    buffer: Vec<f64>,
    records: Vec<TraceRecord>,
}

impl<'a> Checkpoints<'a> {
    fn new(mu: &'a DiscreteMeasure, nu: &'a DiscreteMeasure, cost: &'a CostMatrix) -> Self {
        Self {
            mu,
            nu,
            cost: cost.entries().as_slice().expect("standard layout"),
            buffer: vec![0.0; mu.len() * nu.len()],
            records: Vec::new(),
        }
    }

    /// Records the plan currently held in `buffer`; returns its MCV.
    fn record(&mut self, iteration: usize, started: Instant) -> f64 {
        let (m, n) = (self.mu.len(), self.nu.len());
        let plan = &self.buffer;
        let row_err = pairwise_sum_by(m, &|i| {
            (pairwise_sum(&plan[i * n..(i + 1) * n]) - self.mu.weights()[i]).abs()
        });
        let col_err = pairwise_sum_by(n, &|j| {
            (pairwise_sum_by(m, &|i| plan[i * n + j]) - self.nu.weights()[j]).abs()
        });
        let mcv = (row_err + col_err) / 2.0;
        let primal_cost = crate::sum::dot(plan, self.cost);
        self.records.push(TraceRecord {
            iteration,
            mcv,
            primal_cost,
            wall_time_ns: started.elapsed().as_nanos() as u64,
        });
        mcv
    }

    fn finish(
        self,
        log_u: Array1<f64>,
        log_v: Array1<f64>,
        iterations: usize,
        eps: f64,
    ) -> Result<SinkhornTrace> {
        let (m, n) = (self.mu.len(), self.nu.len());
        let plan = Array2::from_shape_vec((m, n), self.buffer).expect("buffer shape");
        Ok(SinkhornTrace {
            records: self.records,
            log_u,
            log_v,
            plan: TransportPlan::new(plan, self.mu.clone(), self.nu.clone())?,
            iterations,
            eps,
        })
    }
}

fn is_checkpoint(l: usize, cfg: &SinkhornConfig) -> bool {
    l.is_multiple_of(cfg.check_every) || l == cfg.max_iters
}

fn reached(mcv: f64, cfg: &SinkhornConfig) -> bool {
    cfg.stop_mcv.is_some_and(|t| mcv <= t)
}

struct LogRunner<'a> {
    cfg: &'a SinkhornConfig,
    log_mu: Vec<f64>,
    log_nu: Vec<f64>,
    /// `C / ε`, row-major and transposed.
    scaled: Vec<f64>,
    scaled_t: Vec<f64>,
    checkpoints: Checkpoints<'a>,
    m: usize,
    n: usize,
}

/// `log Σ_k exp(x_k - s_k)`
fn log_sum_exp_shifted(x: &[f64], s: &[f64]) -> f64 {
    let mut top = f64::NEG_INFINITY;
    for (&a, &b) in x.iter().zip(s) {
        let t = a - b;
        top = if t > top { t } else { top };
    }
    let mut acc = 0.0;
    for (&a, &b) in x.iter().zip(s) {
        acc += (a - b - top).exp();
    }
    top + acc.ln()
}

impl<'a> LogRunner<'a> {
    fn new(
        mu: &'a DiscreteMeasure,
        nu: &'a DiscreteMeasure,
        cost: &'a CostMatrix,
        cfg: &'a SinkhornConfig,
    ) -> Self {
        let inv = 1.0 / cfg.eps;
        let scaled: Vec<f64> = cost.entries().iter().map(|c| c * inv).collect();
        let scaled_t: Vec<f64> = cost.entries().t().iter().map(|c| c * inv).collect();
        Self {
            cfg,
            log_mu: mu.weights().iter().map(|w| w.ln()).collect(),
            log_nu: nu.weights().iter().map(|w| w.ln()).collect(),
            scaled,
            scaled_t,
            checkpoints: Checkpoints::new(mu, nu, cost),
            m: mu.len(),
            n: nu.len(),
        }
    }

    fn run(mut self, log_v0: ArrayView1<f64>, started: Instant) -> Result<SinkhornTrace> {
        let (m, n) = (self.m, self.n);
        let mut a = vec![0.0; m];
        let mut b: Vec<f64> = log_v0.to_vec();
        let mut done = 0;
        for l in 1..=self.cfg.max_iters {
            for i in 0..m {
                a[i] = self.log_mu[i] - log_sum_exp_shifted(&b, &self.scaled[i * n..(i + 1) * n]);
            }
            for j in 0..n {
                b[j] = self.log_nu[j] - log_sum_exp_shifted(&a, &self.scaled_t[j * m..(j + 1) * m]);
            }
            done = l;
            if is_checkpoint(l, self.cfg) {
                for i in 0..m {
                    let row = &self.scaled[i * n..(i + 1) * n];
                    let out = &mut self.checkpoints.buffer[i * n..(i + 1) * n];
                    for j in 0..n {
                        out[j] = (a[i] + b[j] - row[j]).exp();
                    }
                }
                let mcv = self.checkpoints.record(l, started);
                if reached(mcv, self.cfg) {
                    break;
                }
            }
        }
        self.checkpoints
            .finish(Array1::from(a), Array1::from(b), done, self.cfg.eps)
    }
}

struct LinearRunner<'a> {
    cfg: &'a SinkhornConfig,
    kernel: Array2<f64>,
    checkpoints: Checkpoints<'a>,
}

impl<'a> LinearRunner<'a> {
    fn new(
        mu: &'a DiscreteMeasure,
        nu: &'a DiscreteMeasure,
        cost: &'a CostMatrix,
        cfg: &'a SinkhornConfig,
    ) -> Result<Self> {
        Ok(Self {
            cfg,
            kernel: gibbs_kernel(cost, cfg.eps)?,
            checkpoints: Checkpoints::new(mu, nu, cost),
        })
    }

    fn run(mut self, log_v0: ArrayView1<f64>, started: Instant) -> Result<SinkhornTrace> {
        let mu = self.checkpoints.mu.weights().clone();
        let nu = self.checkpoints.nu.weights().clone();
        let n = nu.len();
        let mut v = log_v0.mapv(f64::exp);
        check_scaling(&v, 0, "v")?;
        let mut u = Array1::zeros(mu.len());
        let mut done = 0;
        for l in 1..=self.cfg.max_iters {
            u = &mu / &self.kernel.dot(&v);
            check_scaling(&u, l, "u")?;
            v = &nu / &self.kernel.t().dot(&u);
            check_scaling(&v, l, "v")?;
            done = l;
            if is_checkpoint(l, self.cfg) {
                for (i, row) in self.kernel.outer_iter().enumerate() {
                    let out = &mut self.checkpoints.buffer[i * n..(i + 1) * n];
                    for j in 0..n {
                        out[j] = u[i] * row[j] * v[j];
                    }
                }
                let mcv = self.checkpoints.record(l, started);
                if reached(mcv, self.cfg) {
                    break;
                }
            }
        }
        let (log_u, log_v) = (u.mapv(f64::ln), v.mapv(f64::ln));
        self.checkpoints.finish(log_u, log_v, done, self.cfg.eps)
    }
}

fn check_scaling(x: &Array1<f64>, iteration: usize, name: &str) -> Result<()> {
    match x.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        None => Ok(()),
        Some(bad) => Err(Error::NumericalFailure {
            iteration,
            reason: format!("scaling {name} has entry {bad}; retry in the log domain"),
        }),
    }
}

/// `(ε log u, ε log v)` for positive scalings.
pub fn scalings_to_potentials(
    u: ArrayView1<f64>,
    v: ArrayView1<f64>,
    eps: f64,
) -> Result<DualPair> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps {eps} must be positive")));
    }
    if let Some(x) = u.iter().chain(v.iter()).find(|x| !(**x > 0.0)) {
        return Err(Error::invalid(format!("scaling entry {x} is not positive")));
    }
    Ok(DualPair::new(
        u.mapv(|x| eps * x.ln()),
        v.mapv(|x| eps * x.ln()),
    ))
}

/// Initial column scaling from a predicted row potential:
/// `v0_j = clamp(exp(f^C_j / ε), clamp_lo, clamp_hi)`.
///
/// The exponent is compared against the log-bounds first, so nothing
/// overflows on the way.
pub fn warm_start_vector(
    f_pred: ArrayView1<f64>,
    cost: &CostMatrix,
    cfg: &SinkhornConfig,
) -> Result<Array1<f64>> {
    cfg.validate()?;
    let g = c_transform(f_pred, cost, Direction::RowsToCols)?;
    let (lo, hi) = (cfg.clamp_lo.ln(), cfg.clamp_hi.ln());
    Ok(g.mapv(|gj| {
        let x = gj / cfg.eps;
        if x >= hi {
            cfg.clamp_hi
        } else if x <= lo {
            cfg.clamp_lo
        } else {
            x.exp().clamp(cfg.clamp_lo, cfg.clamp_hi)
        }
    }))
}

/// `|⟨C, Γ_l⟩ - exact| / exact` at every checkpoint.
pub fn relative_distance_error(trace: &SinkhornTrace, exact_value: f64) -> Result<Vec<f64>> {
    if !(exact_value > 0.0) {
        return Err(Error::invalid(format!(
            "exact value {exact_value} must be positive"
        )));
    }
    Ok(trace
        .records
        .iter()
        .map(|r| (r.primal_cost - exact_value).abs() / exact_value)
        .collect())
}
