//! Barycenters by descent on the sum of dual objectives.
//!
//! At each step the row potentials `f_i` for `(μ', ν_i)` are recomputed and
//! held fixed; `Σ_i f_i` is then a supergradient of `μ' ↦ Σ_i W(μ', ν_i)`.

use ndarray::{Array1, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::solve_exact;
use crate::measures::{c_transform, CostMatrix, Direction, DiscreteMeasure};
use crate::sum::{dot, pairwise_sum};

/// Source of row potentials `f` for a pair `(μ, ν)`.
pub trait PotentialOracle: Sync {
    fn potential(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<Array1<f64>>;
}

/// Potentials from the network simplex solver.
pub struct ExactPotentials<'a> {
    pub cost: &'a CostMatrix,
}

impl PotentialOracle for ExactPotentials<'_> {
    fn potential(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<Array1<f64>> {
        Ok(solve_exact(mu, nu, self.cost)?.duals.f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialSource {
    #[default]
    Exact,
    Approximator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimplexHandling {
    #[default]
    EuclideanProject,
    SoftmaxReparam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `μ' ← update(μ' - η Σ f_i)` every step, increases included.
    Fixed,
    /// Proximal bundle steps: the potentials gathered so far define a
    /// cutting-plane model of the objective, and a step is only taken when it
    /// realizes a fixed fraction of the decrease the model predicts. Needed
    /// because the objective is piecewise linear in `μ'` and a single
    /// potential is often not a descent direction.
    #[default]
    Bundle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarycenterConfig {
    /// Step size η; the proximal parameter under [`StepRule::Bundle`].
    pub step: f64,
    /// Number of potential evaluations (each covering every input measure).
    pub max_steps: usize,
    pub source: PotentialSource,
    pub simplex: SimplexHandling,
    pub step_rule: StepRule,
    /// Bundle steps stop once the model predicts less decrease than this.
    pub tol: f64,
    pub bundle_size: usize,
}

impl Default for BarycenterConfig {
    fn default() -> Self {
        Self {
            step: 0.05,
            max_steps: 500,
            source: PotentialSource::Exact,
            simplex: SimplexHandling::EuclideanProject,
            step_rule: StepRule::Bundle,
            tol: 1e-12,
            bundle_size: 32,
        }
    }
}

impl BarycenterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid(format!(
                "step size {} must be positive",
                self.step
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps must be at least 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid(format!(
                "tolerance {} must be nonnegative",
                self.tol
            )));
        }
        if self.step_rule == StepRule::Bundle {
            if self.simplex != SimplexHandling::EuclideanProject {
                return Err(Error::invalid(
                    "bundle steps work with Euclidean projection only",
                ));
            }
            if self.bundle_size < 2 {
                return Err(Error::invalid("bundle_size must be at least 2"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BarycenterResult {
    pub mu: DiscreteMeasure,
    /// Objective at the initial point and after every step taken.
    pub objective: Vec<f64>,
    /// Steps taken.
    pub steps: usize,
    /// Potential evaluations spent.
    pub evaluations: usize,
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(x: ArrayView1<f64>) -> Array1<f64> {
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    x.mapv(|v| (v - theta).max(0.0))
}

fn softmax(theta: &Array1<f64>) -> Array1<f64> {
    let top = theta.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = theta.mapv(|t| (t - top).exp());
    let total = pairwise_sum(e.as_slice().unwrap());
    e / total
}

/// Turns an unnormalized candidate into a measure, absorbing rounding in the mass.
fn to_measure(w: Array1<f64>, like: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    let total = pairwise_sum(w.as_slice().unwrap());
    DiscreteMeasure::new(w / total, like.geometry().clone())
}

struct Evaluation {
    value: f64,
    gradient: Array1<f64>,
}

fn evaluate(
    mu: &DiscreteMeasure,
    nus: &[DiscreteMeasure],
    cost: &CostMatrix,
    oracle: &dyn PotentialOracle,
) -> Result<Evaluation> {
    let parts: Vec<(f64, Array1<f64>)> = nus
        .par_iter()
        .map(|nu| {
            let f = oracle.potential(mu, nu)?;
            let g = c_transform(f.view(), cost, Direction::RowsToCols)?;
            let value = dot(f.as_slice().unwrap(), mu.as_slice())
                + dot(g.as_slice().unwrap(), nu.as_slice());
            Ok((value, f))
        })
        .collect::<Result<_>>()?;
    let mut gradient = Array1::zeros(mu.len());
    let mut values = Vec::with_capacity(parts.len());
    for (v, f) in parts {
        values.push(v);
        gradient += &f;
    }
    Ok(Evaluation {
        value: pairwise_sum(&values),
        gradient,
    })
}

/// Minimizes `Σ_i W(μ', ν_i)` over `μ'` starting from `init` (uniform if `None`).
pub fn barycenter_descent(
    nus: &[DiscreteMeasure],
    cost: &CostMatrix,
    cfg: &BarycenterConfig,
    oracle: &dyn PotentialOracle,
    init: Option<&DiscreteMeasure>,
) -> Result<BarycenterResult> {
    cfg.validate()?;
    let first = nus
        .first()
        .ok_or_else(|| Error::invalid("barycenter of an empty family"))?;
    for (k, nu) in nus.iter().enumerate() {
        let g = nu.geometry();
        if g.rows() != first.geometry().rows() || g.cols() != first.geometry().cols() {
            return Err(Error::invalid(format!(
                "measure {k} lives on a different grid"
            )));
        }
    }
    if cost.rows() != first.len() || cost.cols() != first.len() {
        return Err(Error::invalid(format!(
            "cost is {}x{}, measures have {} cells",
            cost.rows(),
            cost.cols(),
            first.len()
        )));
    }
    let mu = match init {
        Some(m) if m.len() == first.len() => m.clone(),
        Some(m) => {
            return Err(Error::invalid(format!(
                "initial measure has {} cells, expected {}",
                m.len(),
                first.len()
            )))
        }
        None => DiscreteMeasure::uniform(first.geometry().clone()),
    };
    match cfg.step_rule {
        StepRule::Fixed => fixed_steps(mu, nus, cost, cfg, oracle),
        StepRule::Bundle => bundle_steps(mu, nus, cost, cfg, oracle),
    }
}

fn fixed_steps(
    mut mu: DiscreteMeasure,
    nus: &[DiscreteMeasure],
    cost: &CostMatrix,
    cfg: &BarycenterConfig,
    oracle: &dyn PotentialOracle,
) -> Result<BarycenterResult> {
    let mut theta = mu.weights().mapv(|w| w.max(1e-300).ln());
    let mut current = evaluate(&mu, nus, cost, oracle)?;
    let mut objective = vec![current.value];
    let mut increases = 0;
    for step in 1..=cfg.max_steps {
        let grad = &current.gradient;
        mu = match cfg.simplex {
            SimplexHandling::EuclideanProject => to_measure(
                project_simplex((mu.weights() - &(grad * cfg.step)).view()),
                &mu,
            )?,
            SimplexHandling::SoftmaxReparam => {
                let w = mu.weights();
                let mean = dot(grad.as_slice().unwrap(), w.as_slice().unwrap());
                theta = &theta - &(w * &(grad - mean) * cfg.step);
                to_measure(softmax(&theta), &mu)?
            }
        };
        let next = evaluate(&mu, nus, cost, oracle)?;
        increases = if next.value > current.value {
            increases + 1
        } else {
            0
        };
        current = next;
        objective.push(current.value);
        if increases >= 10 {
            return Err(Error::Diverged { step });
        }
    }
    Ok(BarycenterResult {
        mu,
        objective,
        steps: cfg.max_steps,
        evaluations: cfg.max_steps + 1,
    })
}

/// A linearization `l(x) = value + ⟨grad, x - point⟩` of the objective.
struct Cut {
    point: Array1<f64>,
    value: f64,
    grad: Array1<f64>,
}

impl Cut {
    fn at(&self, x: &Array1<f64>) -> f64 {
        self.value
            + dot(
                self.grad.as_slice().unwrap(),
                (x - &self.point).as_slice().unwrap(),
            )
    }
}

/// Fraction of the predicted decrease a trial point must realize to be taken.
const SUFFICIENT_DECREASE: f64 = 0.1;

/// Solves `min_{x ∈ Δ} max_k l_k(x) + ‖x - center‖² / 2t` through its dual over
/// the cut weights `λ ∈ Δ`, where `x(λ) = P_Δ(center - t Σ λ_k g_k)`.
fn prox_model_step(cuts: &[Cut], center: &Array1<f64>, t: f64) -> (Array1<f64>, Array1<f64>) {
    let k = cuts.len();
    let point = |lambda: &Array1<f64>| {
        let mut d = Array1::zeros(center.len());
        for (l, c) in lambda.iter().zip(cuts) {
            d.scaled_add(*l, &c.grad);
        }
        project_simplex((center - &(d * t)).view())
    };
    if k == 1 {
        return (point(&Array1::ones(1)), Array1::ones(1));
    }
    let norms: f64 = cuts
        .iter()
        .map(|c| dot(c.grad.as_slice().unwrap(), c.grad.as_slice().unwrap()))
        .sum();
    let rate = 1.0 / (t * norms).max(f64::MIN_POSITIVE);
    let prox = |x: &Array1<f64>| (x - center).mapv(|v| v * v).sum() / (2.0 * t);
    // Accelerated projected ascent on λ; the gap between the best primal and
    // dual values bounds the suboptimality of the returned point.
    let mut lambda = Array1::from_elem(k, 1.0 / k as f64);
    let mut ahead = lambda.clone();
    let mut momentum = 1.0f64;
    let mut best_primal = (f64::INFINITY, point(&lambda), lambda.clone());
    let mut best_dual = f64::NEG_INFINITY;
    for _ in 0..2000 {
        let x = point(&ahead);
        let values: Array1<f64> = cuts.iter().map(|c| c.at(&x)).collect();
        let model = values.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let p = model + prox(&x);
        let d = dot(ahead.as_slice().unwrap(), values.as_slice().unwrap()) + prox(&x);
        if p < best_primal.0 {
            best_primal = (p, x, ahead.clone());
        }
        best_dual = best_dual.max(d);
        if best_primal.0 - best_dual <= 1e-13 * best_primal.0.abs().max(1.0) {
            break;
        }
        let next = project_simplex((&ahead + &(values * rate)).view());
        let next_momentum = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        ahead = &next + &((&next - &lambda) * ((momentum - 1.0) / next_momentum));
        ahead = project_simplex(ahead.view());
        lambda = next;
        momentum = next_momentum;
    }
    (best_primal.1, best_primal.2)
}

fn bundle_steps(
    mut mu: DiscreteMeasure,
    nus: &[DiscreteMeasure],
    cost: &CostMatrix,
    cfg: &BarycenterConfig,
    oracle: &dyn PotentialOracle,
) -> Result<BarycenterResult> {
    let first = evaluate(&mu, nus, cost, oracle)?;
    let mut center_value = first.value;
    let mut cuts = vec![Cut {
        point: mu.weights().clone(),
        value: first.value,
        grad: first.gradient,
    }];
    let mut objective = vec![center_value];
    let mut evaluations = 1;
    let t = cfg.step;
    while evaluations < cfg.max_steps {
        let center = mu.weights().clone();
        let (x, lambda) = prox_model_step(&cuts, &center, t);
        let model = cuts
            .iter()
            .map(|c| c.at(&x))
            .fold(f64::NEG_INFINITY, f64::max);
        let predicted = center_value - model;
        if predicted <= cfg.tol {
            break;
        }
        let candidate = to_measure(x, &mu)?;
        let eval = evaluate(&candidate, nus, cost, oracle)?;
        evaluations += 1;
        let cut = Cut {
            point: candidate.weights().clone(),
            value: eval.value,
            grad: eval.gradient,
        };
        if eval.value <= center_value - SUFFICIENT_DECREASE * predicted {
            mu = candidate;
            center_value = eval.value;
            objective.push(center_value);
        }
        if cuts.len() >= cfg.bundle_size {
            // Fold the cuts into their λ-weighted aggregate, which keeps the
            // model's minimizer, and keep the one at the center.
            let mut grad = Array1::zeros(center.len());
            let mut value = 0.0;
            for (l, c) in lambda.iter().zip(&cuts) {
                grad.scaled_add(*l, &c.grad);
                value += l * c.at(&center);
            }
            let aggregate = Cut {
                point: center.clone(),
                value,
                grad,
            };
            let here = mu.weights();
            cuts.sort_by(|a, b| b.at(here).total_cmp(&a.at(here)));
            cuts.truncate(1);
            cuts.push(aggregate);
        }
        cuts.push(cut);
    }
    let steps = objective.len() - 1;
    Ok(BarycenterResult {
        mu,
        objective,
        steps,
        evaluations,
    })
}

#[derive(Debug, Clone)]
pub struct NoiseReport {
    /// `⟨f, μ⟩`
    pub base: f64,
    /// Per-trial `⟨f + σ, μ⟩ - ⟨f, μ⟩`, evaluated as `⟨σ, μ⟩`.
    pub deviations: Vec<f64>,
    pub mean_deviation: f64,
    pub std_error: f64,
}

impl NoiseReport {
    /// Whether the mean deviation lies within `k` standard errors of zero.
    pub fn within(&self, k: f64) -> bool {
        self.mean_deviation.abs() <= k * self.std_error
    }
}

/// Monte-Carlo check that zero-mean i.i.d. Gaussian errors in a potential
/// cancel in expectation inside `⟨f, μ⟩`.
pub fn noise_cancellation_check(
    f: ArrayView1<f64>,
    mu: &DiscreteMeasure,
    noise_scale: f64,
    trials: usize,
    seed: u64,
) -> Result<NoiseReport> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    if f.len() != mu.len() {
        return Err(Error::invalid(format!(
            "potential has {} entries, measure {}",
            f.len(),
            mu.len()
        )));
    }
    let normal = Normal::new(0.0, noise_scale).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = dot(f.to_vec().as_slice(), mu.as_slice());
    let mut sigma = vec![0.0; mu.len()];
    let deviations: Vec<f64> = (0..trials)
        .map(|_| {
            for s in sigma.iter_mut() {
                *s = normal.sample(&mut rng);
            }
            dot(&sigma, mu.as_slice())
        })
        .collect();
    let n = trials as f64;
    let mean = pairwise_sum(&deviations) / n;
    let std_error = if trials > 1 {
        let sq: Vec<f64> = deviations.iter().map(|d| (d - mean).powi(2)).collect();
        (pairwise_sum(&sq) / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        0.0
    };
    Ok(NoiseReport {
        base,
        deviations,
        mean_deviation: mean,
        std_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{build_cost, GridGeometry};
    use ndarray::array;
    use std::sync::Arc;

    #[test]
    fn projection_examples() {
        assert_eq!(
            project_simplex(array![0.2, 0.3, 0.5].view()),
            array![0.2, 0.3, 0.5]
        );
        assert_eq!(project_simplex(array![2.0, 0.0].view()), array![1.0, 0.0]);
        assert_eq!(project_simplex(array![0.0, 0.0].view()), array![0.5, 0.5]);
        let p = project_simplex(array![0.9, 0.8, -3.0].view());
        assert!((p[0] - 0.55).abs() < 1e-15 && (p[1] - 0.45).abs() < 1e-15 && p[2] == 0.0);
    }

    #[test]
    fn projection_is_closest_point_among_random_simplex_points() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x: Array1<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = project_simplex(x.view());
            assert!((p.sum() - 1.0).abs() < 1e-12 && p.iter().all(|&v| v >= 0.0));
            let d = (&x - &p).mapv(|v| v * v).sum();
            for _ in 0..200 {
                let raw: Array1<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
                let q = &raw / raw.sum();
                assert!((&x - &q).mapv(|v| v * v).sum() >= d - 1e-12);
            }
        }
    }

    fn grid_measure(side: usize, raw: impl Fn(usize) -> f64) -> DiscreteMeasure {
        let geom = Arc::new(GridGeometry::square(side).unwrap());
        DiscreteMeasure::normalized((0..side * side).map(raw).collect(), geom).unwrap()
    }

    #[test]
    fn identical_inputs_are_their_own_barycenter() {
        let nu = grid_measure(4, |k| 1.0 + (k % 5) as f64);
        let cost = build_cost(nu.geometry(), nu.geometry(), 2.0).unwrap();
        let nus = vec![nu.clone(); 3];
        let oracle = ExactPotentials { cost: &cost };
        let res =
            barycenter_descent(&nus, &cost, &BarycenterConfig::default(), &oracle, None).unwrap();
        for w in res.objective.windows(2) {
            assert!(w[1] <= w[0]);
        }
        let l1 = (res.mu.weights() - nu.weights()).mapv(f64::abs).sum();
        assert!(l1 <= 1e-3, "l1 {l1}");
        assert!(*res.objective.last().unwrap() <= 1e-6);
    }

    #[test]
    fn two_point_masses() {
        let (a, b) = (0, 15);
        let nus = [a, b].map(|c| grid_measure(4, |k| if k == c { 1.0 } else { 1e-6 }));
        let cost = build_cost(nus[0].geometry(), nus[0].geometry(), 2.0).unwrap();
        let oracle = ExactPotentials { cost: &cost };
        let res =
            barycenter_descent(&nus, &cost, &BarycenterConfig::default(), &oracle, None).unwrap();
        let at = |mu: &DiscreteMeasure| -> f64 {
            nus.iter()
                .map(|nu| solve_exact(mu, nu, &cost).unwrap().primal_value)
                .sum()
        };
        let reached = *res.objective.last().unwrap();
        assert!((reached - at(&res.mu)).abs() < 1e-9);
        assert!(reached <= at(&nus[0]) && reached <= at(&nus[1]));
    }

    #[test]
    fn fixed_steps_stay_on_the_simplex() {
        let nu = grid_measure(3, |k| 1.0 + k as f64);
        let cost = build_cost(nu.geometry(), nu.geometry(), 2.0).unwrap();
        let oracle = ExactPotentials { cost: &cost };
        for simplex in [
            SimplexHandling::EuclideanProject,
            SimplexHandling::SoftmaxReparam,
        ] {
            let cfg = BarycenterConfig {
                step: 0.001,
                max_steps: 20,
                simplex,
                step_rule: StepRule::Fixed,
                ..BarycenterConfig::default()
            };
            let res =
                barycenter_descent(&[nu.clone(), nu.clone()], &cost, &cfg, &oracle, None).unwrap();
            assert_eq!(res.objective.len(), 21);
            assert!(res.objective[20] < res.objective[0]);
            assert!((res.mu.weights().sum() - 1.0).abs() < 1e-12);
        }
    }

    /// Returns `-c_k e_0` with `c_k` growing per call. While `ν_0 > μ'_0` the
    /// dual value `c_k (ν_0 - μ'_0)` then rises at every step.
    struct Climbing(std::sync::atomic::AtomicUsize);

    impl PotentialOracle for Climbing {
        fn potential(&self, mu: &DiscreteMeasure, _nu: &DiscreteMeasure) -> Result<Array1<f64>> {
            let k = self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
            let mut f = Array1::zeros(mu.len());
            f[0] = -1e-3 * k as f64;
            Ok(f)
        }
    }

    #[test]
    fn fixed_steps_report_divergence() {
        let nu = grid_measure(3, |k| if k == 0 { 10.0 } else { 1.0 });
        let cost = build_cost(nu.geometry(), nu.geometry(), 2.0).unwrap();
        let oracle = Climbing(Default::default());
        let cfg = BarycenterConfig {
            step: 0.01,
            step_rule: StepRule::Fixed,
            ..BarycenterConfig::default()
        };
        match barycenter_descent(&[nu], &cost, &cfg, &oracle, None) {
            Err(Error::Diverged { step }) => assert_eq!(step, 10),
            other => panic!("{:?}", other.map(|r| r.objective)),
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let geom = Arc::new(GridGeometry::square(2).unwrap());
        let cost = build_cost(&geom, &geom, 2.0).unwrap();
        let oracle = ExactPotentials { cost: &cost };
        let cfg = BarycenterConfig::default();
        assert!(barycenter_descent(&[], &cost, &cfg, &oracle, None).is_err());
        let nu = DiscreteMeasure::uniform(geom);
        let bad = BarycenterConfig { step: 0.0, ..cfg };
        assert!(barycenter_descent(std::slice::from_ref(&nu), &cost, &bad, &oracle, None).is_err());
        let bad = BarycenterConfig {
            simplex: SimplexHandling::SoftmaxReparam,
            ..cfg
        };
        assert!(barycenter_descent(&[nu], &cost, &bad, &oracle, None).is_err());
    }

    #[test]
    fn noise_examples() {
        let mu = DiscreteMeasure::from_weights(vec![0.25, 0.25, 0.5]).unwrap();
        let f = array![0.3, -1.0, 2.0];
        let r = noise_cancellation_check(f.view(), &mu, 0.0, 100, 1).unwrap();
        assert_eq!(r.mean_deviation, 0.0);
        assert!((r.base - 0.825).abs() < 1e-15);

        let point = DiscreteMeasure::from_weights(vec![0.0, 1.0, 0.0]).unwrap();
        let r = noise_cancellation_check(f.view(), &point, 0.5, 10, 2).unwrap();
        let normal = Normal::new(0.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for d in &r.deviations {
            let s: Vec<f64> = (0..3).map(|_| normal.sample(&mut rng)).collect();
            assert_eq!(*d, s[1]);
        }

        let r = noise_cancellation_check(f.view(), &mu, 0.3, 100_000, 3).unwrap();
        assert!(r.within(4.0), "{} vs {}", r.mean_deviation, r.std_error);
        assert!(noise_cancellation_check(f.view(), &mu, 0.3, 0, 3).is_err());
    }
}
