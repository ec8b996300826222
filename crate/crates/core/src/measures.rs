//! Core domain types of discrete optimal transport: grid supports, probability
//! vectors, ground costs, couplings and dual potentials, together with the
//! objectives and transforms every other module builds on.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::sum::{dot, pairwise_sum, pairwise_sum_by};

/// Tolerance on `sum(weights) == 1` accepted by [`DiscreteMeasure::new`].
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Absolute slack allowed in `f_i + g_j <= C_ij`.
pub const DUAL_FEASIBILITY_TOLERANCE: f64 = 1e-9;

/// A `rows x cols` grid laid out row-major over the unit square.
///
/// Point `(i, j)` sits at `(i / (rows - 1), j / (cols - 1))`; a single row or
/// column is placed at `0.5`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGeometry {
    rows: usize,
    cols: usize,
    coords: Vec<[f64; 2]>,
}

impl GridGeometry {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!("empty grid {rows}x{cols}")));
        }
        let axis = |k: usize, len: usize| {
            if len == 1 {
                0.5
            } else {
                k as f64 / (len - 1) as f64
            }
        };
        let mut coords = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                coords.push([axis(i, rows), axis(j, cols)]);
            }
        }
        Ok(Self { rows, cols, coords })
    }

    pub fn square(side: usize) -> Result<Self> {
        Self::new(side, side)
    }

    /// A `1 x len` strip, used for measures whose support has no spatial meaning.
    pub fn line(len: usize) -> Result<Self> {
        Self::new(1, len)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }
}

/// A probability vector on a grid support.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    weights: Array1<f64>,
    geometry: Arc<GridGeometry>,
}

impl DiscreteMeasure {
    /// Wraps weights that already form a probability vector.
    pub fn new(weights: Array1<f64>, geometry: Arc<GridGeometry>) -> Result<Self> {
        if weights.len() != geometry.len() {
            return Err(Error::invalid(format!(
                "measure has {} weights but the grid has {} points",
                weights.len(),
                geometry.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::invalid(format!(
                "weight {w} is not a nonnegative real"
            )));
        }
        let mass = pairwise_sum(weights.as_slice().expect("contiguous"));
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::invalid(format!("weights sum to {mass}, not 1")));
        }
        Ok(Self { weights, geometry })
    }

    /// Weights on a `1 x len` strip.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let geometry = Arc::new(GridGeometry::line(weights.len())?);
        Self::new(Array1::from(weights), geometry)
    }

    /// Divides nonnegative raw masses by their total.
    pub fn normalized(raw: Array1<f64>, geometry: Arc<GridGeometry>) -> Result<Self> {
        if let Some(w) = raw.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::invalid(format!(
                "raw mass {w} is not a nonnegative real"
            )));
        }
        let total = pairwise_sum(raw.as_slice().expect("contiguous"));
        if total <= 0.0 {
            return Err(Error::invalid("cannot normalize a measure with zero mass"));
        }
        Self::new(raw / total, geometry)
    }

    pub fn uniform(geometry: Arc<GridGeometry>) -> Self {
        let n = geometry.len();
        Self {
            weights: Array1::from_elem(n, 1.0 / n as f64),
            geometry,
        }
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn as_slice(&self) -> &[f64] {
        self.weights.as_slice().expect("contiguous")
    }

    pub fn geometry(&self) -> &Arc<GridGeometry> {
        &self.geometry
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// True iff every weight is positive (required by Sinkhorn).
    pub fn is_strictly_positive(&self) -> bool {
        self.weights.iter().all(|&w| w > 0.0)
    }
}

/// Ground cost between two supports.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: Array2<f64>,
    metric_power: f64,
}

impl CostMatrix {
    /// Arbitrary nonnegative costs; `metric_power` is recorded as 1.
    pub fn from_entries(entries: Array2<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("empty cost matrix"));
        }
        if let Some(c) = entries.iter().find(|c| !c.is_finite() || **c < 0.0) {
            return Err(Error::invalid(format!(
                "cost entry {c} is not a nonnegative real"
            )));
        }
        Ok(Self {
            entries: entries.as_standard_layout().to_owned(),
            metric_power: 1.0,
        })
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn metric_power(&self) -> f64 {
        self.metric_power
    }

    pub fn max(&self) -> f64 {
        self.entries.iter().copied().fold(0.0, f64::max)
    }

    pub fn transposed(&self) -> Self {
        Self {
            entries: self.entries.t().as_standard_layout().to_owned(),
            metric_power: self.metric_power,
        }
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::invalid(format!("cost scale {s} must be positive")));
        }
        Ok(Self {
            entries: &self.entries * s,
            metric_power: self.metric_power,
        })
    }

    fn row(&self, i: usize) -> &[f64] {
        let n = self.cols();
        &self.entries.as_slice().expect("standard layout")[i * n..(i + 1) * n]
    }
}

/// `C_ij = |x_i - y_j|^power` over unit-square coordinates, row-major in both grids.
pub fn build_cost(a: &GridGeometry, b: &GridGeometry, power: f64) -> Result<CostMatrix> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("empty geometry"));
    }
    if !(power >= 1.0 && power.is_finite()) {
        return Err(Error::invalid(format!("metric power {power} must be >= 1")));
    }
    let entries = Array2::from_shape_fn((a.len(), b.len()), |(i, j)| {
        let [x0, x1] = a.coords[i];
        let [y0, y1] = b.coords[j];
        let d2 = (x0 - y0) * (x0 - y0) + (x1 - y1) * (x1 - y1);
        if power == 2.0 {
            d2
        } else {
            d2.powf(power / 2.0)
        }
    });
    Ok(CostMatrix {
        entries,
        metric_power: power,
    })
}

/// A coupling together with the marginals it is meant to match.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    entries: Array2<f64>,
    row_target: DiscreteMeasure,
    col_target: DiscreteMeasure,
}

impl TransportPlan {
    pub fn new(
        entries: Array2<f64>,
        row_target: DiscreteMeasure,
        col_target: DiscreteMeasure,
    ) -> Result<Self> {
        if entries.dim() != (row_target.len(), col_target.len()) {
            return Err(Error::invalid(format!(
                "plan shape {:?} does not match marginals ({}, {})",
                entries.dim(),
                row_target.len(),
                col_target.len()
            )));
        }
        if let Some(x) = entries.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::invalid(format!(
                "plan entry {x} is not a nonnegative real"
            )));
        }
        Ok(Self {
            entries: entries.as_standard_layout().to_owned(),
            row_target,
            col_target,
        })
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn row_target(&self) -> &DiscreteMeasure {
        &self.row_target
    }

    pub fn col_target(&self) -> &DiscreteMeasure {
        &self.col_target
    }

    /// `Γ 1_n`
    pub fn row_sums(&self) -> Array1<f64> {
        self.entries
            .axis_iter(Axis(0))
            .map(|row| pairwise_sum(row.as_slice().expect("standard layout")))
            .collect()
    }

    /// `Γᵀ 1_m`
    pub fn col_sums(&self) -> Array1<f64> {
        let (m, n) = self.entries.dim();
        let data = self.entries.as_slice().expect("standard layout");
        (0..n)
            .map(|j| pairwise_sum_by(m, &|i| data[i * n + j]))
            .collect()
    }

    /// ℓ1 errors of the row and column sums against their targets.
    pub fn marginal_errors(&self) -> (f64, f64) {
        let rows = l1_distance(self.row_sums().view(), self.row_target.weights.view());
        let cols = l1_distance(self.col_sums().view(), self.col_target.weights.view());
        (rows, cols)
    }

    /// Membership in `Π(μ, ν)` up to `tol` in ℓ1 on each marginal.
    pub fn feasible(&self, tol: f64) -> bool {
        let (r, c) = self.marginal_errors();
        r <= tol && c <= tol
    }
}

fn l1_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    pairwise_sum_by(a.len(), &|i| (a[i] - b[i]).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    #[default]
    None,
    FZeroSum,
}

/// Dual potentials `(f, g)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPair {
    pub f: Array1<f64>,
    pub g: Array1<f64>,
    pub centering: Centering,
}

impl DualPair {
    pub fn new(f: Array1<f64>, g: Array1<f64>) -> Self {
        Self {
            f,
            g,
            centering: Centering::None,
        }
    }

    /// Largest `f_i + g_j - C_ij`; nonpositive iff exactly feasible.
    pub fn max_violation(&self, cost: &CostMatrix) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (i, &fi) in self.f.iter().enumerate() {
            for (&c, &gj) in cost.row(i).iter().zip(self.g.iter()) {
                worst = worst.max(fi + gj - c);
            }
        }
        worst
    }

    /// `f_i + g_j <= C_ij + 1e-9` for all `i, j`.
    pub fn feasible(&self, cost: &CostMatrix) -> bool {
        self.f.len() == cost.rows()
            && self.g.len() == cost.cols()
            && self.max_violation(cost) <= DUAL_FEASIBILITY_TOLERANCE
    }
}

/// Real numbers extended with `-∞`, the value entropy takes on matrices with
/// a negative entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    NegInfinity,
}

impl ExtendedReal {
    pub fn is_finite(self) -> bool {
        matches!(self, ExtendedReal::Finite(_))
    }

    pub fn to_f64(self) -> f64 {
        match self {
            ExtendedReal::Finite(x) => x,
            ExtendedReal::NegInfinity => f64::NEG_INFINITY,
        }
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "regularization {eps} must be positive"
        )))
    }
}

fn check_dims(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{what}: dimension {got}, expected {want}"
        )))
    }
}

/// `⟨C, Γ⟩`
pub fn primal_cost(plan: &TransportPlan, cost: &CostMatrix) -> Result<f64> {
    check_dims("plan rows", plan.entries.nrows(), cost.rows())?;
    check_dims("plan cols", plan.entries.ncols(), cost.cols())?;
    Ok(frobenius(plan.entries.view(), cost.entries.view()))
}

pub(crate) fn frobenius(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    dot(
        a.as_slice().expect("standard layout"),
        b.as_slice().expect("standard layout"),
    )
}

/// `⟨f, μ⟩ + ⟨g, ν⟩`, without any feasibility check.
pub fn dual_value(duals: &DualPair, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    check_dims("f", duals.f.len(), mu.len())?;
    check_dims("g", duals.g.len(), nu.len())?;
    let f = duals.f.as_slice().expect("contiguous");
    let g = duals.g.as_slice().expect("contiguous");
    Ok(dot(f, mu.as_slice()) + dot(g, nu.as_slice()))
}

/// `H(P) = -Σ p (log p - 1)` with `0 log 0 = 0`, or `-∞` if any entry is negative.
pub fn entropy(p: ArrayView2<f64>) -> ExtendedReal {
    if p.iter().any(|&x| x < 0.0) {
        return ExtendedReal::NegInfinity;
    }
    let terms: Vec<f64> = p
        .iter()
        .map(|&x| if x == 0.0 { 0.0 } else { -x * (x.ln() - 1.0) })
        .collect();
    ExtendedReal::Finite(pairwise_sum(&terms))
}

/// `⟨C, Γ⟩ - ε H(Γ)`
pub fn entropic_primal_objective(plan: &TransportPlan, cost: &CostMatrix, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let transport = primal_cost(plan, cost)?;
    Ok(transport - eps * entropy(plan.entries.view()).to_f64())
}

/// `K = exp(-C / ε)`. Entries underflow to zero once `C/ε` exceeds about 745.
pub fn gibbs_kernel(cost: &CostMatrix, eps: f64) -> Result<Array2<f64>> {
    check_eps(eps)?;
    Ok(cost.entries.mapv(|c| (-c / eps).exp()))
}

/// `⟨f, μ⟩ + ⟨g, ν⟩ - ε ⟨e^{f/ε}, K e^{g/ε}⟩`.
///
/// The bilinear term is evaluated as `ε · e^M · Σ exp((f_i + g_j - C_ij)/ε - M)`
/// with `M` the largest exponent, so it neither overflows nor underflows.
pub fn entropic_dual_value(
    duals: &DualPair,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
    eps: f64,
) -> Result<f64> {
    check_eps(eps)?;
    check_dims("cost rows", cost.rows(), mu.len())?;
    check_dims("cost cols", cost.cols(), nu.len())?;
    let linear = dual_value(duals, mu, nu)?;
    let (m, n) = (cost.rows(), cost.cols());
    let c = cost.entries.as_slice().expect("standard layout");
    let exponent = |k: usize| (duals.f[k / n] + duals.g[k % n] - c[k]) / eps;
    let top = (0..m * n).map(exponent).fold(f64::NEG_INFINITY, f64::max);
    let scaled = pairwise_sum_by(m * n, &|k| (exponent(k) - top).exp());
    Ok(linear - eps * top.exp() * scaled)
}

/// Which side of the cost matrix the input potential lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `g_j = min_i C_ij - f_i`
    RowsToCols,
    /// `f_i = min_j C_ij - g_j`
    ColsToRows,
}

/// The C-transform of a potential.
pub fn c_transform(
    potential: ArrayView1<f64>,
    cost: &CostMatrix,
    direction: Direction,
) -> Result<Array1<f64>> {
    let (m, n) = (cost.rows(), cost.cols());
    match direction {
        Direction::RowsToCols => {
            check_dims("potential", potential.len(), m)?;
            let mut out = Array1::from_elem(n, f64::INFINITY);
            for i in 0..m {
                let fi = potential[i];
                for (o, &c) in out.iter_mut().zip(cost.row(i)) {
                    *o = o.min(c - fi);
                }
            }
            Ok(out)
        }
        Direction::ColsToRows => {
            check_dims("potential", potential.len(), n)?;
            Ok((0..m)
                .map(|i| {
                    cost.row(i)
                        .iter()
                        .zip(potential.iter())
                        .map(|(&c, &g)| c - g)
                        .fold(f64::INFINITY, f64::min)
                })
                .collect())
        }
    }
}

/// `(‖Γᵀ1 - ν‖₁ + ‖Γ1 - μ‖₁) / 2`
pub fn marginal_constraint_violation(plan: &TransportPlan) -> f64 {
    let (r, c) = plan.marginal_errors();
    (r + c) / 2.0
}

/// Shifts `f` to zero sum. `g` is left as is, so the dual value changes
/// unless the caller compensates.
pub fn center_f_zero_sum(duals: &DualPair) -> DualPair {
    let mean = pairwise_sum(duals.f.as_slice().expect("contiguous")) / duals.f.len().max(1) as f64;
    DualPair {
        f: duals.f.mapv(|x| x - mean),
        g: duals.g.clone(),
        centering: Centering::FZeroSum,
    }
}
