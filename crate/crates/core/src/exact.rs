//! Exact solver for the unregularized transport problem.
//!
//! Transportation network simplex: north-west-corner initial basis, Dantzig
//! pricing (most negative reduced cost, lexicographically smallest cell on
//! ties) and the strongly-feasible-tree leaving rule, which rules out cycling
//! under degeneracy. After every pivot the tree flows and potentials are
//! recomputed from scratch, which keeps round-off from accumulating across
//! thousands of pivots.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::measures::{
    dual_value, primal_cost, Centering, CostMatrix, DiscreteMeasure, DualPair, TransportPlan,
    DUAL_FEASIBILITY_TOLERANCE,
};
use crate::sum::pairwise_sum;

/// Tolerance used by every certificate check.
pub const CERTIFICATE_TOLERANCE: f64 = 1e-9;

/// Flows closer than this are treated as tied in the ratio test.
const TIE_TOLERANCE: f64 = 1e-13;

/// Primal-dual optimal pair for one instance.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub plan: TransportPlan,
    /// Centered so that `f` sums to zero; `g` is shifted to compensate.
    pub duals: DualPair,
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    /// Number of simplex pivots.
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExactSolver {
    /// Pivot cap; `None` picks a cap proportional to `(m + n) * max(m, n)`.
    pub max_pivots: Option<usize>,
}

/// Solves `min ⟨C, Γ⟩` over `Π(μ, ν)` and returns certified optimal duals.
pub fn solve_exact(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
) -> Result<ExactSolution> {
    ExactSolver::default().solve(mu, nu, cost)
}

impl ExactSolver {
    pub fn solve(
        &self,
        mu: &DiscreteMeasure,
        nu: &DiscreteMeasure,
        cost: &CostMatrix,
    ) -> Result<ExactSolution> {
        let (m, n) = (mu.len(), nu.len());
        if cost.rows() != m || cost.cols() != n {
            return Err(Error::invalid(format!(
                "cost is {}x{} but marginals have sizes {m} and {n}",
                cost.rows(),
                cost.cols()
            )));
        }
        let (mass_mu, mass_nu) = (pairwise_sum(mu.as_slice()), pairwise_sum(nu.as_slice()));
        if (mass_mu - mass_nu).abs() > CERTIFICATE_TOLERANCE {
            return Err(Error::invalid(format!(
                "marginal masses differ: {mass_mu} vs {mass_nu}"
            )));
        }

        // Zero-weight nodes carry no flow; they are solved out and their
        // potentials filled in by C-transforms afterwards.
        let rows: Vec<usize> = (0..m).filter(|&i| mu.weights()[i] > 0.0).collect();
        let cols: Vec<usize> = (0..n).filter(|&j| nu.weights()[j] > 0.0).collect();
        let full = cost.entries().as_slice().expect("standard layout");
        let sub_cost: Vec<f64> = rows
            .iter()
            .flat_map(|&i| cols.iter().map(move |&j| full[i * n + j]))
            .collect();
        let supply: Vec<f64> = rows.iter().map(|&i| mu.weights()[i]).collect();
        let demand: Vec<f64> = cols.iter().map(|&j| nu.weights()[j]).collect();

        let (mr, nr) = (rows.len(), cols.len());
        let cap = self
            .max_pivots
            .unwrap_or_else(|| 50 * (mr + nr) * mr.max(nr) + 1000);
        let mut simplex = TreeSimplex::north_west(&sub_cost, supply, demand);
        let iterations = simplex.run(cap, cost.max())?;

        let mut plan = Array2::<f64>::zeros((m, n));
        for (&(i, j), &x) in simplex.arcs.iter().zip(&simplex.flow) {
            plan[[rows[i], cols[j]]] = x.max(0.0);
        }

        let mut f = Array1::from_elem(m, f64::NAN);
        let mut g = Array1::from_elem(n, f64::NAN);
        for (k, &i) in rows.iter().enumerate() {
            f[i] = simplex.f[k];
        }
        for (k, &j) in cols.iter().enumerate() {
            g[j] = simplex.g[k];
        }
        for j in (0..n).filter(|&j| nu.weights()[j] == 0.0) {
            g[j] = rows
                .iter()
                .map(|&i| full[i * n + j] - f[i])
                .fold(f64::INFINITY, f64::min);
        }
        for i in (0..m).filter(|&i| mu.weights()[i] == 0.0) {
            f[i] = (0..n)
                .map(|j| full[i * n + j] - g[j])
                .fold(f64::INFINITY, f64::min);
        }
        let shift = pairwise_sum(f.as_slice().expect("contiguous")) / m as f64;
        let duals = DualPair {
            f: f.mapv(|x| x - shift),
            g: g.mapv(|x| x + shift),
            centering: Centering::FZeroSum,
        };

        let plan = TransportPlan::new(plan, mu.clone(), nu.clone())?;
        let primal_value = primal_cost(&plan, cost)?;
        let dual = dual_value(&duals, mu, nu)?;
        Ok(ExactSolution {
            plan,
            duals,
            primal_value,
            dual_value: dual,
            gap: primal_value - dual,
            iterations,
        })
    }
}

/// Spanning-tree basis of the bipartite transportation network. Node `i < m`
/// is supply `i`, node `m + j` is demand `j`; the tree is rooted at supply 0.
struct TreeSimplex<'a> {
    cost: &'a [f64],
    m: usize,
    n: usize,
    supply: Vec<f64>,
    demand: Vec<f64>,
    arcs: Vec<(usize, usize)>,
    flow: Vec<f64>,
    adjacency: Vec<Vec<usize>>,
    parent: Vec<usize>,
    parent_arc: Vec<usize>,
    depth: Vec<usize>,
    order: Vec<usize>,
    excess: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    row_best: Vec<f64>,
}

impl<'a> TreeSimplex<'a> {
    fn north_west(cost: &'a [f64], supply: Vec<f64>, demand: Vec<f64>) -> Self {
        let (m, n) = (supply.len(), demand.len());
        let mut arcs = Vec::with_capacity(m + n - 1);
        let (mut ra, mut rb) = (supply.clone(), demand.clone());
        let (mut i, mut j) = (0, 0);
        loop {
            arcs.push((i, j));
            if i == m - 1 && j == n - 1 {
                break;
            }
            // Moving down on ties hangs zero-flow arcs below a demand node,
            // i.e. pointing toward the root, so the tree starts strongly feasible.
            let down = if i == m - 1 {
                false
            } else if j == n - 1 {
                true
            } else {
                ra[i] <= rb[j]
            };
            if down {
                rb[j] -= ra[i];
                ra[i] = 0.0;
                i += 1;
            } else {
                ra[i] -= rb[j];
                rb[j] = 0.0;
                j += 1;
            }
        }
        let nodes = m + n;
        let mut tree = Self {
            cost,
            m,
            n,
            supply,
            demand,
            flow: vec![0.0; arcs.len()],
            adjacency: vec![Vec::with_capacity(4); nodes],
            arcs,
            parent: vec![usize::MAX; nodes],
            parent_arc: vec![usize::MAX; nodes],
            depth: vec![0; nodes],
            order: Vec::with_capacity(nodes),
            excess: vec![0.0; nodes],
            f: vec![0.0; m],
            g: vec![0.0; n],
            row_best: vec![0.0; m],
        };
        for (a, &(i, j)) in tree.arcs.iter().enumerate() {
            tree.adjacency[i].push(a);
            tree.adjacency[m + j].push(a);
        }
        tree.rebuild();
        tree
    }

    fn other_end(&self, arc: usize, node: usize) -> usize {
        let (i, j) = self.arcs[arc];
        if node == i {
            self.m + j
        } else {
            i
        }
    }

    /// Recomputes parents, depths, flows and potentials from the arc set.
    fn rebuild(&mut self) {
        let nodes = self.m + self.n;
        self.order.clear();
        self.order.push(0);
        self.parent[0] = usize::MAX;
        self.parent_arc[0] = usize::MAX;
        self.depth[0] = 0;
        let mut head = 0;
        while head < self.order.len() {
            let v = self.order[head];
            head += 1;
            for k in 0..self.adjacency[v].len() {
                let a = self.adjacency[v][k];
                if a == self.parent_arc[v] {
                    continue;
                }
                let w = self.other_end(a, v);
                self.parent[w] = v;
                self.parent_arc[w] = a;
                self.depth[w] = self.depth[v] + 1;
                self.order.push(w);
            }
        }
        debug_assert_eq!(self.order.len(), nodes, "basis is not a spanning tree");

        for v in 0..self.m {
            self.excess[v] = self.supply[v];
        }
        for j in 0..self.n {
            self.excess[self.m + j] = -self.demand[j];
        }
        for &v in self.order[1..].iter().rev() {
            let a = self.parent_arc[v];
            let e = self.excess[v];
            self.flow[a] = if v < self.m { e } else { -e };
            self.excess[self.parent[v]] += e;
        }

        self.f[0] = 0.0;
        for &v in &self.order[1..] {
            let (i, j) = self.arcs[self.parent_arc[v]];
            let c = self.cost[i * self.n + j];
            if v < self.m {
                self.f[i] = c - self.g[j];
            } else {
                self.g[j] = c - self.f[i];
            }
        }
    }

    /// Most negative reduced cost `(C_ij - g_j) - f_i`, smallest `(i, j)` on ties.
    fn price(&mut self) -> (usize, usize, f64) {
        let n = self.n;
        for i in 0..self.m {
            let row = &self.cost[i * n..(i + 1) * n];
            self.row_best[i] = row_min_difference(row, &self.g) - self.f[i];
        }
        let mut bi = 0;
        for i in 1..self.m {
            if self.row_best[i] < self.row_best[bi] {
                bi = i;
            }
        }
        let target = self.row_best[bi];
        let fi = self.f[bi];
        let row = &self.cost[bi * n..(bi + 1) * n];
        let bj = (0..n)
            .find(|&j| (row[j] - self.g[j]) - fi == target)
            .expect("row minimum is attained");
        (bi, bj, target)
    }

    fn run(&mut self, max_pivots: usize, cost_scale: f64) -> Result<usize> {
        let optimality = 1e-12 * cost_scale.max(1.0);
        let mut path_k = Vec::new();
        let mut path_l = Vec::new();
        let mut cycle: Vec<(usize, bool)> = Vec::new();
        for pivots in 0.. {
            let (k, l, reduced) = self.price();
            if reduced >= -optimality {
                return Ok(pivots);
            }
            if pivots >= max_pivots {
                return Err(Error::SolverFailure {
                    iterations: pivots,
                    reason: format!("pivot cap reached; most negative reduced cost {reduced:e}"),
                });
            }

            // Walk both endpoints up to their common ancestor.
            path_k.clear();
            path_l.clear();
            let (mut a, mut b) = (k, self.m + l);
            while a != b {
                if self.depth[a] >= self.depth[b] {
                    path_k.push(a);
                    a = self.parent[a];
                } else {
                    path_l.push(b);
                    b = self.parent[b];
                }
            }

            // Orientation: apex -> k, the entering arc k -> l, then l -> apex.
            // Arcs run supply -> demand, so going down into a supply node or up
            // out of a demand node traverses an arc backwards and decreases it.
            cycle.clear();
            for &c in path_k.iter().rev() {
                cycle.push((self.parent_arc[c], c < self.m));
            }
            for &c in &path_l {
                cycle.push((self.parent_arc[c], c >= self.m));
            }
            let theta = cycle
                .iter()
                .filter(|(_, backward)| *backward)
                .map(|&(arc, _)| self.flow[arc])
                .fold(f64::INFINITY, f64::min);
            // Last blocking arc in orientation order keeps the tree strongly feasible.
            let leaving = cycle
                .iter()
                .rev()
                .find(|&&(arc, backward)| backward && self.flow[arc] <= theta + TIE_TOLERANCE)
                .map(|&(arc, _)| arc)
                .ok_or_else(|| Error::SolverFailure {
                    iterations: pivots,
                    reason: "pivot cycle has no blocking arc".into(),
                })?;

            let (li, lj) = self.arcs[leaving];
            self.adjacency[li].retain(|&x| x != leaving);
            self.adjacency[self.m + lj].retain(|&x| x != leaving);
            self.arcs[leaving] = (k, l);
            self.adjacency[k].push(leaving);
            self.adjacency[self.m + l].push(leaving);
            self.rebuild();
        }
        unreachable!()
    }
}

/// `min_j (row_j - g_j)`, in eight independent lanes so the loop vectorizes.
fn row_min_difference(row: &[f64], g: &[f64]) -> f64 {
    const LANES: usize = 8;
    let mut acc = [f64::INFINITY; LANES];
    let chunks = row.len() / LANES;
    for (rc, gc) in row.chunks_exact(LANES).zip(g.chunks_exact(LANES)) {
        for k in 0..LANES {
            let r = rc[k] - gc[k];
            acc[k] = if r < acc[k] { r } else { acc[k] };
        }
    }
    let mut best = acc
        .iter()
        .copied()
        .fold(f64::INFINITY, |a, b| if b < a { b } else { a });
    for j in chunks * LANES..row.len() {
        let r = row[j] - g[j];
        if r < best {
            best = r;
        }
    }
    best
}

/// Outcome of re-checking an [`ExactSolution`] against its instance.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    /// ℓ1 error of `Γ 1` against `μ`.
    pub row_marginal_error: f64,
    /// ℓ1 error of `Γᵀ 1` against `ν`.
    pub col_marginal_error: f64,
    /// Most negative plan entry (0 when the plan is nonnegative).
    pub min_plan_entry: f64,
    /// Largest `f_i + g_j - C_ij`.
    pub max_dual_violation: f64,
    /// `⟨C, Γ⟩ - ⟨f, μ⟩ - ⟨g, ν⟩`, recomputed.
    pub gap: f64,
    /// Largest `|f_i + g_j - C_ij|` over cells with `Γ_ij > 0`.
    pub max_slackness_violation: f64,
    pub primal_feasible: bool,
    pub dual_feasible: bool,
    pub gap_ok: bool,
    pub slackness_ok: bool,
}

impl CertificateReport {
    pub fn passed(&self) -> bool {
        self.primal_feasible && self.dual_feasible && self.gap_ok && self.slackness_ok
    }
}

/// Re-derives every optimality condition of `sol` from scratch.
pub fn verify_certificate(
    sol: &ExactSolution,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
) -> CertificateReport {
    let plan = sol.plan.entries();
    let (m, n) = plan.dim();
    let shapes_ok = (m, n) == (mu.len(), nu.len())
        && (m, n) == (cost.rows(), cost.cols())
        && sol.duals.f.len() == m
        && sol.duals.g.len() == n;
    if !shapes_ok {
        return CertificateReport {
            row_marginal_error: f64::INFINITY,
            col_marginal_error: f64::INFINITY,
            min_plan_entry: f64::NAN,
            max_dual_violation: f64::INFINITY,
            gap: f64::INFINITY,
            max_slackness_violation: f64::INFINITY,
            primal_feasible: false,
            dual_feasible: false,
            gap_ok: false,
            slackness_ok: false,
        };
    }

    let row_err: f64 = (0..m)
        .map(|i| {
            (pairwise_sum(plan.row(i).as_slice().expect("standard layout")) - mu.weights()[i]).abs()
        })
        .sum();
    let col_err: f64 = (0..n)
        .map(|j| (pairwise_sum(&plan.column(j).to_vec()) - nu.weights()[j]).abs())
        .sum();
    let min_entry = plan.iter().copied().fold(0.0, f64::min);

    let c = cost.entries();
    let (f, g) = (&sol.duals.f, &sol.duals.g);
    let mut max_violation = f64::NEG_INFINITY;
    let mut max_slack = 0.0f64;
    for i in 0..m {
        for j in 0..n {
            let r = f[i] + g[j] - c[[i, j]];
            max_violation = max_violation.max(r);
            if plan[[i, j]] > 0.0 {
                max_slack = max_slack.max(r.abs());
            }
        }
    }
    let primal = primal_cost(&sol.plan, cost).unwrap_or(f64::INFINITY);
    let dual = dual_value(&sol.duals, mu, nu).unwrap_or(f64::NEG_INFINITY);
    let gap = primal - dual;

    CertificateReport {
        row_marginal_error: row_err,
        col_marginal_error: col_err,
        min_plan_entry: min_entry,
        max_dual_violation: max_violation,
        gap,
        max_slackness_violation: max_slack,
        primal_feasible: row_err <= CERTIFICATE_TOLERANCE
            && col_err <= CERTIFICATE_TOLERANCE
            && min_entry >= 0.0,
        dual_feasible: max_violation <= DUAL_FEASIBILITY_TOLERANCE,
        gap_ok: gap.abs() <= CERTIFICATE_TOLERANCE * primal.abs().max(1.0),
        slackness_ok: max_slack <= CERTIFICATE_TOLERANCE,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{build_cost, c_transform, Direction, GridGeometry};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn measure(w: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::from_weights(w.to_vec()).unwrap()
    }

    fn random_measure(rng: &mut ChaCha8Rng, n: usize) -> DiscreteMeasure {
        let raw: Array1<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
        DiscreteMeasure::normalized(raw, Arc::new(GridGeometry::line(n).unwrap())).unwrap()
    }

    #[test]
    fn identical_marginals_on_zero_diagonal() {
        let geom = GridGeometry::square(3).unwrap();
        let cost = build_cost(&geom, &geom, 2.0).unwrap();
        let mu = measure(&[0.05, 0.1, 0.15, 0.1, 0.2, 0.1, 0.1, 0.1, 0.1]);
        let sol = solve_exact(&mu, &mu, &cost).unwrap();
        assert!(sol.primal_value.abs() < 1e-15);
        for i in 0..9 {
            assert!((sol.plan.entries()[[i, i]] - mu.weights()[i]).abs() < 1e-15);
        }
        assert!(verify_certificate(&sol, &mu, &mu, &cost).passed());
    }

    #[test]
    fn single_feasible_plan() {
        let cost = CostMatrix::from_entries(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let mu = measure(&[1.0, 0.0]);
        let nu = measure(&[0.0, 1.0]);
        let sol = solve_exact(&mu, &nu, &cost).unwrap();
        assert_eq!(sol.primal_value, 1.0);
        assert_eq!(sol.plan.entries(), &array![[0.0, 1.0], [0.0, 0.0]]);
        let report = verify_certificate(&sol, &mu, &nu, &cost);
        assert!(report.passed(), "{report:?}");
        assert!(sol.duals.f.sum().abs() < 1e-15);
    }

    #[test]
    fn perturbed_solutions_fail_certification() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mu = random_measure(&mut rng, 4);
        let nu = random_measure(&mut rng, 5);
        let cost =
            CostMatrix::from_entries(Array2::from_shape_fn((4, 5), |_| rng.random())).unwrap();
        let sol = solve_exact(&mu, &nu, &cost).unwrap();
        assert!(verify_certificate(&sol, &mu, &nu, &cost).passed());

        let mut bad_plan = sol.clone();
        let mut entries = bad_plan.plan.entries().clone();
        entries[[1, 2]] += 1e-3;
        bad_plan.plan = TransportPlan::new(entries, mu.clone(), nu.clone()).unwrap();
        let report = verify_certificate(&bad_plan, &mu, &nu, &cost);
        assert!(!report.primal_feasible);

        let mut bad_duals = sol.clone();
        bad_duals.duals.f[2] += 1e-3;
        let report = verify_certificate(&bad_duals, &mu, &nu, &cost);
        assert!(!report.dual_feasible || !report.slackness_ok);
        assert!(!report.passed());
    }

    #[test]
    fn zero_weights_are_solved_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cost =
            CostMatrix::from_entries(Array2::from_shape_fn((4, 4), |_| rng.random())).unwrap();
        let mu = measure(&[0.0, 0.5, 0.0, 0.5]);
        let nu = measure(&[0.3, 0.0, 0.7, 0.0]);
        let sol = solve_exact(&mu, &nu, &cost).unwrap();
        let report = verify_certificate(&sol, &mu, &nu, &cost);
        assert!(report.passed(), "{report:?}");
        let fc = c_transform(sol.duals.f.view(), &cost, Direction::RowsToCols).unwrap();
        for j in 0..4 {
            assert!((fc[j] - sol.duals.g[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let cost = CostMatrix::from_entries(Array2::zeros((2, 3))).unwrap();
        let mu = measure(&[0.5, 0.5]);
        assert!(solve_exact(&mu, &mu, &cost).is_err());
    }

    #[test]
    fn pivot_cap_reports_failure() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mu = random_measure(&mut rng, 6);
        let nu = random_measure(&mut rng, 6);
        let cost =
            CostMatrix::from_entries(Array2::from_shape_fn((6, 6), |_| rng.random())).unwrap();
        let solver = ExactSolver {
            max_pivots: Some(0),
        };
        match solver.solve(&mu, &nu, &cost) {
            Err(Error::SolverFailure { iterations, .. }) => assert_eq!(iterations, 0),
            other => panic!("expected solver failure, got {other:?}"),
        }
    }
}
