//! Multi-period portfolio optimization with quadratic transaction costs.
//!
//! Holdings `x_1, .., x_T` (the last asset is cash) minimize
//!
//! ```text
//! sum_t  -mu_t^T x_t + gamma x_t^T Sigma_t x_t + s_t^T (x_t)_-
//!      + (1/2)(x_t - x_{t-1})^T D_t (x_t - x_{t-1}),
//! ```
//!
//! subject to `1^T x_t = 1` per period and a terminal all-cash portfolio.
//! The transaction costs form a chain-graph Laplacian over the stacked
//! variable, with block-tridiagonal structure
//!
//! ```text
//!     [  D_2   -D_2                     ]
//!     [ -D_2   D_2+D_3  -D_3            ]
//! L = [        ...                      ]
//!     [            -D_{T-1}  D_{T-1}+D_T  -D_T ]
//!     [                      -D_T          D_T ]
//! ```
//!
//! while the `x_1` coupling terms `(1/2) x_1^T D_1 x_1 - (D_1 x_0)^T x_1`
//! (plus the constant `(1/2) x_0^T D_1 x_0`) fold into the first period
//! objective; they vanish for the default all-cash start since cash trades
//! free. Block updates call the inner splitting from [`crate::prox`], except
//! the terminal block, which is pinned to `e_n`.

use crate::graph::{laplacian_from_edges, BlockPartition, WeightedLaplacian};
use crate::prox::{inner_admm, FactorQuadratic, NegativePartCost, SmoothPart};
use crate::solver::{BlockProblem, BlockUpdateError};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Feasibility slack when evaluating the budget and terminal indicators on
/// points produced outside the solver.
const INDICATOR_TOL: f64 = 1e-8;

/// Default risk aversion for generated instances. At the generated data
/// scales this puts the risk term ahead of the transaction costs, the
/// regime where the chain coupling mixes fast.
pub const DEFAULT_GAMMA: f64 = 250.0;

#[derive(Debug, Error)]
pub enum PortfolioError {
    #[error("transaction cost matrix {period} has negative entry {value} at {index}")]
    NegativeCostEntry {
        period: usize,
        index: usize,
        value: f64,
    },

    #[error("inconsistent dimensions: {0}")]
    InconsistentDimensions(String),
}

/// Problem data for one multi-period instance. The last asset is cash:
/// risk-free (`Sigma` row and column zero), free to trade (`D` entry zero),
/// and never shorted at a cost (`s` entry zero).
#[derive(Debug, Clone)]
pub struct PortfolioInstance {
    pub assets: usize,
    pub periods: usize,
    pub gamma: f64,
    /// Expected returns per period, `periods - 1` vectors (the terminal
    /// period is the pinned all-cash portfolio).
    pub mu: Vec<Vec<f64>>,
    /// Return covariances per period as diagonal-plus-low-rank models.
    pub sigma: Vec<FactorQuadratic>,
    /// Shorting costs per period.
    pub shorting: Vec<NegativePartCost>,
    /// Diagonal transaction cost matrices `D_1 .. D_T`.
    pub transaction: Vec<Vec<f64>>,
    /// Initial holdings, all cash by default.
    pub x0: Vec<f64>,
}

impl PortfolioInstance {
    pub fn num_variables(&self) -> usize {
        self.assets * self.periods
    }

    pub fn validate(&self) -> Result<(), PortfolioError> {
        let n = self.assets;
        let t = self.periods;
        if t < 2 {
            return Err(PortfolioError::InconsistentDimensions(
                "need at least two periods".into(),
            ));
        }
        if self.mu.len() != t - 1 || self.sigma.len() != t - 1 || self.shorting.len() != t - 1 {
            return Err(PortfolioError::InconsistentDimensions(format!(
                "expected {} period objectives, got mu={} sigma={} shorting={}",
                t - 1,
                self.mu.len(),
                self.sigma.len(),
                self.shorting.len()
            )));
        }
        if self.transaction.len() != t {
            return Err(PortfolioError::InconsistentDimensions(format!(
                "expected {} transaction cost matrices, got {}",
                t,
                self.transaction.len()
            )));
        }
        if self.x0.len() != n
            || self.mu.iter().any(|v| v.len() != n)
            || self.sigma.iter().any(|s| s.n() != n)
            || self.shorting.iter().any(|s| s.costs().len() != n)
            || self.transaction.iter().any(|d| d.len() != n)
        {
            return Err(PortfolioError::InconsistentDimensions(
                "per-period data does not match asset count".into(),
            ));
        }
        if !(self.gamma > 0.0) {
            return Err(PortfolioError::InconsistentDimensions(
                "risk aversion must be positive".into(),
            ));
        }
        for (period, d) in self.transaction.iter().enumerate() {
            for (index, &value) in d.iter().enumerate() {
                if value < 0.0 {
                    return Err(PortfolioError::NegativeCostEntry {
                        period: period + 1,
                        index,
                        value,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Assembles the chain Laplacian from the diagonal cost matrices
/// `D_2 .. D_T` (the `D_1` terms couple to the fixed `x_0`, not between
/// variables). Zero diagonal entries, such as cash, contribute no edge.
pub fn chain_laplacian(costs: &[Vec<f64>]) -> Result<WeightedLaplacian, PortfolioError> {
    if costs.is_empty() {
        return Err(PortfolioError::InconsistentDimensions(
            "need at least one coupling cost matrix".into(),
        ));
    }
    let n = costs[0].len();
    if costs.iter().any(|d| d.len() != n) {
        return Err(PortfolioError::InconsistentDimensions(
            "cost matrices differ in size".into(),
        ));
    }
    let periods = costs.len() + 1;
    let mut edges = Vec::new();
    for (step, d) in costs.iter().enumerate() {
        for (j, &w) in d.iter().enumerate() {
            if w < 0.0 {
                return Err(PortfolioError::NegativeCostEntry {
                    period: step + 2,
                    index: j,
                    value: w,
                });
            }
            if w > 0.0 {
                edges.push((step * n + j, (step + 1) * n + j, w));
            }
        }
    }
    laplacian_from_edges(periods * n, &edges)
        .map_err(|e| PortfolioError::InconsistentDimensions(e.to_string()))
}

/// Block evaluator implementing the per-period subproblems.
pub struct PortfolioProblem<'a> {
    instance: &'a PortfolioInstance,
    /// Effective quadratic per period: `gamma Sigma_t`, plus `D_1 / 2` on
    /// the first period from the fixed-start coupling.
    effective_quadratic: Vec<FactorQuadratic>,
    /// Effective linear term per period before the solver's `h` is added:
    /// `-mu_t`, plus `-D_1 x_0` on the first period.
    effective_linear: Vec<Vec<f64>>,
    budget_normal: Vec<f64>,
    terminal: Vec<f64>,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl<'a> PortfolioProblem<'a> {
    fn new(instance: &'a PortfolioInstance) -> Result<Self, PortfolioError> {
        instance.validate()?;
        let n = instance.assets;
        let gamma = instance.gamma;
        let d1 = &instance.transaction[0];
        let mut effective_quadratic = Vec::with_capacity(instance.periods - 1);
        let mut effective_linear = Vec::with_capacity(instance.periods - 1);
        for t in 0..instance.periods - 1 {
            let sigma = &instance.sigma[t];
            let mut diag: Vec<f64> = sigma.diag().iter().map(|v| gamma * v).collect();
            let mut linear: Vec<f64> = instance.mu[t].iter().map(|v| -v).collect();
            if t == 0 {
                for j in 0..n {
                    diag[j] += 0.5 * d1[j];
                    linear[j] -= d1[j] * instance.x0[j];
                }
            }
            let quad = FactorQuadratic::new(
                diag,
                sigma.factors().to_vec(),
                sigma.rank(),
                gamma * sigma.scale(),
            )
            .map_err(|e| PortfolioError::InconsistentDimensions(e.to_string()))?;
            effective_quadratic.push(quad);
            effective_linear.push(linear);
        }
        let mut terminal = vec![0.0; n];
        terminal[n - 1] = 1.0;
        Ok(PortfolioProblem {
            instance,
            effective_quadratic,
            effective_linear,
            budget_normal: vec![1.0; n],
            terminal,
            inner_tol: 1e-10,
            inner_max_iter: 500_000,
        })
    }

    /// Constant folded into the first-period objective when `x_0` trades.
    fn start_cost(&self) -> f64 {
        let d1 = &self.instance.transaction[0];
        0.5 * self
            .instance
            .x0
            .iter()
            .zip(d1)
            .map(|(x, d)| d * x * x)
            .sum::<f64>()
    }
}

impl BlockProblem for PortfolioProblem<'_> {
    fn num_blocks(&self) -> usize {
        self.instance.periods
    }

    fn update(
        &self,
        block: usize,
        x_block: &[f64],
        linear: &[f64],
        alpha: &[f64],
    ) -> Result<Vec<f64>, BlockUpdateError> {
        if block == self.instance.periods - 1 {
            return Ok(self.terminal.clone());
        }
        let base = &self.effective_linear[block];
        let q: Vec<f64> = base.iter().zip(linear).map(|(a, b)| a + b).collect();
        let smooth = SmoothPart {
            quadratic: &self.effective_quadratic[block],
            linear: &q,
            constraint: Some((&self.budget_normal, 1.0)),
        };
        inner_admm(
            &smooth,
            &self.instance.shorting[block],
            x_block,
            alpha,
            self.inner_tol,
            self.inner_max_iter,
        )
        .map_err(|e| BlockUpdateError::new(format!("period {}: {e}", block + 1)))
    }

    fn objective(&self, block: usize, x_block: &[f64]) -> f64 {
        let n = self.instance.assets;
        if block == self.instance.periods - 1 {
            let feasible = x_block
                .iter()
                .zip(&self.terminal)
                .all(|(a, b)| (a - b).abs() <= INDICATOR_TOL);
            return if feasible { 0.0 } else { f64::INFINITY };
        }
        let budget: f64 = x_block.iter().sum();
        if (budget - 1.0).abs() > INDICATOR_TOL * (n as f64) {
            return f64::INFINITY;
        }
        let instance = self.instance;
        let mut value = instance.gamma * instance.sigma[block].quad_form(x_block)
            - dot(&instance.mu[block], x_block)
            + instance.shorting[block].value(x_block);
        if block == 0 {
            let d1 = &instance.transaction[0];
            for j in 0..n {
                value += 0.5 * d1[j] * x_block[j] * x_block[j]
                    - d1[j] * instance.x0[j] * x_block[j];
            }
            value += self.start_cost();
        }
        value
    }

    fn feasible_start(&self, _block: usize) -> Vec<f64> {
        self.terminal.clone()
    }
}

/// Builds the Laplacian, the per-period partition, and the block evaluator.
pub fn build_problem(
    instance: &PortfolioInstance,
) -> Result<(WeightedLaplacian, BlockPartition, PortfolioProblem<'_>), PortfolioError> {
    let problem = PortfolioProblem::new(instance)?;
    let lap = chain_laplacian(&instance.transaction[1..])?;
    let partition = BlockPartition::uniform(instance.periods, instance.assets);
    Ok((lap, partition, problem))
}

/// Random instance with parameters constant across periods. Scales:
/// returns 1e-3 (cash 1e-5), factor loadings 1e-2, idiosyncratic variances
/// in `[1e-5, 1e-4]`, shorting costs in `[1e-4, 1e-3]`, transaction costs in
/// `[1e-3, 1e-2]`; all cash entries structurally zero. Deterministic in the
/// seed.
pub fn generate_instance(
    assets: usize,
    periods: usize,
    num_factors: usize,
    seed: u64,
) -> PortfolioInstance {
    assert!(assets >= 2, "need at least one risky asset plus cash");
    assert!(periods >= 2, "need at least two periods");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = assets;
    let cash = n - 1;

    let mut mu = vec![0.0; n];
    for slot in &mut mu[..cash] {
        *slot = 1e-3 * rng.sample::<f64, _>(StandardNormal);
    }
    mu[cash] = 1e-5;

    let mut loadings = vec![0.0; n * num_factors];
    for j in 0..cash {
        for a in 0..num_factors {
            loadings[j * num_factors + a] = 1e-2 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mut idiosyncratic = vec![0.0; n];
    for slot in &mut idiosyncratic[..cash] {
        *slot = rng.random_range(1e-5..1e-4);
    }
    let sigma = FactorQuadratic::new(idiosyncratic, loadings, num_factors, 1.0)
        .expect("generated covariance is well-formed");

    let mut shorting = vec![0.0; n];
    for slot in &mut shorting[..cash] {
        *slot = rng.random_range(1e-4..1e-3);
    }
    let shorting = NegativePartCost::new(shorting).expect("costs are nonnegative");

    let mut transaction = vec![0.0; n];
    for slot in &mut transaction[..cash] {
        *slot = rng.random_range(1e-3..1e-2);
    }

    let mut x0 = vec![0.0; n];
    x0[cash] = 1.0;

    PortfolioInstance {
        assets,
        periods,
        gamma: DEFAULT_GAMMA,
        mu: vec![mu; periods - 1],
        sigma: vec![sigma; periods - 1],
        shorting: vec![shorting; periods - 1],
        transaction: vec![transaction; periods],
        x0,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::majorize::{default_floor, diagonal_majorizer};
    use crate::solver::{full_objective, solve, SolveOptions, SolveStatus};
    use approx::assert_relative_eq;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn chain_laplacian_single_edge() {
        let lap = chain_laplacian(&[vec![0.7]]).unwrap();
        let dense = lap.to_dense();
        assert_relative_eq!(dense[(0, 0)], 0.7);
        assert_relative_eq!(dense[(0, 1)], -0.7);
        assert_relative_eq!(dense[(1, 1)], 0.7);
    }

    #[test]
    fn chain_laplacian_unit_chain() {
        let lap = chain_laplacian(&[vec![1.0], vec![1.0]]).unwrap();
        let dense = lap.to_dense();
        let expect = nalgebra::DMatrix::from_row_slice(
            3,
            3,
            &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0],
        );
        assert_eq!(dense, expect);
    }

    #[test]
    fn chain_laplacian_matches_transaction_cost_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4;
        let periods = 5;
        let costs: Vec<Vec<f64>> = (0..periods)
            .map(|_| (0..n).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let lap = chain_laplacian(&costs[1..]).unwrap();
        assert!(crate::graph::validate(&lap.to_dense()).is_valid());

        let x: Vec<f64> = (0..n * periods).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        // direct sum-of-squares oracle over all periods
        let mut direct = 0.0;
        for t in 0..periods {
            let prev = if t == 0 {
                &x0[..]
            } else {
                &x[(t - 1) * n..t * n]
            };
            let cur = &x[t * n..(t + 1) * n];
            for j in 0..n {
                let d = cur[j] - prev[j];
                direct += 0.5 * costs[t][j] * d * d;
            }
        }
        // Laplacian energy plus the x_1 coupling terms handled separately
        let mut by_parts = lap.dirichlet_energy(&x).unwrap();
        for j in 0..n {
            by_parts += 0.5 * costs[0][j] * x[j] * x[j] - costs[0][j] * x0[j] * x[j]
                + 0.5 * costs[0][j] * x0[j] * x0[j];
        }
        assert_relative_eq!(direct, by_parts, max_relative = 1e-10);
    }

    #[test]
    fn negative_cost_is_rejected() {
        let err = chain_laplacian(&[vec![1.0, -0.5]]).unwrap_err();
        assert!(matches!(err, PortfolioError::NegativeCostEntry { .. }));
    }

    #[test]
    fn objective_values_at_all_cash() {
        let inst = generate_instance(5, 4, 2, 9);
        let (lap, partition, problem) = build_problem(&inst).unwrap();
        let n = inst.assets;
        let mut e_n = vec![0.0; n];
        e_n[n - 1] = 1.0;

        // cash carries no risk, no shorting cost, no transaction cost
        for t in 0..inst.periods - 1 {
            let expect = -inst.mu[t][n - 1];
            assert_relative_eq!(problem.objective(t, &e_n), expect, epsilon = 1e-15);
        }
        assert_eq!(problem.objective(inst.periods - 1, &e_n), 0.0);
        let mut not_cash = vec![0.0; n];
        not_cash[0] = 1.0;
        assert_eq!(problem.objective(inst.periods - 1, &not_cash), f64::INFINITY);

        // the all-cash trajectory incurs no Laplacian energy
        let x: Vec<f64> = (0..inst.periods).flat_map(|_| e_n.clone()).collect();
        let total = full_objective(&lap, &partition, &problem, &x);
        let expect: f64 = (0..inst.periods - 1).map(|t| -inst.mu[t][n - 1]).sum();
        assert_relative_eq!(total, expect, epsilon = 1e-15);
    }

    #[test]
    fn terminal_block_is_pinned() {
        let inst = generate_instance(4, 3, 2, 1);
        let (_, _, problem) = build_problem(&inst).unwrap();
        let x = vec![0.3, 0.3, 0.2, 0.2];
        let updated = problem
            .update(2, &x, &[1.0, -1.0, 0.5, 0.0], &[1.0, 1.0, 1.0, 1.0])
            .unwrap();
        assert_eq!(updated, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn smooth_block_update_matches_direct_kkt() {
        // with no shorting cost and a diagonal covariance the update has a
        // closed form through the constrained quadratic solver
        let mut inst = generate_instance(2, 3, 0, 5);
        inst.shorting = vec![NegativePartCost::new(vec![0.0, 0.0]).unwrap(); 2];
        let (_, _, problem) = build_problem(&inst).unwrap();
        let x_k = vec![0.4, 0.6];
        let h = vec![0.01, -0.02];
        let alpha = vec![0.05, 0.04];
        let updated = problem.update(1, &x_k, &h, &alpha).unwrap();

        let q: Vec<f64> = (0..2).map(|j| -inst.mu[1][j] + h[j]).collect();
        let direct = crate::prox::solve_eq_quadratic(
            &problem.effective_quadratic[1],
            &q,
            &alpha,
            &x_k,
            &[1.0, 1.0],
            1.0,
        )
        .unwrap();
        for j in 0..2 {
            assert_relative_eq!(updated[j], direct[j], epsilon = 1e-7);
        }
    }

    #[test]
    fn scalar_subproblem_quadratic_coefficient() {
        // On an interior block with factor-3 majorizer the subproblem
        // curvature is 2 gamma Sigma + 3 (D_t + D_{t+1}) + small floor terms,
        // verified symbolically for one risky asset.
        let mut inst = generate_instance(2, 4, 0, 11);
        inst.shorting = vec![NegativePartCost::new(vec![0.0, 0.0]).unwrap(); 3];
        let (lap, _, problem) = build_problem(&inst).unwrap();
        let majorizer = diagonal_majorizer(&lap, 3.0, default_floor(&lap)).unwrap();
        let n = inst.assets;
        let t = 1; // interior period
        let alpha = &majorizer.alpha()[t * n..(t + 1) * n];
        let d_sum = inst.transaction[t][0] + inst.transaction[t + 1][0];
        assert_relative_eq!(alpha[0], 3.0 * d_sum, max_relative = 1e-12);
        // curvature of the update objective in the risky coordinate:
        // 2 (gamma sigma + alpha/2) = 2 gamma sigma + 3 (D_t + D_{t+1})
        let curvature = 2.0 * problem.effective_quadratic[t].diag()[0] + alpha[0];
        assert_relative_eq!(
            curvature,
            2.0 * inst.gamma * inst.sigma[t].diag()[0] + 3.0 * d_sum,
            max_relative = 1e-12
        );
    }

    #[test]
    fn generated_instance_invariants() {
        let inst = generate_instance(6, 5, 3, 42);
        inst.validate().unwrap();
        let cash = inst.assets - 1;
        for d in &inst.transaction {
            assert_eq!(d[cash], 0.0);
        }
        for s in &inst.sigma {
            assert_eq!(s.diag()[cash], 0.0);
            assert_eq!(s.quad_form(&[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]), 0.0);
        }
        for s in &inst.shorting {
            assert_eq!(s.costs()[cash], 0.0);
        }
        assert_eq!(inst.x0[cash], 1.0);

        // determinism
        let again = generate_instance(6, 5, 3, 42);
        assert_eq!(inst.mu, again.mu);
        assert_eq!(inst.transaction, again.transaction);

        // production-scale shape
        let big = generate_instance(1000, 30, 50, 7);
        assert_eq!(big.num_variables(), 30_000);
    }

    #[test]
    fn small_solve_keeps_budgets_and_descends() {
        let inst = generate_instance(6, 4, 2, 17);
        let (lap, partition, problem) = build_problem(&inst).unwrap();
        let majorizer = diagonal_majorizer(&lap, 3.0, default_floor(&lap)).unwrap();
        let opts = SolveOptions {
            eps_abs: 1e-8,
            max_iter: 300,
            record_objective: true,
            ..Default::default()
        };
        let out = solve(&lap, &partition, &majorizer, &problem, None, &opts).unwrap();
        assert_eq!(out.trace.status, SolveStatus::Converged);
        for t in 0..inst.periods {
            let budget: f64 = partition.block(t, &out.x).iter().sum();
            assert_relative_eq!(budget, 1.0, epsilon = 1e-9);
        }
        let objectives = out.trace.objectives();
        for pair in objectives.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9);
        }
        // Laplacian energy of the solution equals the coupling cost sum
        let energy = lap.dirichlet_energy(&out.x).unwrap();
        let n = inst.assets;
        let mut direct = 0.0;
        for t in 1..inst.periods {
            let prev = &out.x[(t - 1) * n..t * n];
            let cur = &out.x[t * n..(t + 1) * n];
            for j in 0..n {
                let d = cur[j] - prev[j];
                direct += 0.5 * inst.transaction[t][j] * d * d;
            }
        }
        assert_relative_eq!(energy, direct, max_relative = 1e-8);
    }
}
