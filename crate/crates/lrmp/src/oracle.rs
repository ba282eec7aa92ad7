//! Independent reference solvers for small instances.
//!
//! These deliberately use a different algorithm family than the main loop
//! (full proximal gradient, dense KKT factorization) so that agreement is
//! evidence rather than tautology. They are correctness tools, not
//! performance paths, and run single-threaded.

use crate::graph::{BlockPartition, WeightedLaplacian};
use crate::portfolio::PortfolioInstance;
use crate::solver::{full_objective, BlockProblem};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("objective increased persistently; the step size is too large")]
    NoProgress,

    #[error("KKT system is singular")]
    SingularKkt,

    #[error("block update failed: {0}")]
    BlockUpdate(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Reported stationarity violation; small means trustworthy.
    pub certificate: f64,
}

/// Forward-backward reference: gradient step on the Laplacian energy, then a
/// per-block proximal step on `f` at uniform scaling `1/step` (through the
/// block contract with a zero linear term). Returns the best iterate seen.
pub fn proximal_gradient_reference<P: BlockProblem + ?Sized>(
    lap: &WeightedLaplacian,
    partition: &BlockPartition,
    problem: &P,
    step: f64,
    iters: usize,
) -> Result<OracleResult, OracleError> {
    if !(step > 0.0) {
        return Err(OracleError::InvalidInput("step must be positive".into()));
    }
    let n = lap.n();
    let p = partition.num_blocks();
    let inv_step = 1.0 / step;

    let prox = |x: &[f64]| -> Result<Vec<f64>, OracleError> {
        let mut out = vec![0.0; n];
        for i in 0..p {
            let range = partition.range(i);
            let alpha = vec![inv_step; range.len()];
            let zeros = vec![0.0; range.len()];
            let block = problem
                .update(i, &x[range.clone()], &zeros, &alpha)
                .map_err(|e| OracleError::BlockUpdate(e.message))?;
            out[range].copy_from_slice(&block);
        }
        Ok(out)
    };

    let mut x: Vec<f64> = {
        let mut start = vec![0.0; n];
        for i in 0..p {
            start[partition.range(i)].copy_from_slice(&problem.feasible_start(i));
        }
        start
    };
    let mut best_x = x.clone();
    let mut best_obj = full_objective(lap, partition, problem, &x);
    let mut stalls = 0usize;
    for _ in 0..iters {
        let grad = lap.matvec(&x).expect("dimensions fixed");
        let forward: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - step * gi).collect();
        x = prox(&forward)?;
        let obj = full_objective(lap, partition, problem, &x);
        if obj < best_obj {
            best_obj = obj;
            best_x = x.clone();
        }
        // flag persistent divergence, not flatness at the optimum
        if obj > best_obj + 1e-9 * (1.0 + best_obj.abs()) {
            stalls += 1;
            if stalls > 200 {
                return Err(OracleError::NoProgress);
            }
        } else {
            stalls = 0;
        }
    }

    // fixed-point certificate: ||x - prox(x - step L x)|| / step
    let grad = lap.matvec(&best_x).expect("dimensions fixed");
    let forward: Vec<f64> = best_x
        .iter()
        .zip(&grad)
        .map(|(xi, gi)| xi - step * gi)
        .collect();
    let mapped = prox(&forward)?;
    let certificate = best_x
        .iter()
        .zip(&mapped)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
        / step;
    Ok(OracleResult {
        x: best_x,
        objective: best_obj,
        certificate,
    })
}

/// One block of a purely quadratic instance:
/// `(1/2) x^T P x + q^T x + constant`, optionally subject to affine rows
/// `A x = b`.
#[derive(Debug, Clone)]
pub struct QuadraticBlock {
    pub quadratic: DMatrix<f64>,
    pub linear: Vec<f64>,
    pub constant: f64,
    pub constraints: Option<(DMatrix<f64>, Vec<f64>)>,
}

/// Assembles and factors the full dense KKT system for a
/// quadratic-plus-affine instance and returns the exact minimizer.
pub fn dense_kkt_reference(
    lap: &WeightedLaplacian,
    partition: &BlockPartition,
    blocks: &[QuadraticBlock],
) -> Result<OracleResult, OracleError> {
    let n = lap.n();
    if blocks.len() != partition.num_blocks() {
        return Err(OracleError::InvalidInput(format!(
            "{} blocks for a partition of {}",
            blocks.len(),
            partition.num_blocks()
        )));
    }
    let num_constraints: usize = blocks
        .iter()
        .map(|b| b.constraints.as_ref().map_or(0, |(a, _)| a.nrows()))
        .sum();

    let mut h = lap.to_dense();
    let mut q = DVector::zeros(n);
    let mut a_full = DMatrix::zeros(num_constraints, n);
    let mut b_full = DVector::zeros(num_constraints);
    let mut constant = 0.0;
    let mut row = 0;
    for (i, block) in blocks.iter().enumerate() {
        let range = partition.range(i);
        let size = range.len();
        if block.quadratic.nrows() != size || block.linear.len() != size {
            return Err(OracleError::InvalidInput(format!(
                "block {i} dimensions do not match the partition"
            )));
        }
        let mut quad_view = h.view_mut((range.start, range.start), (size, size));
        quad_view += &block.quadratic;
        for (offset, &v) in block.linear.iter().enumerate() {
            q[range.start + offset] = v;
        }
        constant += block.constant;
        if let Some((a, b)) = &block.constraints {
            a_full
                .view_mut((row, range.start), (a.nrows(), size))
                .copy_from(a);
            for (offset, &v) in b.iter().enumerate() {
                b_full[row + offset] = v;
            }
            row += a.nrows();
        }
    }

    let dim = n + num_constraints;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&h);
    kkt.view_mut((n, 0), (num_constraints, n)).copy_from(&a_full);
    kkt.view_mut((0, n), (n, num_constraints))
        .copy_from(&a_full.transpose());
    let mut rhs = DVector::zeros(dim);
    for i in 0..n {
        rhs[i] = -q[i];
    }
    for i in 0..num_constraints {
        rhs[n + i] = b_full[i];
    }
    let solution = kkt.lu().solve(&rhs).ok_or(OracleError::SingularKkt)?;
    let x: Vec<f64> = (0..n).map(|i| solution[i]).collect();
    let nu = solution.rows(n, num_constraints).into_owned();

    let xv = DVector::from_column_slice(&x);
    let objective = 0.5 * (xv.transpose() * &h * &xv)[(0, 0)] + q.dot(&xv) + constant;
    let stationarity = &h * &xv + &q + a_full.transpose() * &nu;
    let feasibility = &a_full * &xv - &b_full;
    let certificate = stationarity
        .iter()
        .chain(feasibility.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    Ok(OracleResult {
        x,
        objective,
        certificate,
    })
}

/// Quadratic-block view of a portfolio instance for the KKT oracle. Only
/// meaningful when the shorting costs are zero (the instance is then purely
/// quadratic plus affine constraints).
pub fn portfolio_quadratic_blocks(instance: &PortfolioInstance) -> Vec<QuadraticBlock> {
    let n = instance.assets;
    let periods = instance.periods;
    let ones_row = DMatrix::from_element(1, n, 1.0);
    let d1 = &instance.transaction[0];
    let mut blocks = Vec::with_capacity(periods);
    for t in 0..periods - 1 {
        let mut quadratic = 2.0 * instance.gamma * instance.sigma[t].to_dense();
        let mut linear: Vec<f64> = instance.mu[t].iter().map(|v| -v).collect();
        let mut constant = 0.0;
        if t == 0 {
            for j in 0..n {
                quadratic[(j, j)] += d1[j];
                linear[j] -= d1[j] * instance.x0[j];
                constant += 0.5 * d1[j] * instance.x0[j] * instance.x0[j];
            }
        }
        blocks.push(QuadraticBlock {
            quadratic,
            linear,
            constant,
            constraints: Some((ones_row.clone(), vec![1.0])),
        });
    }
    // terminal block pinned to the cash basis vector
    let mut target = vec![0.0; n];
    target[n - 1] = 1.0;
    blocks.push(QuadraticBlock {
        quadratic: DMatrix::zeros(n, n),
        linear: vec![0.0; n],
        constant: 0.0,
        constraints: Some((DMatrix::identity(n, n), target)),
    });
    blocks
}
