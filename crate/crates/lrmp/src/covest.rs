//! Laplacian-regularized inverse covariance estimation on a graph.
//!
//! Each node `i` carries samples from a zero-mean Gaussian with empirical
//! covariance `S_i`; the node parameter is the inverse covariance
//! `theta_i`, a symmetric positive definite `d x d` matrix. The objective is
//!
//! ```text
//! sum_i [ Tr(S_i theta_i) - log det theta_i + kappa Tr(theta_i) ]
//!   + lambda sum_{(i,j) in E} ||theta_i - theta_j||_F^2.
//! ```
//!
//! Symmetric matrices embed into vectors of length `d(d+1)/2` with
//! off-diagonal entries scaled by `sqrt(2)`, so Euclidean norms equal
//! Frobenius norms and the solver's residuals and tolerances apply
//! unchanged. The graph Laplacian is built with edge weights `2 lambda`,
//! making `(1/2) x^T L x` equal the regularizer above exactly.
//!
//! With a per-node scalar majorizer the block update is analytic: the
//! update matrix `M = S_i + H_i + kappa I - alpha_i theta_i^k` shares
//! eigenvectors with the new iterate, whose eigenvalues solve
//! `1/v - alpha v = lambda_j`.

use crate::graph::{grid_graph, laplacian_from_edges, BlockPartition, WeightedLaplacian};
use crate::majorize::{block_identity_majorizer, default_floor, MajorizeError};
use crate::solver::{
    solve, BlockProblem, BlockUpdateError, SolveError, SolveOptions, SolveTrace,
};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Regularization defaults tuned for the grid estimation instances.
pub const DEFAULT_KAPPA: f64 = 0.08;
pub const DEFAULT_LAMBDA: f64 = 0.053;

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Error)]
pub enum CovError {
    #[error("matrix is not symmetric (worst deviation {0:e})")]
    NotSymmetric(f64),

    #[error("eigensolver did not converge in {0} sweeps")]
    NoConvergence(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Solve(#[from] SolveError),

    #[error(transparent)]
    Majorize(#[from] MajorizeError),
}

/// One estimation instance on a `rows x cols` grid.
#[derive(Debug, Clone)]
pub struct CovInstance {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub samples: usize,
    /// Empirical covariances per node, row-major grid order.
    pub emp_cov: Vec<DMatrix<f64>>,
    /// True inverse covariances, used only for error reporting.
    pub theta_true: Vec<DMatrix<f64>>,
    pub kappa: f64,
    pub lambda: f64,
}

impl CovInstance {
    pub fn num_nodes(&self) -> usize {
        self.rows * self.cols
    }

    /// Scalar variables per node after the symmetric embedding.
    pub fn block_len(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }

    pub fn num_variables(&self) -> usize {
        self.num_nodes() * self.block_len()
    }
}

/// Eigendecomposition `M = Q diag(values) Q^T` with values ascending.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub vectors: DMatrix<f64>,
    pub values: Vec<f64>,
}

/// Cyclic Jacobi eigendecomposition; rotations sweep the strict upper
/// triangle until the off-diagonal Frobenius norm falls below
/// `1e-12 ||M||_F`. Deterministic for identical input.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen, CovError> {
    let d = m.nrows();
    if m.ncols() != d {
        return Err(CovError::InvalidParameter("matrix must be square".into()));
    }
    let mut max_abs: f64 = 0.0;
    let mut worst_dev: f64 = 0.0;
    for i in 0..d {
        for j in (i + 1)..d {
            worst_dev = worst_dev.max((m[(i, j)] - m[(j, i)]).abs());
        }
        for j in 0..d {
            max_abs = max_abs.max(m[(i, j)].abs());
        }
    }
    if worst_dev > 1e-12 * (1.0 + max_abs) {
        return Err(CovError::NotSymmetric(worst_dev));
    }

    let mut a = m.clone();
    let mut q = DMatrix::identity(d, d);
    let target = 1e-12 * m.norm();
    const MAX_SWEEPS: usize = 60;
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                off += 2.0 * a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= target {
            return Ok(sorted_eigen(a, q));
        }
        for p in 0..d {
            for r in (p + 1)..d {
                let apq = a[(p, r)];
                if apq == 0.0 {
                    continue;
                }
                let tau = (a[(r, r)] - a[(p, p)]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                rotate(&mut a, &mut q, p, r, c, s);
            }
        }
    }
    Err(CovError::NoConvergence(MAX_SWEEPS))
}

fn rotate(a: &mut DMatrix<f64>, q: &mut DMatrix<f64>, p: usize, r: usize, c: f64, s: f64) {
    let d = a.nrows();
    let app = a[(p, p)];
    let arr = a[(r, r)];
    let apr = a[(p, r)];
    a[(p, p)] = c * c * app - 2.0 * s * c * apr + s * s * arr;
    a[(r, r)] = s * s * app + 2.0 * s * c * apr + c * c * arr;
    a[(p, r)] = 0.0;
    a[(r, p)] = 0.0;
    for k in 0..d {
        if k != p && k != r {
            let akp = a[(k, p)];
            let akr = a[(k, r)];
            a[(k, p)] = c * akp - s * akr;
            a[(p, k)] = a[(k, p)];
            a[(k, r)] = s * akp + c * akr;
            a[(r, k)] = a[(k, r)];
        }
    }
    for k in 0..d {
        let qkp = q[(k, p)];
        let qkr = q[(k, r)];
        q[(k, p)] = c * qkp - s * qkr;
        q[(k, r)] = s * qkp + c * qkr;
    }
}

fn sorted_eigen(a: DMatrix<f64>, q: DMatrix<f64>) -> SymmetricEigen {
    let d = a.nrows();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = DMatrix::zeros(d, d);
    for (new_col, &old_col) in order.iter().enumerate() {
        vectors.set_column(new_col, &q.column(old_col));
    }
    SymmetricEigen { vectors, values }
}

/// Analytic node update: with `M = S + H + kappa I - alpha theta_prev`
/// eigendecomposed as `Q Lambda Q^T`, the minimizer of the majorized node
/// objective is `Q V Q^T` with `V_jj = 2 / (Lambda_jj + sqrt(Lambda_jj^2 +
/// 4 alpha))`, the positive root of `1/v - alpha v = Lambda_jj`. Always
/// symmetric positive definite.
pub fn block_update(
    emp_cov: &DMatrix<f64>,
    coupling: &DMatrix<f64>,
    kappa: f64,
    alpha: f64,
    theta_prev: &DMatrix<f64>,
) -> Result<DMatrix<f64>, CovError> {
    if !(alpha > 0.0) {
        return Err(CovError::InvalidParameter(format!(
            "majorizer weight must be positive, got {alpha}"
        )));
    }
    let d = emp_cov.nrows();
    let mut m = emp_cov + coupling - theta_prev * alpha;
    for i in 0..d {
        m[(i, i)] += kappa;
    }
    let eig = symmetric_eigen(&m)?;
    let v: Vec<f64> = eig
        .values
        .iter()
        .map(|&lam| 2.0 / (lam + (lam * lam + 4.0 * alpha).sqrt()))
        .collect();
    let mut scaled = eig.vectors.clone();
    for (j, &vj) in v.iter().enumerate() {
        scaled.column_mut(j).scale_mut(vj);
    }
    let theta = &scaled * eig.vectors.transpose();
    Ok(symmetrize(theta))
}

fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    m
}

/// Separable solution at `lambda = 0`: `theta_i = (S_i + kappa I)^{-1}`.
pub fn analytic_lambda_zero(
    emp_cov: &DMatrix<f64>,
    kappa: f64,
) -> Result<DMatrix<f64>, CovError> {
    if !(kappa > 0.0) {
        return Err(CovError::InvalidParameter(format!(
            "kappa must be positive, got {kappa}"
        )));
    }
    let eig = symmetric_eigen(emp_cov)?;
    let inv: Vec<f64> = eig.values.iter().map(|&lam| 1.0 / (lam + kappa)).collect();
    let mut scaled = eig.vectors.clone();
    for (j, &vj) in inv.iter().enumerate() {
        scaled.column_mut(j).scale_mut(vj);
    }
    Ok(symmetrize(&scaled * eig.vectors.transpose()))
}

/// Consensus solution as `lambda` grows without bound on a connected graph:
/// all nodes share the single fit to the pooled data,
/// `theta = (S_pool + kappa I)^{-1}` with `S_pool` the average of the node
/// covariances (the minimizer of the summed node objectives at consensus).
pub fn analytic_lambda_inf(
    emp_cov: &[DMatrix<f64>],
    kappa: f64,
) -> Result<DMatrix<f64>, CovError> {
    if emp_cov.is_empty() {
        return Err(CovError::InvalidParameter("no nodes".into()));
    }
    let d = emp_cov[0].nrows();
    let mut pooled = DMatrix::zeros(d, d);
    for s in emp_cov {
        pooled += s;
    }
    pooled /= emp_cov.len() as f64;
    analytic_lambda_zero(&pooled, kappa)
}

/// Random grid instance. Corner covariances are `A A^T / d + 0.1 I` with
/// standard normal `A`; interior nodes blend the corners bilinearly, which
/// keeps them positive definite; each node then contributes `samples`
/// Gaussian draws to its empirical covariance. Deterministic in the seed.
pub fn generate_instance(
    rows: usize,
    cols: usize,
    dim: usize,
    samples: usize,
    seed: u64,
) -> CovInstance {
    assert!(rows >= 2 && cols >= 2, "grid needs at least two rows and columns");
    assert!(dim >= 1 && samples >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corners: Vec<DMatrix<f64>> = (0..4)
        .map(|_| {
            let a = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mut c = &a * a.transpose() / dim as f64;
            for i in 0..dim {
                c[(i, i)] += 0.1;
            }
            symmetrize(c)
        })
        .collect();

    let mut emp_cov = Vec::with_capacity(rows * cols);
    let mut theta_true = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let u = r as f64 / (rows - 1) as f64;
            let v = c as f64 / (cols - 1) as f64;
            let sigma = symmetrize(
                &corners[0] * ((1.0 - u) * (1.0 - v))
                    + &corners[1] * ((1.0 - u) * v)
                    + &corners[2] * (u * (1.0 - v))
                    + &corners[3] * (u * v),
            );
            let chol = Cholesky::new(sigma.clone()).expect("blended covariance is SPD");
            let lower = chol.l();
            let mut s = DMatrix::zeros(dim, dim);
            for _ in 0..samples {
                let g = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                let z = &lower * g;
                for i in 0..dim {
                    for j in 0..dim {
                        s[(i, j)] += z[i] * z[j];
                    }
                }
            }
            s /= samples as f64;
            emp_cov.push(symmetrize(s));
            theta_true.push(symmetrize(chol.inverse()));
        }
    }
    CovInstance {
        rows,
        cols,
        dim,
        samples,
        emp_cov,
        theta_true,
        kappa: DEFAULT_KAPPA,
        lambda: DEFAULT_LAMBDA,
    }
}

/// Packs a symmetric matrix into upper-triangle order with off-diagonal
/// entries scaled by `sqrt(2)`, so the Euclidean norm of the embedding
/// equals the Frobenius norm of the matrix.
pub fn sym_to_vec(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        out.push(m[(i, i)]);
        for j in (i + 1)..d {
            out.push(SQRT2 * m[(i, j)]);
        }
    }
    out
}

/// Inverse of [`sym_to_vec`].
pub fn vec_to_sym(v: &[f64], dim: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), dim * (dim + 1) / 2);
    let mut m = DMatrix::zeros(dim, dim);
    let mut c = 0;
    for i in 0..dim {
        m[(i, i)] = v[c];
        c += 1;
        for j in (i + 1)..dim {
            let val = v[c] / SQRT2;
            m[(i, j)] = val;
            m[(j, i)] = val;
            c += 1;
        }
    }
    m
}

struct CovBlocks<'a> {
    instance: &'a CovInstance,
    identity_vec: Vec<f64>,
}

impl BlockProblem for CovBlocks<'_> {
    fn num_blocks(&self) -> usize {
        self.instance.num_nodes()
    }

    fn update(
        &self,
        block: usize,
        x_block: &[f64],
        linear: &[f64],
        alpha: &[f64],
    ) -> Result<Vec<f64>, BlockUpdateError> {
        let d = self.instance.dim;
        debug_assert!(alpha.windows(2).all(|w| w[0] == w[1]));
        let theta_prev = vec_to_sym(x_block, d);
        let coupling = vec_to_sym(linear, d);
        let theta = block_update(
            &self.instance.emp_cov[block],
            &coupling,
            self.instance.kappa,
            alpha[0],
            &theta_prev,
        )
        .map_err(|e| BlockUpdateError::new(format!("node {block}: {e}")))?;
        Ok(sym_to_vec(&theta))
    }

    fn objective(&self, block: usize, x_block: &[f64]) -> f64 {
        let d = self.instance.dim;
        let theta = vec_to_sym(x_block, d);
        let chol = match Cholesky::new(theta.clone()) {
            Some(c) => c,
            None => return f64::INFINITY,
        };
        let log_det: f64 = (0..d).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>() * 2.0;
        let s = &self.instance.emp_cov[block];
        let mut trace_s_theta = 0.0;
        let mut trace_theta = 0.0;
        for i in 0..d {
            trace_theta += theta[(i, i)];
            for j in 0..d {
                trace_s_theta += s[(i, j)] * theta[(j, i)];
            }
        }
        trace_s_theta - log_det + self.instance.kappa * trace_theta
    }

    fn feasible_start(&self, _block: usize) -> Vec<f64> {
        self.identity_vec.clone()
    }
}

#[derive(Debug, Clone)]
pub struct CovarianceSolve {
    pub thetas: Vec<DMatrix<f64>>,
    pub trace: SolveTrace,
}

/// Solves the estimation problem with the analytic node update. The grid
/// Laplacian (edge weight `2 lambda`) is expanded over the symmetric
/// embedding, the majorizer is the per-block identity rule with factor 3,
/// and `warm` optionally seeds the iterates.
pub fn solve_covariance(
    instance: &CovInstance,
    opts: &SolveOptions,
    warm: Option<&[DMatrix<f64>]>,
) -> Result<CovarianceSolve, CovError> {
    if instance.lambda < 0.0 {
        return Err(CovError::InvalidParameter(format!(
            "lambda must be nonnegative, got {}",
            instance.lambda
        )));
    }
    if !(instance.kappa > 0.0) {
        return Err(CovError::InvalidParameter(format!(
            "kappa must be positive, got {}",
            instance.kappa
        )));
    }
    let p = instance.num_nodes();
    let m = instance.block_len();
    let lap = expanded_grid_laplacian(instance)?;
    let partition = BlockPartition::uniform(p, m);
    let majorizer = block_identity_majorizer(&lap, &partition, 3.0, default_floor(&lap))?;
    let problem = CovBlocks {
        instance,
        identity_vec: sym_to_vec(&DMatrix::identity(instance.dim, instance.dim)),
    };
    let x0: Option<Vec<f64>> = match warm {
        Some(thetas) => {
            if thetas.len() != p {
                return Err(CovError::InvalidParameter(format!(
                    "warm start has {} nodes, expected {p}",
                    thetas.len()
                )));
            }
            if thetas.iter().any(|t| t.nrows() != instance.dim || t.ncols() != instance.dim) {
                return Err(CovError::InvalidParameter(
                    "warm start matrix dimensions do not match the instance".into(),
                ));
            }
            let mut flat = Vec::with_capacity(p * m);
            for theta in thetas {
                flat.extend(sym_to_vec(theta));
            }
            Some(flat)
        }
        None => None,
    };
    let outcome = solve(&lap, &partition, &majorizer, &problem, x0.as_deref(), opts)?;
    let thetas = (0..p)
        .map(|i| vec_to_sym(partition.block(i, &outcome.x), instance.dim))
        .collect();
    Ok(CovarianceSolve {
        thetas,
        trace: outcome.trace,
    })
}

fn expanded_grid_laplacian(instance: &CovInstance) -> Result<WeightedLaplacian, CovError> {
    let p = instance.num_nodes();
    let m = instance.block_len();
    let mut expanded = Vec::new();
    if instance.lambda > 0.0 {
        let graph_edges = grid_graph(instance.rows, instance.cols, 2.0 * instance.lambda)
            .map_err(|e| CovError::InvalidParameter(e.to_string()))?;
        expanded.reserve(graph_edges.len() * m);
        for (i, j, w) in graph_edges {
            for c in 0..m {
                expanded.push((i * m + c, j * m + c, w));
            }
        }
    }
    laplacian_from_edges(p * m, &expanded).map_err(|e| CovError::InvalidParameter(e.to_string()))
}

/// One point on the regularization path.
#[derive(Debug, Clone)]
pub struct PathPoint {
    pub lambda: f64,
    pub iterations: usize,
    pub rmse: f64,
    pub thetas: Vec<DMatrix<f64>>,
}

/// Sweeps an ascending `lambda` grid. With `warm_start` each solve begins
/// from the previous solution, which typically cuts total iterations by a
/// large factor; without it every solve starts cold.
pub fn regularization_path(
    instance: &CovInstance,
    lambdas: &[f64],
    warm_start: bool,
    opts: &SolveOptions,
) -> Result<Vec<PathPoint>, CovError> {
    if lambdas.windows(2).any(|w| w[0] > w[1]) {
        return Err(CovError::InvalidParameter(
            "lambda grid must be sorted ascending".into(),
        ));
    }
    let mut points: Vec<PathPoint> = Vec::with_capacity(lambdas.len());
    let mut previous: Option<Vec<DMatrix<f64>>> = None;
    for &lambda in lambdas {
        let mut inst = instance.clone();
        inst.lambda = lambda;
        let warm = if warm_start { previous.as_deref() } else { None };
        let solved = solve_covariance(&inst, opts, warm)?;
        let rmse = rmse(&solved.thetas, &instance.theta_true);
        if warm_start {
            previous = Some(solved.thetas.clone());
        }
        points.push(PathPoint {
            lambda,
            iterations: solved.trace.iterations(),
            rmse,
            thetas: solved.thetas,
        });
    }
    Ok(points)
}

/// Full objective of an estimate: node losses plus the Laplacian term
/// `lambda sum_edges ||theta_i - theta_j||_F^2`. Infinite when any node
/// matrix is not positive definite.
pub fn objective_value(instance: &CovInstance, thetas: &[DMatrix<f64>]) -> f64 {
    assert_eq!(thetas.len(), instance.num_nodes());
    let d = instance.dim;
    let mut total = 0.0;
    for (theta, s) in thetas.iter().zip(&instance.emp_cov) {
        let chol = match Cholesky::new(theta.clone()) {
            Some(c) => c,
            None => return f64::INFINITY,
        };
        let log_det: f64 = (0..d).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>() * 2.0;
        let mut tr_s = 0.0;
        let mut tr = 0.0;
        for i in 0..d {
            tr += theta[(i, i)];
            for j in 0..d {
                tr_s += s[(i, j)] * theta[(j, i)];
            }
        }
        total += tr_s - log_det + instance.kappa * tr;
    }
    if instance.lambda > 0.0 {
        let edges = grid_graph(instance.rows, instance.cols, 1.0).expect("unit grid");
        for (i, j, _) in edges {
            total += instance.lambda * (&thetas[i] - &thetas[j]).norm_squared();
        }
    }
    total
}

/// Root-mean-square error over all matrix entries and nodes.
pub fn rmse(thetas: &[DMatrix<f64>], truth: &[DMatrix<f64>]) -> f64 {
    assert_eq!(thetas.len(), truth.len());
    let mut sq = 0.0;
    let mut count = 0usize;
    for (a, b) in thetas.iter().zip(truth) {
        let diff = a - b;
        sq += diff.norm_squared();
        count += diff.len();
    }
    (sq / count as f64).sqrt()
}
