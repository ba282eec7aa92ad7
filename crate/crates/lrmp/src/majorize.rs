//! Diagonal majorizers of the Laplacian quadratic form.
//!
//! A diagonal matrix `Lhat = diag(alpha)` with `Lhat - L` positive definite
//! turns `(1/2) x^T L x` into a separable quadratic surrogate
//!
//! ```text
//! (1/2) z^T L z + (Lz)^T (x - z) + (1/2)(x - z)^T Lhat (x - z),
//! ```
//!
//! which matches the energy at `x = z` and upper-bounds it elsewhere. For a
//! Laplacian, `alpha_i > 2 L_ii` suffices; this module also provides the
//! uniform spectral choice `alpha = 2 lambda_max(L)`, per-block constants,
//! and the row-absolute-sum rule that covers arbitrary PSD quadratics.

use crate::graph::{BlockPartition, GraphError, WeightedLaplacian};
use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Multiplicative slack applied on top of the strict inequalities.
const STRICTNESS_MARGIN: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MajorizeError {
    #[error("factor {0} must exceed 2 for a strict majorizer")]
    FactorTooSmall(f64),

    #[error("floor {0} must be positive")]
    NonpositiveFloor(f64),

    #[error("margin {0} must be positive")]
    NonpositiveMargin(f64),

    #[error("power iteration did not converge in {0} iterations")]
    NoConvergence(usize),

    #[error("input matrix is asymmetric (worst deviation {0:e})")]
    AsymmetricInput(f64),

    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Which construction produced the majorizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MajorizerRule {
    Diagonal,
    Spectral,
    BlockIdentity,
    GeneralQuadratic,
}

/// The diagonal `Lhat = diag(alpha)` with all entries positive.
#[derive(Debug, Clone)]
pub struct DiagonalMajorizer {
    alpha: Vec<f64>,
    rule: MajorizerRule,
}

impl DiagonalMajorizer {
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn rule(&self) -> MajorizerRule {
        self.rule
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    /// `z^T (Lhat - L) z`, the gap quadratic form.
    pub fn gap_quadratic_form(&self, lap: &WeightedLaplacian, z: &[f64]) -> Result<f64, GraphError> {
        let energy = lap.dirichlet_energy(z)?;
        let diag: f64 = self.alpha.iter().zip(z).map(|(a, zi)| a * zi * zi).sum();
        Ok(diag - 2.0 * energy)
    }

    /// Frobenius norm of `Lhat - L`, used by the relative stopping rule.
    pub fn frobenius_gap(&self, lap: &WeightedLaplacian) -> f64 {
        let mut sq = 0.0;
        for (a, d) in self.alpha.iter().zip(lap.diag()) {
            let g = a - d;
            sq += g * g;
        }
        for &(_, _, w) in lap.edges() {
            sq += 2.0 * w * w;
        }
        sq.sqrt()
    }

    /// Dense `Lhat - L`, for factorization-based checks on small instances.
    pub fn dense_gap(&self, lap: &WeightedLaplacian) -> DMatrix<f64> {
        let mut m = -lap.to_dense();
        for i in 0..self.alpha.len() {
            m[(i, i)] += self.alpha[i];
        }
        m
    }
}

/// Default floor for rows with zero diagonal (isolated coordinates), keeping
/// `Lhat - L` nonsingular.
pub fn default_floor(lap: &WeightedLaplacian) -> f64 {
    1e-6 * (1.0 + lap.max_diag())
}

/// Per-coordinate rule `alpha_i = max(factor * L_ii, floor)` with `factor > 2`.
pub fn diagonal_majorizer(
    lap: &WeightedLaplacian,
    factor: f64,
    floor: f64,
) -> Result<DiagonalMajorizer, MajorizeError> {
    check_factor_floor(factor, floor)?;
    let alpha = lap.diag().iter().map(|&d| (factor * d).max(floor)).collect();
    Ok(DiagonalMajorizer {
        alpha,
        rule: MajorizerRule::Diagonal,
    })
}

/// Uniform rule `alpha = 2 * lambda_max(L) * (1 + margin)`, with the largest
/// eigenvalue estimated by power iteration on the edge list.
pub fn spectral_majorizer(
    lap: &WeightedLaplacian,
    tol: f64,
    max_iter: usize,
) -> Result<DiagonalMajorizer, MajorizeError> {
    if !(tol > 0.0) {
        return Err(MajorizeError::NonpositiveFloor(tol));
    }
    let lam = power_iteration(lap, tol, max_iter)?;
    let floor = default_floor(lap);
    let a = 2.0 * lam.max(floor) * (1.0 + STRICTNESS_MARGIN);
    Ok(DiagonalMajorizer {
        alpha: vec![a; lap.n()],
        rule: MajorizerRule::Spectral,
    })
}

/// Per-block rule `alpha_i = max(factor * max_{j in block} L_jj, floor)`,
/// constant within each block. Required by block updates whose closed form
/// needs a single scalar per block.
pub fn block_identity_majorizer(
    lap: &WeightedLaplacian,
    partition: &BlockPartition,
    factor: f64,
    floor: f64,
) -> Result<DiagonalMajorizer, MajorizeError> {
    check_factor_floor(factor, floor)?;
    if partition.total() != lap.n() {
        return Err(GraphError::PartitionMismatch {
            total: partition.total(),
            expected: lap.n(),
        }
        .into());
    }
    let mut alpha = vec![0.0; lap.n()];
    for b in 0..partition.num_blocks() {
        let range = partition.range(b);
        let block_max = lap.diag()[range.clone()]
            .iter()
            .cloned()
            .fold(0.0, f64::max);
        let a = (factor * block_max).max(floor);
        for slot in &mut alpha[range] {
            *slot = a;
        }
    }
    Ok(DiagonalMajorizer {
        alpha,
        rule: MajorizerRule::BlockIdentity,
    })
}

/// Row-absolute-sum rule `alpha_i = (1 + margin) * sum_j |Q_ij|` for any
/// symmetric `Q`; `diag(alpha) - Q` is strictly diagonally dominant. For a
/// Laplacian this reduces to `(1 + margin) * 2 L_ii`.
pub fn general_quadratic_majorizer(
    q: &DMatrix<f64>,
    margin: f64,
) -> Result<DiagonalMajorizer, MajorizeError> {
    if !(margin > 0.0) {
        return Err(MajorizeError::NonpositiveMargin(margin));
    }
    assert_eq!(q.nrows(), q.ncols(), "expected a square matrix");
    let n = q.nrows();
    let mut max_abs: f64 = 0.0;
    let mut worst_dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            max_abs = max_abs.max(q[(i, j)].abs());
            if j > i {
                worst_dev = worst_dev.max((q[(i, j)] - q[(j, i)]).abs());
            }
        }
    }
    if worst_dev > 1e-12 * (1.0 + max_abs) {
        return Err(MajorizeError::AsymmetricInput(worst_dev));
    }
    let row_sums: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| q[(i, j)].abs()).sum())
        .collect();
    let floor = 1e-6 * (1.0 + row_sums.iter().cloned().fold(0.0, f64::max));
    let alpha = row_sums
        .iter()
        .map(|&s| if s == 0.0 { floor } else { (1.0 + margin) * s })
        .collect();
    Ok(DiagonalMajorizer {
        alpha,
        rule: MajorizerRule::GeneralQuadratic,
    })
}

/// Evaluates the surrogate
/// `(1/2) z^T L z + (Lz)^T (x - z) + (1/2)(x - z)^T Lhat (x - z)`.
pub fn majorizer_value(
    lap: &WeightedLaplacian,
    majorizer: &DiagonalMajorizer,
    x: &[f64],
    z: &[f64],
) -> Result<f64, GraphError> {
    if x.len() != z.len() {
        return Err(GraphError::DimensionMismatch {
            len: x.len(),
            expected: z.len(),
        });
    }
    let energy_z = lap.dirichlet_energy(z)?;
    let lz = lap.matvec(z)?;
    let mut linear = 0.0;
    let mut quad = 0.0;
    for i in 0..x.len() {
        let d = x[i] - z[i];
        linear += lz[i] * d;
        quad += majorizer.alpha()[i] * d * d;
    }
    Ok(energy_z + linear + 0.5 * quad)
}

fn check_factor_floor(factor: f64, floor: f64) -> Result<(), MajorizeError> {
    if !(factor > 2.0) {
        return Err(MajorizeError::FactorTooSmall(factor));
    }
    if !(floor > 0.0) {
        return Err(MajorizeError::NonpositiveFloor(floor));
    }
    Ok(())
}

/// Largest eigenvalue of `L` by power iteration; the start vector is the
/// all-ones vector with a fixed-seed perturbation (the unperturbed ones
/// vector lies in the kernel). Convergence is tested on the Rayleigh
/// quotient change.
fn power_iteration(
    lap: &WeightedLaplacian,
    tol: f64,
    max_iter: usize,
) -> Result<f64, MajorizeError> {
    let n = lap.n();
    if n == 0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a7d_31c5);
    let mut v: Vec<f64> = (0..n).map(|_| 1.0 + rng.random_range(-0.5..0.5)).collect();
    normalize(&mut v);
    let mut lam_prev = f64::INFINITY;
    let mut w = vec![0.0; n];
    for _ in 0..max_iter {
        lap.matvec_into(&v, &mut w);
        let lam: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // v is in the kernel; for a PSD Laplacian this means L = 0.
            return Ok(0.0);
        }
        if (lam - lam_prev).abs() <= tol * lam.abs().max(1e-300) {
            return Ok(lam);
        }
        lam_prev = lam;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
    }
    Err(MajorizeError::NoConvergence(max_iter))
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}
