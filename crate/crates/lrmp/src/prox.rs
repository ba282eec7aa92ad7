//! Subproblem solvers used by block updates.
//!
//! The portfolio block update minimizes a factor-structured quadratic plus a
//! linear term, a shorting cost `s^T (x)_-`, a diagonal proximal term, and a
//! budget constraint. The smooth part has a closed KKT solution through the
//! matrix-inversion identity (diagonal plus low rank); the shorting cost has
//! a closed coordinate-wise prox; `inner_admm` splits between the two.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProxError {
    #[error("singular system: coordinate {index} has zero curvature")]
    SingularSystem { index: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("splitting did not converge in {0} iterations")]
    NoConvergence(usize),
}

/// `P = diag(d) + scale * F F^T` with `d >= 0` elementwise and `scale >= 0`.
/// `F` is `n x r` row-major with `r` typically much smaller than `n`.
#[derive(Debug, Clone)]
pub struct FactorQuadratic {
    diag: Vec<f64>,
    factors: Vec<f64>,
    rank: usize,
    scale: f64,
}

impl FactorQuadratic {
    pub fn new(
        diag: Vec<f64>,
        factors: Vec<f64>,
        rank: usize,
        scale: f64,
    ) -> Result<Self, ProxError> {
        if rank > 0 && factors.len() != diag.len() * rank {
            return Err(ProxError::InvalidInput(format!(
                "factor matrix has {} entries, expected {} x {}",
                factors.len(),
                diag.len(),
                rank
            )));
        }
        if diag.iter().any(|&d| d < 0.0) {
            return Err(ProxError::InvalidInput("negative diagonal entry".into()));
        }
        if scale < 0.0 {
            return Err(ProxError::InvalidInput("negative factor scale".into()));
        }
        Ok(FactorQuadratic {
            diag,
            factors: if rank == 0 { Vec::new() } else { factors },
            rank,
            scale,
        })
    }

    /// Pure diagonal quadratic.
    pub fn diagonal(diag: Vec<f64>) -> Self {
        FactorQuadratic {
            diag,
            factors: Vec::new(),
            rank: 0,
            scale: 0.0,
        }
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Row-major `n x rank` loadings.
    pub fn factors(&self) -> &[f64] {
        &self.factors
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn factor_row(&self, i: usize) -> &[f64] {
        &self.factors[i * self.rank..(i + 1) * self.rank]
    }

    /// `x^T P x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut value: f64 = self.diag.iter().zip(x).map(|(d, xi)| d * xi * xi).sum();
        if self.rank > 0 && self.scale > 0.0 {
            for a in 0..self.rank {
                let t: f64 = (0..self.n()).map(|i| self.factors[i * self.rank + a] * x[i]).sum();
                value += self.scale * t * t;
            }
        }
        value
    }

    /// `P x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut out: Vec<f64> = self.diag.iter().zip(x).map(|(d, xi)| d * xi).collect();
        if self.rank > 0 && self.scale > 0.0 {
            for a in 0..self.rank {
                let t: f64 = (0..n).map(|i| self.factors[i * self.rank + a] * x[i]).sum();
                let st = self.scale * t;
                for (i, slot) in out.iter_mut().enumerate() {
                    *slot += st * self.factors[i * self.rank + a];
                }
            }
        }
        out
    }

    /// Dense form for small-instance oracles.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
        }
        if self.rank > 0 && self.scale > 0.0 {
            for i in 0..n {
                for j in 0..n {
                    let dot: f64 = (0..self.rank)
                        .map(|a| self.factors[i * self.rank + a] * self.factors[j * self.rank + a])
                        .sum();
                    m[(i, j)] += self.scale * dot;
                }
            }
        }
        m
    }
}

/// Per-unit cost of short positions; the prox of `s^T (x)_-`.
#[derive(Debug, Clone)]
pub struct NegativePartCost {
    s: Vec<f64>,
}

impl NegativePartCost {
    pub fn new(s: Vec<f64>) -> Result<Self, ProxError> {
        if s.iter().any(|&v| v < 0.0) {
            return Err(ProxError::InvalidInput("negative shorting cost".into()));
        }
        Ok(NegativePartCost { s })
    }

    pub fn costs(&self) -> &[f64] {
        &self.s
    }

    /// `s^T (x)_-`.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.s
            .iter()
            .zip(x)
            .map(|(si, xi)| si * (-xi).max(0.0))
            .sum()
    }

    pub fn is_zero(&self) -> bool {
        self.s.iter().all(|&v| v == 0.0)
    }
}

/// Coordinate-wise minimizer of `s_j max(-x_j, 0) + (rho_j / 2)(x_j - u_j)^2`:
/// `u_j` when `u_j >= 0`, `0` when `-s_j/rho_j <= u_j < 0`, and
/// `u_j + s_j/rho_j` below that.
pub fn prox_negative_part(cost: &NegativePartCost, rho: &[f64], u: &[f64]) -> Vec<f64> {
    debug_assert_eq!(cost.s.len(), u.len());
    debug_assert_eq!(rho.len(), u.len());
    u.iter()
        .zip(rho)
        .zip(&cost.s)
        .map(|((&uj, &rj), &sj)| {
            if uj >= 0.0 {
                uj
            } else if uj >= -sj / rj {
                0.0
            } else {
                uj + sj / rj
            }
        })
        .collect()
}

/// Cached solver for `H y = v` with `H = diag(2 d + rho) + 2 scale * F F^T`,
/// via the matrix-inversion identity against the small `r x r` capacitance
/// matrix. The factorization is done once; solves cost `O(n r)`.
struct FactorSolver<'a> {
    quadratic: &'a FactorQuadratic,
    dinv: Vec<f64>,
    /// `W = D^{-1} U` with `U = sqrt(2 scale) F`, row-major `n x r`.
    w: Vec<f64>,
    chol: Option<Cholesky<f64, nalgebra::Dyn>>,
    u_scale: f64,
}

impl<'a> FactorSolver<'a> {
    fn new(quadratic: &'a FactorQuadratic, rho: &[f64]) -> Result<Self, ProxError> {
        let n = quadratic.n();
        debug_assert_eq!(rho.len(), n);
        let mut dinv = Vec::with_capacity(n);
        for (i, (&d, &r)) in quadratic.diag.iter().zip(rho).enumerate() {
            let base = 2.0 * d + r;
            if base <= 0.0 {
                return Err(ProxError::SingularSystem { index: i });
            }
            dinv.push(1.0 / base);
        }
        let rank = quadratic.rank;
        if rank == 0 || quadratic.scale == 0.0 {
            return Ok(FactorSolver {
                quadratic,
                dinv,
                w: Vec::new(),
                chol: None,
                u_scale: 0.0,
            });
        }
        let u_scale = (2.0 * quadratic.scale).sqrt();
        let mut w = vec![0.0; n * rank];
        for i in 0..n {
            for a in 0..rank {
                w[i * rank + a] = dinv[i] * u_scale * quadratic.factors[i * rank + a];
            }
        }
        // capacitance matrix I + U^T D^{-1} U
        let mut cap = DMatrix::identity(rank, rank);
        for i in 0..n {
            let ui = quadratic.factor_row(i);
            let wi = &w[i * rank..(i + 1) * rank];
            for a in 0..rank {
                for b in a..rank {
                    cap[(a, b)] += u_scale * ui[a] * wi[b];
                }
            }
        }
        for a in 0..rank {
            for b in 0..a {
                cap[(a, b)] = cap[(b, a)];
            }
        }
        let chol = Cholesky::new(cap).ok_or(ProxError::SingularSystem { index: 0 })?;
        Ok(FactorSolver {
            quadratic,
            dinv,
            w,
            chol: Some(chol),
            u_scale,
        })
    }

    fn solve(&self, v: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = self.dinv.iter().zip(v).map(|(d, vi)| d * vi).collect();
        if let Some(chol) = &self.chol {
            let rank = self.quadratic.rank;
            let mut t = DVector::zeros(rank);
            for (i, (&di, &vi)) in self.dinv.iter().zip(v).enumerate() {
                let ui = self.quadratic.factor_row(i);
                let yi = di * vi;
                for a in 0..rank {
                    t[a] += self.u_scale * ui[a] * yi;
                }
            }
            chol.solve_mut(&mut t);
            for (i, slot) in y.iter_mut().enumerate() {
                let wi = &self.w[i * rank..(i + 1) * rank];
                let mut corr = 0.0;
                for a in 0..rank {
                    corr += wi[a] * t[a];
                }
                *slot -= corr;
            }
        }
        y
    }
}

/// Minimizes `(1/2) x^T (2P + diag(rho)) x + q^T x - (rho .* u)^T x`
/// subject to `a^T x = b`, by eliminating the multiplier against the
/// factor-structured system.
pub fn solve_eq_quadratic(
    quadratic: &FactorQuadratic,
    q: &[f64],
    rho: &[f64],
    u: &[f64],
    a: &[f64],
    b: f64,
) -> Result<Vec<f64>, ProxError> {
    let solver = FactorSolver::new(quadratic, rho)?;
    solve_with(&solver, q, rho, u, Some((a, b)))
}

fn solve_with(
    solver: &FactorSolver,
    q: &[f64],
    rho: &[f64],
    u: &[f64],
    constraint: Option<(&[f64], f64)>,
) -> Result<Vec<f64>, ProxError> {
    let n = solver.quadratic.n();
    let c: Vec<f64> = (0..n).map(|i| rho[i] * u[i] - q[i]).collect();
    let hc = solver.solve(&c);
    match constraint {
        None => Ok(hc),
        Some((a, b)) => {
            if a.iter().all(|&v| v == 0.0) {
                return Err(ProxError::InvalidInput(
                    "constraint normal is identically zero".into(),
                ));
            }
            let ha = solver.solve(a);
            let denom: f64 = a.iter().zip(&ha).map(|(x, y)| x * y).sum();
            if denom <= 0.0 {
                return Err(ProxError::SingularSystem { index: 0 });
            }
            let achc: f64 = a.iter().zip(&hc).map(|(x, y)| x * y).sum();
            let nu = (achc - b) / denom;
            Ok(hc.iter().zip(&ha).map(|(x, y)| x - nu * y).collect())
        }
    }
}

/// The smooth side of a block subproblem:
/// `(1/2) x^T (2 quadratic) x + linear^T x`, optionally subject to one
/// affine constraint.
pub struct SmoothPart<'a> {
    pub quadratic: &'a FactorQuadratic,
    pub linear: &'a [f64],
    pub constraint: Option<(&'a [f64], f64)>,
}

/// Solves
/// `min (1/2) x^T (2 quadratic) x + linear^T x + s^T (x)_-
///      + (1/2)(x - prox_center)^T diag(alpha) (x - prox_center)`
/// subject to the optional affine constraint, by splitting the negative-part
/// cost from the smooth part. The penalty is the geometric mean of the
/// `alpha` entries, matching the curvature scale of the proximal term.
pub fn inner_admm(
    smooth: &SmoothPart,
    shorting: &NegativePartCost,
    prox_center: &[f64],
    alpha: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, ProxError> {
    let n = prox_center.len();
    if alpha.iter().any(|&a| !(a > 0.0)) {
        return Err(ProxError::InvalidInput(
            "prox weights must be positive".into(),
        ));
    }
    if !(tol > 0.0) {
        return Err(ProxError::InvalidInput("tolerance must be positive".into()));
    }
    let penalty = {
        // curvature scale of the whole smooth side, not just the prox term:
        // the consensus penalty must sit between the extremes of
        // 2P + diag(alpha) or the splitting crawls
        let q = smooth.quadratic;
        let factor_diag = |i: usize| -> f64 {
            if q.rank() == 0 {
                0.0
            } else {
                q.scale()
                    * q.factors()[i * q.rank()..(i + 1) * q.rank()]
                        .iter()
                        .map(|f| f * f)
                        .sum::<f64>()
            }
        };
        let curvatures: Vec<f64> = (0..n)
            .map(|i| 2.0 * (q.diag()[i] + factor_diag(i)) + alpha[i])
            .collect();
        geometric_mean(&curvatures)
    };
    let rho: Vec<f64> = alpha.iter().map(|&a| a + penalty).collect();
    let solver = FactorSolver::new(smooth.quadratic, &rho)?;
    let penalty_vec = vec![penalty; n];

    let mut x = prox_center.to_vec();
    let mut z = x.clone();
    let mut w = vec![0.0; n];
    let mut u = vec![0.0; n];
    for _ in 0..max_iter {
        for i in 0..n {
            u[i] = (alpha[i] * prox_center[i] + penalty * (z[i] - w[i])) / rho[i];
        }
        x = solve_with(&solver, smooth.linear, &rho, &u, smooth.constraint)?;
        let xw: Vec<f64> = x.iter().zip(&w).map(|(a, b)| a + b).collect();
        let z_new = prox_negative_part(shorting, &penalty_vec, &xw);
        let dual: f64 = z_new
            .iter()
            .zip(&z)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
            * penalty;
        z = z_new;
        let mut primal = 0.0;
        for i in 0..n {
            let d = x[i] - z[i];
            primal += d * d;
            w[i] += d;
        }
        let primal = primal.sqrt();
        let scale = tol * (1.0 + crate::solver::norm2(&x));
        if primal <= scale && dual <= scale {
            return Ok(x);
        }
    }
    Err(ProxError::NoConvergence(max_iter))
}

fn geometric_mean(v: &[f64]) -> f64 {
    let log_mean = v.iter().map(|x| x.ln()).sum::<f64>() / v.len() as f64;
    log_mean.exp()
}
