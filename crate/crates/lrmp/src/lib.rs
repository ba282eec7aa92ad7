//! Distributed majorization-minimization for block-separable convex
//! objectives with Laplacian regularization.
//!
//! The problem family is `minimize f(x) + (1/2) x^T L x` where
//! `f(x) = sum_i f_i(x_i)` is block separable (possibly nonsmooth, possibly
//! encoding constraints through infinite values) and `L` is a weighted graph
//! Laplacian coupling the blocks. Replacing the Laplacian term with a
//! separable diagonal surrogate makes every iteration a batch of independent
//! proximal subproblems, one per block, which run in parallel.
//!
//! Crate layout:
//!
//! - [`graph`]: weighted Laplacians, block partitions, grid graphs, the
//!   on-disk graph format.
//! - [`majorize`]: diagonal surrogate constructions and their validity
//!   checks.
//! - [`solver`]: the iteration loop, stopping rule, and trace recording.
//! - [`prox`]: factor-structured quadratic solves, the negative-part prox,
//!   and the inner splitting used by portfolio blocks.
//! - [`portfolio`]: multi-period portfolio optimization with quadratic
//!   transaction costs.
//! - [`covest`]: Laplacian-regularized inverse covariance estimation on a
//!   grid, with an analytic eigendecomposition update and a warm-started
//!   regularization path.
//! - [`oracle`]: independent reference solvers (proximal gradient, dense
//!   KKT) for validating small instances.

// negated comparisons like `!(x > 0.0)` are deliberate: they reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod covest;
pub mod graph;
pub mod majorize;
pub mod oracle;
pub mod portfolio;
pub mod prox;
pub mod solver;

pub use graph::{
    grid_graph, laplacian_from_edges, validate, BlockPartition, GraphError, LaplacianReport,
    PartitionedVector, WeightedLaplacian,
};
pub use majorize::{
    block_identity_majorizer, default_floor, diagonal_majorizer, general_quadratic_majorizer,
    majorizer_value, spectral_majorizer, DiagonalMajorizer, MajorizeError, MajorizerRule,
};
pub use solver::{
    full_objective, residual, solve, stopping_threshold, BlockProblem, BlockUpdateError,
    SolveError, SolveOptions, SolveOutcome, SolveStatus, SolveTrace,
};
