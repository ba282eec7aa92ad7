//! Run configuration and instance specifications, all JSON on disk.

use serde::Deserialize;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SolvePortfolio,
    SolveCovariance,
    RegPath,
    ValidateGraph,
}

/// Top-level run configuration (the `--config` file). Tolerances default
/// per command: 1e-6 absolute for portfolio solves, 1e-5 absolute plus
/// 1e-3 relative for covariance solves, 1e-5/1e-4 for path sweeps.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    /// Instance specification JSON, relative to this config file.
    pub instance: Option<PathBuf>,
    /// Graph file to check, relative to this config file (validate-graph).
    pub graph: Option<PathBuf>,
    pub eps_abs: Option<f64>,
    pub eps_rel: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Fallback seed when the instance spec does not carry one.
    #[serde(default)]
    pub seed: u64,
    /// Output directory; the `--out` flag overrides it.
    pub out: Option<PathBuf>,
    // regularization path controls
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub lambda_points: Option<usize>,
    #[serde(default = "default_warm_start")]
    pub warm_start: bool,
}

fn default_max_iter() -> usize {
    5000
}

fn default_workers() -> usize {
    1
}

fn default_warm_start() -> bool {
    true
}

/// Portfolio instance spec: `{n, T, factors, seed, gamma}`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortfolioSpec {
    pub n: usize,
    #[serde(rename = "T")]
    pub periods: usize,
    pub factors: usize,
    pub seed: Option<u64>,
    pub gamma: Option<f64>,
}

/// Covariance instance spec: `{rows, cols, d, samples, seed, kappa, lambda}`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovSpec {
    pub rows: usize,
    pub cols: usize,
    pub d: usize,
    pub samples: usize,
    pub seed: Option<u64>,
    pub kappa: Option<f64>,
    pub lambda: Option<f64>,
}
