//! Command-line driver: builds instances from JSON specs, runs solves and
//! regularization sweeps, validates graph files, and writes traces,
//! solutions, and summaries to an output directory.
//!
//! Exit status: 0 on convergence (or a valid graph), 2 when the iteration
//! budget ran out, 1 on any error.

// negated comparisons like `!(x > 0.0)` are deliberate: they reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use clap::Parser;
use config::{Command, CovSpec, PortfolioSpec, RunConfig};
use lrmp::covest;
use lrmp::majorize::{default_floor, diagonal_majorizer};
use lrmp::portfolio;
use lrmp::solver::{full_objective, solve, SolveOptions, SolveStatus, SolveTrace};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "lrmp", version, about = "Distributed solver for Laplacian-regularized block-separable problems")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config file's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker count; overrides the config file's `workers`.
    #[arg(long)]
    workers: Option<usize>,
}

enum CliError {
    Config(String),
    Instance(String),
    Graph(String),
    Solver(String),
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Instance(m) => write!(f, "instance error: {m}"),
            CliError::Graph(m) => write!(f, "graph error: {m}"),
            CliError::Solver(m) => write!(f, "solver error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(status) => status,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode, CliError> {
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", cli.config.display())))?;
    let config: RunConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    let base = cli.config.parent().unwrap_or(Path::new("."));
    let workers = cli.workers.unwrap_or(config.workers);
    if workers == 0 {
        return Err(CliError::Config("workers must be >= 1".into()));
    }

    if config.command == Command::ValidateGraph {
        return validate_graph(&config, base);
    }

    let out_dir = cli
        .out
        .clone()
        .or_else(|| config.out.clone())
        .ok_or_else(|| CliError::Config("no output directory (set `out` or pass --out)".into()))?;
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;

    let instance_path = config
        .instance
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs an `instance` spec path".into()))?;
    let instance_text = std::fs::read_to_string(base.join(instance_path))
        .map_err(|e| CliError::Instance(format!("{}: {e}", instance_path.display())))?;

    match config.command {
        Command::SolvePortfolio => solve_portfolio(&config, &instance_text, workers, &out_dir),
        Command::SolveCovariance => solve_cov(&config, &instance_text, workers, &out_dir),
        Command::RegPath => reg_path(&config, &instance_text, workers, &out_dir),
        Command::ValidateGraph => unreachable!("handled above"),
    }
}

fn validate_graph(config: &RunConfig, base: &Path) -> Result<ExitCode, CliError> {
    let path = config
        .graph
        .as_ref()
        .ok_or_else(|| CliError::Config("validate-graph needs a `graph` path".into()))?;
    match lrmp::graph::read_graph_file(base.join(path)) {
        Err(lrmp::GraphError::Io(e)) => Err(CliError::Graph(format!("{}: {e}", path.display()))),
        Err(err) => {
            eprintln!("invalid Laplacian: {err}");
            Ok(ExitCode::from(1))
        }
        Ok(lap) => {
            let report = lrmp::validate(&lap.to_dense());
            if report.is_valid() {
                println!("valid Laplacian: {} nodes, {} edges", lap.n(), lap.num_edges());
                Ok(ExitCode::from(0))
            } else {
                eprintln!("invalid Laplacian: {}", report.violations().join("; "));
                Ok(ExitCode::from(1))
            }
        }
    }
}

fn solve_options(config: &RunConfig, workers: usize, eps_abs: f64, eps_rel: f64) -> SolveOptions {
    SolveOptions {
        eps_abs: config.eps_abs.unwrap_or(eps_abs),
        eps_rel: config.eps_rel.unwrap_or(eps_rel),
        max_iter: config.max_iter,
        workers,
        record_objective: true,
    }
}

fn solve_portfolio(
    config: &RunConfig,
    instance_text: &str,
    workers: usize,
    out_dir: &Path,
) -> Result<ExitCode, CliError> {
    let spec: PortfolioSpec =
        serde_json::from_str(instance_text).map_err(|e| CliError::Instance(e.to_string()))?;
    let mut instance = portfolio::generate_instance(
        spec.n,
        spec.periods,
        spec.factors,
        spec.seed.unwrap_or(config.seed),
    );
    if let Some(gamma) = spec.gamma {
        instance.gamma = gamma;
    }
    let (lap, partition, problem) =
        portfolio::build_problem(&instance).map_err(|e| CliError::Instance(e.to_string()))?;
    let majorizer = diagonal_majorizer(&lap, 3.0, default_floor(&lap))
        .map_err(|e| CliError::Instance(e.to_string()))?;
    let opts = solve_options(config, workers, 1e-6, 0.0);

    let started = Instant::now();
    let outcome = solve(&lap, &partition, &majorizer, &problem, None, &opts)
        .map_err(|e| CliError::Solver(e.to_string()))?;
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;

    write_trace(out_dir, &outcome.trace)?;
    let mut weights = String::new();
    for t in 0..instance.periods {
        let row: Vec<String> = partition
            .block(t, &outcome.x)
            .iter()
            .map(|v| v.to_string())
            .collect();
        writeln!(weights, "{}", row.join(",")).expect("string write");
    }
    write_file(out_dir.join("weights.csv"), &weights)?;

    let objective = full_objective(&lap, &partition, &problem, &outcome.x);
    write_summary(out_dir, &outcome.trace, objective, wall_ms)?;
    Ok(status_code(outcome.trace.status))
}

fn cov_instance(config: &RunConfig, instance_text: &str) -> Result<covest::CovInstance, CliError> {
    let spec: CovSpec =
        serde_json::from_str(instance_text).map_err(|e| CliError::Instance(e.to_string()))?;
    let mut instance = covest::generate_instance(
        spec.rows,
        spec.cols,
        spec.d,
        spec.samples,
        spec.seed.unwrap_or(config.seed),
    );
    if let Some(kappa) = spec.kappa {
        instance.kappa = kappa;
    }
    if let Some(lambda) = spec.lambda {
        instance.lambda = lambda;
    }
    Ok(instance)
}

fn solve_cov(
    config: &RunConfig,
    instance_text: &str,
    workers: usize,
    out_dir: &Path,
) -> Result<ExitCode, CliError> {
    let instance = cov_instance(config, instance_text)?;
    let opts = solve_options(config, workers, 1e-5, 1e-3);

    let started = Instant::now();
    let solved =
        covest::solve_covariance(&instance, &opts, None).map_err(|e| CliError::Solver(e.to_string()))?;
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;

    write_trace(out_dir, &solved.trace)?;
    let mut text = format!("p {} d {}\n", instance.num_nodes(), instance.dim);
    for (i, theta) in solved.thetas.iter().enumerate() {
        writeln!(text, "node {i}").expect("string write");
        for r in 0..instance.dim {
            let row: Vec<String> = (0..instance.dim)
                .map(|c| format!("{:.16e}", theta[(r, c)]))
                .collect();
            writeln!(text, "{}", row.join(" ")).expect("string write");
        }
    }
    write_file(out_dir.join("thetas.txt"), &text)?;

    let objective = covest::objective_value(&instance, &solved.thetas);
    write_summary(out_dir, &solved.trace, objective, wall_ms)?;
    Ok(status_code(solved.trace.status))
}

fn reg_path(
    config: &RunConfig,
    instance_text: &str,
    workers: usize,
    out_dir: &Path,
) -> Result<ExitCode, CliError> {
    let instance = cov_instance(config, instance_text)?;
    let lo = config.lambda_min.unwrap_or(1e-4);
    let hi = config.lambda_max.unwrap_or(1e2);
    let points = config.lambda_points.unwrap_or(20);
    if points < 2 || !(lo > 0.0) || !(hi > lo) {
        return Err(CliError::Config(format!(
            "bad lambda grid: min {lo}, max {hi}, points {points}"
        )));
    }
    let lambdas: Vec<f64> = (0..points)
        .map(|i| {
            10f64.powf(lo.log10() + (hi.log10() - lo.log10()) * i as f64 / (points - 1) as f64)
        })
        .collect();
    let opts = solve_options(config, workers, 1e-5, 1e-4);

    let started = Instant::now();
    let path = covest::regularization_path(&instance, &lambdas, config.warm_start, &opts)
        .map_err(|e| CliError::Solver(e.to_string()))?;
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;

    let mut csv = String::from("lambda,iterations,rmse\n");
    for point in &path {
        writeln!(csv, "{},{},{}", point.lambda, point.iterations, point.rmse)
            .expect("string write");
    }
    write_file(out_dir.join("path.csv"), &csv)?;

    let last = path.last().expect("grid is non-empty");
    let total_iterations: usize = path.iter().map(|p| p.iterations).sum();
    let mut final_instance = instance.clone();
    final_instance.lambda = last.lambda;
    let objective = covest::objective_value(&final_instance, &last.thetas);

    // trace of the final lambda, re-solved warm from the previous point
    let final_trace = {
        let warm: Option<Vec<_>> = if config.warm_start && path.len() >= 2 {
            Some(path[path.len() - 2].thetas.clone())
        } else {
            None
        };
        covest::solve_covariance(&final_instance, &opts, warm.as_deref())
            .map_err(|e| CliError::Solver(e.to_string()))?
            .trace
    };
    write_trace(out_dir, &final_trace)?;

    let summary = format!(
        "{{\n  \"iterations\": {},\n  \"final_residual\": {},\n  \"final_objective\": {},\n  \"wall_ms\": {:.3}\n}}\n",
        total_iterations,
        json_float(final_trace.records.iter().rev().find_map(|r| r.residual_norm)),
        json_float(Some(objective)),
        wall_ms
    );
    write_file(out_dir.join("summary.json"), &summary)?;
    Ok(status_code(final_trace.status))
}

fn write_trace(out_dir: &Path, trace: &SolveTrace) -> Result<(), CliError> {
    let mut buf = Vec::new();
    trace
        .write_csv(&mut buf)
        .map_err(|e| CliError::Io(e.to_string()))?;
    write_file(out_dir.join("trace.csv"), &String::from_utf8(buf).expect("csv is utf-8"))
}

fn write_summary(
    out_dir: &Path,
    trace: &SolveTrace,
    objective: f64,
    wall_ms: f64,
) -> Result<(), CliError> {
    let final_residual = trace.records.iter().rev().find_map(|r| r.residual_norm);
    let summary = format!(
        "{{\n  \"iterations\": {},\n  \"final_residual\": {},\n  \"final_objective\": {},\n  \"wall_ms\": {:.3}\n}}\n",
        trace.iterations(),
        json_float(final_residual),
        json_float(Some(objective)),
        wall_ms
    );
    write_file(out_dir.join("summary.json"), &summary)
}

fn json_float(value: Option<f64>) -> String {
    match value {
        Some(v) if v.is_finite() => v.to_string(),
        _ => "null".into(),
    }
}

fn write_file(path: PathBuf, content: &str) -> Result<(), CliError> {
    std::fs::write(&path, content).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn status_code(status: SolveStatus) -> ExitCode {
    match status {
        SolveStatus::Converged => ExitCode::from(0),
        SolveStatus::MaxIter => ExitCode::from(2),
    }
}
