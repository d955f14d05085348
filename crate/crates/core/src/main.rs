//! Command-line surface for the toolkit.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
//! Errors are reported as one JSON object on stderr. Every
//! artifact-producing run writes a `manifest.json` with all resolved
//! parameters beside its outputs.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use learner::analysis;
use learner::dlearner;
use learner::error::Error;
use learner::fit::{fit, FitResult, FitSpec};
use learner::io;
use learner::matrix::{truncated_svd, ObservedMatrix, SourceBases, TruncatedSvd};
use learner::rng::GENERATOR_ID;
use learner::select::{
    cv_select, default_rank_upper_bound, external_select, select_rank, PenaltyGrid, RankStrategy,
    SelectionResult,
};
use learner::sim::{self, Method, NoiseAxis};

#[derive(Parser)]
#[command(name = "learner", version, about = "Low-rank matrix estimation with latent-space transfer from a source population")]
struct Cli {
    /// Worker threads for grid search and simulations (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit with explicit penalties.
    Fit(FitArgs),
    /// Select penalties by four-fold cross-validation, then refit.
    CvFit(CvFitArgs),
    /// Select penalties against an external dataset.
    ExtFit(ExtFitArgs),
    /// Direct projection estimator (no tuning parameters).
    Dlearner(DlearnerArgs),
    /// Select the rank from source data.
    Rank(RankArgs),
    /// Run a simulation scenario preset.
    Simulate(SimulateArgs),
    /// Post-fit analysis utilities.
    Analyze {
        #[command(subcommand)]
        task: AnalyzeTask,
    },
}

#[derive(Args)]
struct InputPair {
    /// Target population matrix (CSV; NA or empty = missing).
    #[arg(long)]
    y0: PathBuf,
    /// Source population matrix (CSV).
    #[arg(long)]
    y1: PathBuf,
    /// Replace missing entries by observed zeros on input.
    #[arg(long)]
    impute_zero: bool,
    /// Rank; selected from the source matrix when omitted.
    #[arg(long)]
    rank: Option<usize>,
    /// Loose upper bound for rank selection (default: min(p,q)/3 capped at 16).
    #[arg(long)]
    upper_bound: Option<usize>,
}

#[derive(Args)]
struct OptimArgs {
    /// Step size c (each update moves a factor by c times its norm).
    #[arg(long, conflicts_with = "step_preset")]
    step: Option<f64>,
    /// Named step size: high = 0.0035, moderate = 0.035, low = 0.07.
    #[arg(long)]
    step_preset: Option<String>,
    #[arg(long, default_value_t = FitSpec::DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Stop when |eps_t - eps_{t-1}| falls below this.
    #[arg(long, default_value_t = FitSpec::DEFAULT_TOL)]
    tol: f64,
    /// Declare divergence when eps_t exceeds this multiple of eps_0.
    #[arg(long, default_value_t = FitSpec::DEFAULT_DIVERGENCE_FACTOR)]
    divergence_factor: f64,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputPair,
    /// Shared transfer penalty for both latent spaces.
    #[arg(long, conflicts_with_all = ["lambda1_row", "lambda1_col"])]
    lambda1: Option<f64>,
    /// Row-space transfer penalty (use with --lambda1-col).
    #[arg(long, requires = "lambda1_col")]
    lambda1_row: Option<f64>,
    /// Column-space transfer penalty (use with --lambda1-row).
    #[arg(long, requires = "lambda1_row")]
    lambda1_col: Option<f64>,
    /// Balance penalty on ||U'U - V'V||_F^2.
    #[arg(long)]
    lambda2: f64,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    /// Explicit candidate lambda1 values, comma-separated ascending.
    #[arg(long, conflicts_with = "lambda1_bounds")]
    lambda1_values: Option<String>,
    /// Log-equispaced lambda1 grid bounds "LO,HI".
    #[arg(long)]
    lambda1_bounds: Option<String>,
    /// Explicit candidate lambda2 values, comma-separated ascending.
    #[arg(long, conflicts_with = "lambda2_bounds")]
    lambda2_values: Option<String>,
    /// Log-equispaced lambda2 grid bounds "LO,HI".
    #[arg(long)]
    lambda2_bounds: Option<String>,
    /// Points per log-equispaced grid.
    #[arg(long, default_value_t = 5)]
    grid_points: usize,
    /// Sweep row- and column-space penalties independently.
    #[arg(long)]
    separate_penalties: bool,
}

#[derive(Args)]
struct CvFitArgs {
    #[command(flatten)]
    input: InputPair,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// Seed for the fold partition.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ExtFitArgs {
    #[command(flatten)]
    input: InputPair,
    /// External target-population dataset used for scoring.
    #[arg(long)]
    y0_ext: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DlearnerArgs {
    #[command(flatten)]
    input: InputPair,
    /// Convergence tolerance for rank-r completion under missing data.
    #[arg(long, default_value_t = 1e-6)]
    completion_tol: f64,
    #[arg(long, default_value_t = 500)]
    completion_max_iter: usize,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RankArgs {
    /// Source matrix to select the rank from.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    upper_bound: Option<usize>,
    /// screenot | gap | fixed
    #[arg(long, default_value = "screenot")]
    strategy: String,
    /// Rank returned by the fixed strategy.
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    impute_zero: bool,
    /// When set, also writes rank.json and a manifest there.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario preset name (see --help for the list).
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(sim::PRESET_NAMES))]
    preset: String,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    sigma0_sq: Option<f64>,
    #[arg(long)]
    sigma1_sq: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    perturb_scale: Option<f64>,
    /// column | row
    #[arg(long, default_value = "column")]
    noise_axis: String,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated subset of tsvd,learner,dlearner.
    #[arg(long, default_value = "tsvd,learner,dlearner")]
    methods: String,
    /// Override the preset step size.
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum AnalyzeTask {
    /// Leading singular values of a matrix.
    Scree {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        impute_zero: bool,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Squared-loading contribution scores of an orthonormal basis.
    Scores {
        /// Orthonormal basis CSV (columns = factors).
        #[arg(long, conflicts_with = "theta")]
        basis: Option<PathBuf>,
        /// Estimate CSV; its SVD supplies the basis.
        #[arg(long, requires = "rank")]
        theta: Option<PathBuf>,
        #[arg(long)]
        rank: Option<usize>,
        /// u = row-side basis, v = column-side basis (with --theta).
        #[arg(long, default_value = "v")]
        side: String,
        #[arg(long, default_value = "row")]
        axis_label: String,
        /// Also write the top-N rows per factor, sorted by score.
        #[arg(long)]
        top: Option<usize>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Varimax rotation of a loading matrix.
    Varimax {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Projection-matrix comparison on an index subset.
    Projection {
        #[arg(long)]
        qa: PathBuf,
        #[arg(long)]
        qb: PathBuf,
        /// Comma-separated row indices (default: all rows).
        #[arg(long)]
        indices: Option<String>,
        /// Random subset size (with --seed).
        #[arg(long, conflicts_with = "indices")]
        sample: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let code = match dispatch(cli.command, cli.threads) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            let payload = json!({
                "error": { "kind": e.kind(), "message": e.to_string(), "exit_code": code }
            });
            eprintln!("{payload}");
            code
        }
    };
    std::process::exit(code);
}

fn dispatch(command: Command, threads: Option<usize>) -> Result<(), Error> {
    match command {
        Command::Fit(args) => run_fit(args, threads),
        Command::CvFit(args) => run_cv_fit(args, threads),
        Command::ExtFit(args) => run_ext_fit(args, threads),
        Command::Dlearner(args) => run_dlearner(args, threads),
        Command::Rank(args) => run_rank(args, threads),
        Command::Simulate(args) => run_simulate(args, threads),
        Command::Analyze { task } => run_analyze(task, threads),
    }
}

/// Loaded input pair plus the resolved rank and source decomposition.
struct ResolvedInputs {
    y0: ObservedMatrix,
    rank: usize,
    source: TruncatedSvd,
    rank_was_selected: bool,
    upper_bound: usize,
}

fn load_matrix(path: &Path, impute_zero: bool) -> Result<ObservedMatrix, Error> {
    let m = io::read_matrix(path)?;
    Ok(if impute_zero { m.impute_zero() } else { m })
}

fn resolve_inputs(input: &InputPair) -> Result<ResolvedInputs, Error> {
    let y0 = load_matrix(&input.y0, input.impute_zero)?;
    let y1 = load_matrix(&input.y1, input.impute_zero)?;
    if !y1.is_fully_observed() {
        return Err(Error::InvalidConfig(
            "source matrix has missing entries; pass --impute-zero or complete it first".into(),
        ));
    }
    let y1_dense = y1.values().clone();
    let upper_bound = input
        .upper_bound
        .unwrap_or_else(|| default_rank_upper_bound(y1_dense.nrows(), y1_dense.ncols()));
    let (rank, selected) = match input.rank {
        Some(r) => (r, false),
        None => (
            select_rank(&y1_dense, upper_bound, RankStrategy::ScreeNot)?,
            true,
        ),
    };
    let source = truncated_svd(&y1_dense, rank)?;
    Ok(ResolvedInputs {
        y0,
        rank,
        source,
        rank_was_selected: selected,
        upper_bound,
    })
}

fn resolve_step(optim: &OptimArgs) -> Result<f64, Error> {
    match (optim.step, optim.step_preset.as_deref()) {
        (Some(step), None) => Ok(step),
        (None, Some("high")) => Ok(0.0035),
        (None, Some("moderate")) => Ok(0.035),
        (None, Some("low")) => Ok(0.07),
        (None, Some(other)) => Err(Error::InvalidConfig(format!(
            "unknown step preset '{other}'; use high, moderate, or low"
        ))),
        (None, None) => Err(Error::InvalidConfig(
            "pass --step or --step-preset".into(),
        )),
        (Some(_), Some(_)) => unreachable!("clap conflict"),
    }
}

fn make_spec(
    rank: usize,
    l1_row: f64,
    l1_col: f64,
    lambda2: f64,
    optim: &OptimArgs,
) -> Result<FitSpec, Error> {
    let mut spec = FitSpec::new(rank, 0.0, lambda2, resolve_step(optim)?);
    spec.lambda1_row = l1_row;
    spec.lambda1_col = l1_col;
    spec.max_iter = optim.max_iter;
    spec.tol = optim.tol;
    spec.divergence_factor = optim.divergence_factor;
    Ok(spec)
}

fn parse_f64_list(text: &str, what: &str) -> Result<Vec<f64>, Error> {
    text.split(',')
        .map(|tok| {
            tok.trim().parse::<f64>().map_err(|_| {
                Error::InvalidConfig(format!("cannot parse '{tok}' in {what} as a number"))
            })
        })
        .collect()
}

fn build_grid(args: &GridArgs) -> Result<PenaltyGrid, Error> {
    let lambda1 = match (&args.lambda1_values, &args.lambda1_bounds) {
        (Some(values), _) => parse_f64_list(values, "--lambda1-values")?,
        (None, Some(bounds)) => {
            let b = parse_f64_list(bounds, "--lambda1-bounds")?;
            if b.len() != 2 {
                return Err(Error::InvalidConfig("--lambda1-bounds needs LO,HI".into()));
            }
            PenaltyGrid::log_spaced(b[0], b[1], args.grid_points)?
        }
        (None, None) => PenaltyGrid::log_spaced(1e-4, 1e4, args.grid_points)?,
    };
    let lambda2 = match (&args.lambda2_values, &args.lambda2_bounds) {
        (Some(values), _) => parse_f64_list(values, "--lambda2-values")?,
        (None, Some(bounds)) => {
            let b = parse_f64_list(bounds, "--lambda2-bounds")?;
            if b.len() != 2 {
                return Err(Error::InvalidConfig("--lambda2-bounds needs LO,HI".into()));
            }
            PenaltyGrid::log_spaced(b[0], b[1], args.grid_points)?
        }
        (None, None) => PenaltyGrid::log_spaced(1e-4, 1e4, args.grid_points)?,
    };
    let grid = PenaltyGrid::new(lambda1, lambda2)?;
    Ok(if args.separate_penalties {
        grid.with_separate_penalties()
    } else {
        grid
    })
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })
}

fn fit_summary(result: &FitResult) -> serde_json::Value {
    json!({
        "termination": format!("{:?}", result.termination),
        "iterations": result.objective_trajectory.len() - 1,
        "t_best": result.t_best,
        "best_objective": result.best_objective(),
    })
}

fn write_fit_outputs(
    result: &FitResult,
    out_dir: &Path,
) -> Result<Vec<String>, Error> {
    let theta_path = out_dir.join("theta.csv");
    io::write_dense(&result.theta_hat(), &theta_path)?;
    let traj_path = out_dir.join("trajectory.csv");
    io::write_trajectory(result, &traj_path)?;
    Ok(vec![
        theta_path.display().to_string(),
        traj_path.display().to_string(),
    ])
}

fn run_fit(args: FitArgs, threads: Option<usize>) -> Result<(), Error> {
    let (l1_row, l1_col) = match (args.lambda1, args.lambda1_row, args.lambda1_col) {
        (Some(shared), None, None) => (shared, shared),
        (None, Some(row), Some(col)) => (row, col),
        _ => {
            return Err(Error::InvalidConfig(
                "pass --lambda1, or both --lambda1-row and --lambda1-col".into(),
            ))
        }
    };
    let inputs = resolve_inputs(&args.input)?;
    let spec = make_spec(inputs.rank, l1_row, l1_col, args.lambda2, &args.optim)?;
    let result = fit(&inputs.y0, &inputs.source, None, &spec)?;

    ensure_dir(&args.out_dir)?;
    let outputs = write_fit_outputs(&result, &args.out_dir)?;
    let mut manifest = io::Manifest::new(
        "fit",
        json!({
            "rank": inputs.rank,
            "rank_selected": inputs.rank_was_selected,
            "upper_bound": inputs.upper_bound,
            "spec": spec,
            "impute_zero": args.input.impute_zero,
            "threads": threads,
            "fit": fit_summary(&result),
        }),
    );
    manifest.inputs = vec![
        args.input.y0.display().to_string(),
        args.input.y1.display().to_string(),
    ];
    manifest.outputs = outputs;
    io::write_manifest(&manifest, &args.out_dir)?;
    println!(
        "fit: rank {} termination {:?} t_best {} objective {}",
        inputs.rank,
        result.termination,
        result.t_best,
        result.best_objective()
    );
    Ok(())
}

fn selection_summary(sel: &SelectionResult) -> serde_json::Value {
    let best = sel.best_lambdas();
    json!({
        "best_lambda1_row": best.lambda1_row,
        "best_lambda1_col": best.lambda1_col,
        "best_lambda2": best.lambda2,
        "best_mean_mse": sel.cells[sel.best_index].mean_mse,
        "cells": sel.cells.len(),
        "folds_seed": sel.folds_seed,
        "fit": fit_summary(&sel.final_fit),
    })
}

fn run_cv_fit(args: CvFitArgs, threads: Option<usize>) -> Result<(), Error> {
    let inputs = resolve_inputs(&args.input)?;
    let grid = build_grid(&args.grid)?;
    let template = make_spec(inputs.rank, 0.0, 0.0, 0.0, &args.optim)?;
    let sel = cv_select(&inputs.y0, &inputs.source, &grid, &template, args.seed)?;

    ensure_dir(&args.out_dir)?;
    let mut outputs = write_fit_outputs(&sel.final_fit, &args.out_dir)?;
    let table_path = args.out_dir.join("cv_table.csv");
    io::write_cv_table(&sel, &table_path)?;
    outputs.push(table_path.display().to_string());
    let mut manifest = io::Manifest::new(
        "cv-fit",
        json!({
            "rank": inputs.rank,
            "rank_selected": inputs.rank_was_selected,
            "upper_bound": inputs.upper_bound,
            "grid": grid,
            "step": args.optim.step,
            "max_iter": args.optim.max_iter,
            "tol": args.optim.tol,
            "divergence_factor": args.optim.divergence_factor,
            "impute_zero": args.input.impute_zero,
            "threads": threads,
            "selection": selection_summary(&sel),
        }),
    );
    manifest.seed = Some(args.seed);
    manifest.generator = Some(GENERATOR_ID);
    manifest.inputs = vec![
        args.input.y0.display().to_string(),
        args.input.y1.display().to_string(),
    ];
    manifest.outputs = outputs;
    io::write_manifest(&manifest, &args.out_dir)?;
    let best = sel.best_lambdas();
    println!(
        "cv-fit: rank {} best (lambda1_row {}, lambda1_col {}, lambda2 {}) mean mse {}",
        inputs.rank,
        best.lambda1_row,
        best.lambda1_col,
        best.lambda2,
        sel.cells[sel.best_index].mean_mse
    );
    Ok(())
}

fn run_ext_fit(args: ExtFitArgs, threads: Option<usize>) -> Result<(), Error> {
    let inputs = resolve_inputs(&args.input)?;
    let y0_ext = load_matrix(&args.y0_ext, false)?;
    let grid = build_grid(&args.grid)?;
    let template = make_spec(inputs.rank, 0.0, 0.0, 0.0, &args.optim)?;
    let sel = external_select(&inputs.y0, &inputs.source, &y0_ext, &grid, &template)?;

    ensure_dir(&args.out_dir)?;
    let mut outputs = write_fit_outputs(&sel.final_fit, &args.out_dir)?;
    let table_path = args.out_dir.join("cv_table.csv");
    io::write_cv_table(&sel, &table_path)?;
    outputs.push(table_path.display().to_string());
    let mut manifest = io::Manifest::new(
        "ext-fit",
        json!({
            "rank": inputs.rank,
            "rank_selected": inputs.rank_was_selected,
            "upper_bound": inputs.upper_bound,
            "grid": grid,
            "step": args.optim.step,
            "max_iter": args.optim.max_iter,
            "tol": args.optim.tol,
            "divergence_factor": args.optim.divergence_factor,
            "impute_zero": args.input.impute_zero,
            "threads": threads,
            "selection": selection_summary(&sel),
        }),
    );
    manifest.inputs = vec![
        args.input.y0.display().to_string(),
        args.input.y1.display().to_string(),
        args.y0_ext.display().to_string(),
    ];
    manifest.outputs = outputs;
    io::write_manifest(&manifest, &args.out_dir)?;
    let best = sel.best_lambdas();
    println!(
        "ext-fit: rank {} best (lambda1_row {}, lambda1_col {}, lambda2 {}) ext mse {}",
        inputs.rank,
        best.lambda1_row,
        best.lambda1_col,
        best.lambda2,
        sel.cells[sel.best_index].mean_mse
    );
    Ok(())
}

fn run_dlearner(args: DlearnerArgs, threads: Option<usize>) -> Result<(), Error> {
    let inputs = resolve_inputs(&args.input)?;
    let bases = SourceBases::from_svd(&inputs.source);
    let theta = if inputs.y0.is_fully_observed() {
        dlearner::d_learner(inputs.y0.values(), &bases)?
    } else {
        dlearner::d_learner_missing(
            &inputs.y0,
            &bases,
            inputs.rank,
            args.completion_tol,
            args.completion_max_iter,
        )?
    };

    ensure_dir(&args.out_dir)?;
    let theta_path = args.out_dir.join("theta.csv");
    io::write_dense(&theta, &theta_path)?;
    let mut manifest = io::Manifest::new(
        "dlearner",
        json!({
            "rank": inputs.rank,
            "rank_selected": inputs.rank_was_selected,
            "upper_bound": inputs.upper_bound,
            "completion_tol": args.completion_tol,
            "completion_max_iter": args.completion_max_iter,
            "impute_zero": args.input.impute_zero,
            "threads": threads,
        }),
    );
    manifest.inputs = vec![
        args.input.y0.display().to_string(),
        args.input.y1.display().to_string(),
    ];
    manifest.outputs = vec![theta_path.display().to_string()];
    io::write_manifest(&manifest, &args.out_dir)?;
    println!("dlearner: rank {}", inputs.rank);
    Ok(())
}

fn run_rank(args: RankArgs, threads: Option<usize>) -> Result<(), Error> {
    let y1 = load_matrix(&args.input, args.impute_zero)?;
    let dense = y1.to_dense()?;
    let upper_bound = args
        .upper_bound
        .unwrap_or_else(|| default_rank_upper_bound(dense.nrows(), dense.ncols()));
    let strategy = match args.strategy.as_str() {
        "screenot" => RankStrategy::ScreeNot,
        "gap" => RankStrategy::GapFallback,
        "fixed" => RankStrategy::FixedRank(args.rank.ok_or_else(|| {
            Error::InvalidConfig("--strategy fixed requires --rank".into())
        })?),
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown strategy '{other}'; use screenot, gap, or fixed"
            )))
        }
    };
    let rank = select_rank(dense, upper_bound, strategy)?;
    println!("{rank}");
    if let Some(dir) = args.out_dir {
        ensure_dir(&dir)?;
        let rank_path = dir.join("rank.json");
        std::fs::write(
            &rank_path,
            format!(
                "{}\n",
                json!({"rank": rank, "upper_bound": upper_bound, "strategy": args.strategy})
            ),
        )
        .map_err(|e| Error::Io {
            path: rank_path.display().to_string(),
            source: e,
        })?;
        let mut manifest = io::Manifest::new(
            "rank",
            json!({
                "upper_bound": upper_bound,
                "strategy": args.strategy,
                "impute_zero": args.impute_zero,
                "threads": threads,
            }),
        );
        manifest.inputs = vec![args.input.display().to_string()];
        manifest.outputs = vec![rank_path.display().to_string()];
        io::write_manifest(&manifest, &dir)?;
    }
    Ok(())
}

fn parse_methods(text: &str) -> Result<Vec<Method>, Error> {
    text.split(',')
        .map(|tok| match tok.trim() {
            "tsvd" | "target-svd" => Ok(Method::TargetSvd),
            "learner" => Ok(Method::Learner),
            "dlearner" => Ok(Method::DLearner),
            other => Err(Error::InvalidConfig(format!(
                "unknown method '{other}'; use tsvd, learner, dlearner"
            ))),
        })
        .collect()
}

fn run_simulate(args: SimulateArgs, threads: Option<usize>) -> Result<(), Error> {
    let bundle = sim::preset(&args.preset)?;
    let mut scenario = bundle.scenario.clone();
    if let Some(p) = args.p {
        scenario.p = p;
    }
    if let Some(q) = args.q {
        scenario.q = q;
    }
    if let Some(r) = args.r {
        scenario.r = r;
    }
    if let Some(s0) = args.sigma0_sq {
        scenario.sigma0_sq = s0;
    }
    if let Some(s1) = args.sigma1_sq {
        scenario.sigma1_sq = s1;
    }
    if let Some(rho) = args.rho {
        scenario.rho = rho;
    }
    if let Some(scale) = args.perturb_scale {
        scenario.perturb_scale = scale;
    }
    scenario.noise_axis = match args.noise_axis.as_str() {
        "column" => NoiseAxis::WithinColumn,
        "row" => NoiseAxis::WithinRow,
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown noise axis '{other}'; use column or row"
            )))
        }
    };
    if let Some(reps) = args.reps {
        scenario.reps = reps;
    }
    scenario.seed = args.seed;

    let mut spec = bundle.spec.clone();
    spec.rank = scenario.r;
    if let Some(step) = args.step {
        spec.step_size = step;
    }
    if let Some(max_iter) = args.max_iter {
        spec.max_iter = max_iter;
    }
    let methods = parse_methods(&args.methods)?;

    let report = sim::run_scenario(&scenario, &methods, Some(&bundle.grid), Some(&spec))?;

    ensure_dir(&args.out_dir)?;
    let report_path = args.out_dir.join("report.json");
    let body = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::InvalidConfig(format!("report serialization: {e}")))?;
    std::fs::write(&report_path, format!("{body}\n")).map_err(|e| Error::Io {
        path: report_path.display().to_string(),
        source: e,
    })?;

    let csv_path = args.out_dir.join("report.csv");
    let mut csv = String::from(
        "preset,p,q,r,similarity,sigma0_sq,sigma1_sq,rho,reps,seed,method,mean_error,sd_error,mean_d_u,mean_d_v\n",
    );
    for m in &report.methods {
        csv.push_str(&format!(
            "{},{},{},{},{:?},{},{},{},{},{},{},{},{},{},{}\n",
            bundle.name,
            scenario.p,
            scenario.q,
            scenario.r,
            scenario.similarity,
            scenario.sigma0_sq,
            scenario.sigma1_sq,
            scenario.rho,
            scenario.reps,
            scenario.seed,
            m.method,
            m.mean_error,
            m.sd_error,
            report.mean_d_u,
            report.mean_d_v
        ));
    }
    std::fs::write(&csv_path, csv).map_err(|e| Error::Io {
        path: csv_path.display().to_string(),
        source: e,
    })?;

    let mut manifest = io::Manifest::new(
        "simulate",
        json!({
            "preset": bundle.name,
            "scenario": scenario,
            "grid": bundle.grid,
            "spec": spec,
            "methods": methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
            "threads": threads,
        }),
    );
    manifest.seed = Some(scenario.seed);
    manifest.generator = Some(GENERATOR_ID);
    manifest.outputs = vec![
        report_path.display().to_string(),
        csv_path.display().to_string(),
    ];
    io::write_manifest(&manifest, &args.out_dir)?;

    for m in &report.methods {
        println!(
            "{}: mean error {} (sd {})",
            m.method, m.mean_error, m.sd_error
        );
    }
    Ok(())
}

fn run_analyze(task: AnalyzeTask, threads: Option<usize>) -> Result<(), Error> {
    match task {
        AnalyzeTask::Scree {
            input,
            k,
            impute_zero,
            out_dir,
        } => {
            let m = load_matrix(&input, impute_zero)?;
            let values = analysis::scree_values(m.to_dense()?, k)?;
            ensure_dir(&out_dir)?;
            let path = out_dir.join("scree.csv");
            io::write_column("singular_value", &values, &path)?;
            let mut manifest = io::Manifest::new(
                "analyze-scree",
                json!({"k": k, "impute_zero": impute_zero, "threads": threads}),
            );
            manifest.inputs = vec![input.display().to_string()];
            manifest.outputs = vec![path.display().to_string()];
            io::write_manifest(&manifest, &out_dir)?;
            Ok(())
        }
        AnalyzeTask::Scores {
            basis,
            theta,
            rank,
            side,
            axis_label,
            top,
            out_dir,
        } => {
            let basis_matrix = match (&basis, &theta) {
                (Some(path), None) => load_matrix(path, false)?.to_dense()?.clone(),
                (None, Some(path)) => {
                    let rank = rank.ok_or_else(|| {
                        Error::InvalidConfig("--theta requires --rank".into())
                    })?;
                    let m = load_matrix(path, false)?;
                    let svd = truncated_svd(m.to_dense()?, rank)?;
                    match side.as_str() {
                        "u" => svd.u().clone(),
                        "v" => svd.v().clone(),
                        other => {
                            return Err(Error::InvalidConfig(format!(
                                "unknown side '{other}'; use u or v"
                            )))
                        }
                    }
                }
                _ => {
                    return Err(Error::InvalidConfig(
                        "pass exactly one of --basis or --theta".into(),
                    ))
                }
            };
            let scores = analysis::contribution_scores(&basis_matrix, &axis_label)?;
            ensure_dir(&out_dir)?;
            let path = out_dir.join("scores.csv");
            io::write_dense(&scores.scores, &path)?;
            let mut outputs = vec![path.display().to_string()];
            if let Some(n) = top {
                let top_path = out_dir.join("top_scores.csv");
                let mut body = format!("factor,{},score\n", scores.axis);
                for l in 0..scores.scores.ncols() {
                    for (idx, score) in scores.top_rows(l, n)? {
                        body.push_str(&format!("{},{},{}\n", l + 1, idx + 1, score));
                    }
                }
                std::fs::write(&top_path, body).map_err(|e| Error::Io {
                    path: top_path.display().to_string(),
                    source: e,
                })?;
                outputs.push(top_path.display().to_string());
            }
            let mut manifest = io::Manifest::new(
                "analyze-scores",
                json!({
                    "axis_label": scores.axis,
                    "side": side,
                    "rank": rank,
                    "top": top,
                    "threads": threads,
                }),
            );
            manifest.inputs = basis
                .iter()
                .chain(theta.iter())
                .map(|p| p.display().to_string())
                .collect();
            manifest.outputs = outputs;
            io::write_manifest(&manifest, &out_dir)?;
            Ok(())
        }
        AnalyzeTask::Varimax {
            input,
            tol,
            max_iter,
            out_dir,
        } => {
            let m = load_matrix(&input, false)?;
            let result = analysis::varimax(m.to_dense()?, tol, max_iter)?;
            ensure_dir(&out_dir)?;
            let rotated_path = out_dir.join("rotated.csv");
            io::write_dense(&result.rotated, &rotated_path)?;
            let rotation_path = out_dir.join("rotation.csv");
            io::write_dense(&result.rotation, &rotation_path)?;
            let mut manifest = io::Manifest::new(
                "analyze-varimax",
                json!({
                    "tol": tol,
                    "max_iter": max_iter,
                    "converged": result.converged,
                    "iterations": result.iterations,
                    "criterion": result.criterion,
                    "threads": threads,
                }),
            );
            manifest.inputs = vec![input.display().to_string()];
            manifest.outputs = vec![
                rotated_path.display().to_string(),
                rotation_path.display().to_string(),
            ];
            io::write_manifest(&manifest, &out_dir)?;
            println!(
                "varimax: converged {} after {} sweeps, criterion {}",
                result.converged, result.iterations, result.criterion
            );
            Ok(())
        }
        AnalyzeTask::Projection {
            qa,
            qb,
            indices,
            sample,
            seed,
            out_dir,
        } => {
            let qa_m = load_matrix(&qa, false)?.to_dense()?.clone();
            let qb_m = load_matrix(&qb, false)?.to_dense()?.clone();
            let subset: Vec<usize> = match (&indices, sample) {
                (Some(list), _) => list
                    .split(',')
                    .map(|tok| {
                        tok.trim().parse::<usize>().map_err(|_| {
                            Error::InvalidConfig(format!("bad index '{tok}' in --indices"))
                        })
                    })
                    .collect::<Result<_, _>>()?,
                (None, Some(n)) => {
                    use rand::seq::SliceRandom;
                    let mut all: Vec<usize> = (0..qa_m.nrows()).collect();
                    let mut rng = learner::rng::child_rng(
                        seed,
                        0,
                        learner::rng::StreamRole::Subsample,
                    );
                    all.shuffle(&mut rng);
                    let mut chosen: Vec<usize> = all.into_iter().take(n).collect();
                    chosen.sort_unstable();
                    chosen
                }
                (None, None) => (0..qa_m.nrows()).collect(),
            };
            let gram = analysis::projection_gram(&qa_m, &qb_m, &subset)?;
            ensure_dir(&out_dir)?;
            let a_path = out_dir.join("projection_a.csv");
            let b_path = out_dir.join("projection_b.csv");
            let d_path = out_dir.join("projection_diff.csv");
            io::write_dense(&gram.proj_a, &a_path)?;
            io::write_dense(&gram.proj_b, &b_path)?;
            io::write_dense(&gram.difference(), &d_path)?;
            let mut manifest = io::Manifest::new(
                "analyze-projection",
                json!({
                    "indices": gram.indices,
                    "sample": sample,
                    "threads": threads,
                }),
            );
            manifest.seed = sample.map(|_| seed);
            manifest.generator = sample.map(|_| GENERATOR_ID);
            manifest.inputs = vec![qa.display().to_string(), qb.display().to_string()];
            manifest.outputs = vec![
                a_path.display().to_string(),
                b_path.display().to_string(),
                d_path.display().to_string(),
            ];
            io::write_manifest(&manifest, &out_dir)?;
            Ok(())
        }
    }
}
