//! The `agg` command line: argument parsing, dispatch and reporting.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::aggregation::{aggregate_estimators, AggregationResult, Method, QaggOptions};
use crate::error::{invalid, Error, Result};
use crate::io::{
    canonical_json, load_matrix_csv, load_vector_csv, read_csv_rows, write_report, DesignName,
    Environment, ReportJson, RunConfig,
};
use crate::model::{DesignMatrix, ProjectionCache, ResponseVector};
use crate::path::{compute_path, PathOptions, SupportFamily};
use crate::pipelines::{
    aggregate_path, path_aggregate, path_profile, sqrt_lasso_pipeline, GridMode, PathMeta,
    PipelineMeta, PipelineReport, ProfilePoint, SqrtPipelineOptions, StageTiming,
};
use crate::simulation::{
    expectation_bound, monte_carlo, CoverageReport, DesignKind, InstanceSpec, NoiseKind, SigmaMode,
    TrialConfig,
};
use crate::solvers::{CdOptions, SqrtLassoOptions};
use crate::weights::{total_mass, verify_weight_bounds, WeightTable};

#[derive(Debug, Parser)]
#[command(
    name = "agg",
    version,
    about = "Aggregate the supports of Lasso-type estimators"
)]
pub struct Cli {
    /// TOML or JSON file with default settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Path,
    Aggregate,
    SqrtPipeline,
    Simulate,
    Weights,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the Lasso path; aggregate its supports when --sigma is given.
    Path(PathArgs),
    /// Aggregate the Lasso path supports, or the supports of given estimators.
    Aggregate(AggregateArgs),
    /// Square-root Lasso grid with estimated variance, then aggregation.
    SqrtPipeline(SqrtArgs),
    /// Monte Carlo check of the oracle bounds on synthetic data.
    Simulate(SimulateArgs),
    /// Prior weights log(1/π) by support size.
    Weights(WeightsArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Design matrix CSV, one observation per row.
    #[arg(long = "x", value_name = "X.csv")]
    pub x_csv: Option<PathBuf>,
    /// Response CSV.
    #[arg(long = "y", value_name = "y.csv")]
    pub y_csv: Option<PathBuf>,
    /// Skip the first row of each CSV.
    #[arg(long)]
    pub header: bool,
}

#[derive(Debug, Args)]
pub struct AggArgs {
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Frank–Wolfe gap tolerance of the Q-aggregation solver.
    #[arg(long)]
    pub tol_gap: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PathArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub agg: AggArgs,
    /// Noise level σ (the variance estimate is σ²).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Cap on the number of path knots (default 10·min(n, p) + 10).
    #[arg(long)]
    pub max_knots: Option<usize>,
    /// Write (lambda, loss_proxy, support_size) rows here.
    #[arg(long)]
    pub profile_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub agg: AggArgs,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Coefficient vectors, one estimator per row; replaces the Lasso path.
    #[arg(long = "betas", value_name = "B.csv")]
    pub betas_csv: Option<PathBuf>,
    /// Cap on the number of path knots (default 10·min(n, p) + 10).
    #[arg(long)]
    pub max_knots: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SqrtArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub agg: AggArgs,
    /// Smallest grid value; defaults to λ_max / 100.
    #[arg(long)]
    pub lambda_min: Option<f64>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[arg(long, value_enum)]
    pub grid_mode: Option<GridMode>,
    /// Write (lambda, sigma_hat_sq, support_size) rows here.
    #[arg(long)]
    pub profile_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub agg: AggArgs,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub s: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Confidence level x of the bounds (probability 1 − 2e^{−x}).
    #[arg(long = "x")]
    pub x_level: Option<f64>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub design: Option<DesignName>,
    /// Column correlation of the equicorrelated design.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, value_enum)]
    pub noise: Option<NoiseKind>,
    #[arg(long, value_enum)]
    pub sigma_mode: Option<SigmaMode>,
    /// Cap on the number of path knots (default 10·min(n, p) + 10).
    #[arg(long)]
    pub max_knots: Option<usize>,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[arg(long)]
    pub p: Option<usize>,
}

fn flag(b: bool) -> Option<bool> {
    b.then_some(true)
}

impl Cli {
    pub fn kind(&self) -> CommandKind {
        match self.command {
            Command::Path(_) => CommandKind::Path,
            Command::Aggregate(_) => CommandKind::Aggregate,
            Command::SqrtPipeline(_) => CommandKind::SqrtPipeline,
            Command::Simulate(_) => CommandKind::Simulate,
            Command::Weights(_) => CommandKind::Weights,
        }
    }

    /// The settings given on the command line.
    pub fn to_config(&self) -> RunConfig {
        let base = RunConfig {
            threads: self.threads,
            out: self.out.clone(),
            ..Default::default()
        };
        let data = |d: &DataArgs| RunConfig {
            x_csv: d.x_csv.clone(),
            y_csv: d.y_csv.clone(),
            header: flag(d.header),
            ..Default::default()
        };
        let agg = |a: &AggArgs| RunConfig {
            method: a.method,
            tol_gap: a.tol_gap,
            ..Default::default()
        };
        let specific = match &self.command {
            Command::Path(a) => RunConfig {
                sigma: a.sigma,
                max_knots: a.max_knots,
                profile_csv: a.profile_csv.clone(),
                ..data(&a.data).over(agg(&a.agg))
            },
            Command::Aggregate(a) => RunConfig {
                sigma: a.sigma,
                betas_csv: a.betas_csv.clone(),
                max_knots: a.max_knots,
                ..data(&a.data).over(agg(&a.agg))
            },
            Command::SqrtPipeline(a) => RunConfig {
                lambda_min: a.lambda_min,
                grid_size: a.grid_size,
                grid_mode: a.grid_mode,
                profile_csv: a.profile_csv.clone(),
                ..data(&a.data).over(agg(&a.agg))
            },
            Command::Simulate(a) => RunConfig {
                n: a.n,
                p: a.p,
                s: a.s,
                sigma: a.sigma,
                x_level: a.x_level,
                reps: a.reps,
                seed: a.seed,
                design: a.design,
                rho: a.rho,
                noise: a.noise,
                sigma_mode: a.sigma_mode,
                max_knots: a.max_knots,
                ..agg(&a.agg)
            },
            Command::Weights(a) => RunConfig {
                p: a.p,
                ..Default::default()
            },
        };
        specific.over(base)
    }
}

/// What a command produced, before it is wrapped in a report.
pub struct Outcome {
    pub results: Value,
    pub timing: Option<StageTiming>,
    pub converged: bool,
}

#[derive(Serialize)]
struct PathResults {
    lambda_zero: f64,
    path: PathMeta,
    profile: Vec<ProfilePoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    aggregation: Option<PipelineReport>,
}

#[derive(Serialize)]
struct EstimatorResults {
    family: SupportFamily,
    sigma_hat_sq: f64,
    method: Method,
    result: AggregationResult,
}

#[derive(Serialize)]
struct SimulationResults {
    config: TrialConfig,
    coverage: CoverageReport,
    /// Only for orthonormal designs, where κ = φ_max = 1.
    #[serde(skip_serializing_if = "Option::is_none")]
    expectation_bound: Option<f64>,
}

#[derive(Serialize)]
struct WeightsResults {
    table: WeightTable,
    bounds_hold: bool,
    total_mass: f64,
}

fn load_data(cfg: &RunConfig) -> Result<(DesignMatrix, ResponseVector)> {
    let (Some(xp), Some(yp)) = (&cfg.x_csv, &cfg.y_csv) else {
        return invalid("both --x and --y are required");
    };
    let header = cfg.header.unwrap_or(false);
    let x = load_matrix_csv(xp, header)?;
    let y = load_vector_csv(yp, header)?;
    y.check_against(&x)?;
    Ok((x, y))
}

fn qagg_options(cfg: &RunConfig) -> QaggOptions {
    QaggOptions {
        tol_gap: cfg.tol_gap,
        ..Default::default()
    }
}

fn path_options(cfg: &RunConfig) -> PathOptions {
    PathOptions {
        max_knots: cfg.max_knots,
        ..Default::default()
    }
}

fn variance(cfg: &RunConfig, command: &str) -> Result<f64> {
    match cfg.sigma {
        Some(s) => Ok(s * s),
        None => invalid(format!("{command} needs --sigma")),
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn write_profile(path: &Path, rows: impl Iterator<Item = (f64, f64, usize)>) -> Result<()> {
    let err = |e: csv::Error| Error::csv_at(path, e);
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["lambda", "loss_proxy", "support_size"])
        .map_err(err)?;
    for (l, v, k) in rows {
        w.write_record([format!("{l:?}"), format!("{v:?}"), k.to_string()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io_at(path, e))?;
    Ok(())
}

fn run_path(cfg: &RunConfig) -> Result<Outcome> {
    let (x, y) = load_data(cfg)?;
    let start = Instant::now();
    let path = compute_path(&x, &y, path_options(cfg))?;
    let profile = path_profile(&x, &y, &path);
    if let Some(file) = &cfg.profile_csv {
        write_profile(
            file,
            profile
                .iter()
                .map(|p| (p.lambda, p.loss_proxy, p.support_size)),
        )?;
    }
    let aggregation = match cfg.sigma {
        Some(s) => {
            let method = cfg.method.unwrap_or(Method::Q);
            Some(aggregate_path(
                &x,
                &y,
                &path,
                s * s,
                method,
                qagg_options(cfg),
                &ProjectionCache::new(),
            )?)
        }
        None => None,
    };
    let mut timing = aggregation.as_ref().map(|a| a.timing);
    if let Some(t) = timing.as_mut() {
        t.family_seconds =
            start.elapsed().as_secs_f64() - t.precompute_seconds - t.aggregate_seconds;
    }
    let converged = aggregation.as_ref().is_none_or(|a| a.converged());
    let results = PathResults {
        lambda_zero: path.lambda_zero(),
        path: PathMeta::of(&path),
        profile,
        aggregation,
    };
    Ok(Outcome {
        results: to_value(&results)?,
        timing,
        converged,
    })
}

fn run_aggregate(cfg: &RunConfig) -> Result<Outcome> {
    let (x, y) = load_data(cfg)?;
    let s2 = variance(cfg, "aggregate")?;
    let method = cfg.method.unwrap_or(Method::Q);
    match &cfg.betas_csv {
        Some(file) => {
            let betas = read_csv_rows(file, cfg.header.unwrap_or(false))?;
            let (family, result) =
                aggregate_estimators(&x, &y, &betas, s2, method, qagg_options(cfg))?;
            let converged = result.converged();
            let results = EstimatorResults {
                family,
                sigma_hat_sq: result.sigma_hat_sq_used(),
                method,
                result,
            };
            Ok(Outcome {
                results: to_value(&results)?,
                timing: None,
                converged,
            })
        }
        None => {
            let report = path_aggregate(&x, &y, s2, method, path_options(cfg), qagg_options(cfg))?;
            Ok(Outcome {
                results: to_value(&report)?,
                timing: Some(report.timing),
                converged: report.converged(),
            })
        }
    }
}

fn run_sqrt(cfg: &RunConfig) -> Result<Outcome> {
    let (x, y) = load_data(cfg)?;
    let defaults = SqrtPipelineOptions::default();
    let opts = SqrtPipelineOptions {
        lambda_min: cfg.lambda_min,
        grid_size: cfg.grid_size.unwrap_or(defaults.grid_size),
        grid_mode: cfg.grid_mode.unwrap_or_default(),
        method: cfg.method.unwrap_or(Method::Q),
        solver: SqrtLassoOptions {
            inner: CdOptions {
                tol: cfg.cd_tol.unwrap_or(defaults.solver.inner.tol),
                ..defaults.solver.inner
            },
            ..defaults.solver
        },
        aggregation: qagg_options(cfg),
    };
    let report = sqrt_lasso_pipeline(&x, &y, opts)?;
    if let (Some(file), PipelineMeta::Grid(g)) = (&cfg.profile_csv, &report.meta) {
        write_profile(
            file,
            g.entries
                .iter()
                .filter_map(|e| Some((e.lambda, e.sigma_hat_sq?, e.support.as_ref()?.size()))),
        )?;
    }
    Ok(Outcome {
        results: to_value(&report)?,
        timing: Some(report.timing),
        converged: report.converged(),
    })
}

/// The simulation settings a run configuration describes.
pub fn trial_config(cfg: &RunConfig) -> Result<TrialConfig> {
    let std = TrialConfig::standard();
    let design = match cfg.design.unwrap_or(DesignName::IidGaussian) {
        DesignName::IidGaussian => DesignKind::IidGaussian,
        DesignName::Orthonormal => DesignKind::Orthonormal,
        DesignName::Equicorrelated => match cfg.rho {
            Some(rho) => DesignKind::Equicorrelated { rho },
            None => return invalid("the equicorrelated design needs --rho"),
        },
    };
    Ok(TrialConfig {
        instance: InstanceSpec {
            n: cfg.n.unwrap_or(std.instance.n),
            p: cfg.p.unwrap_or(std.instance.p),
            s: cfg.s.unwrap_or(std.instance.s),
            sigma: cfg.sigma.unwrap_or(std.instance.sigma),
            design,
            noise: cfg.noise.unwrap_or_default(),
        },
        x_level: cfg.x_level.unwrap_or(std.x_level),
        method: cfg.method.unwrap_or(Method::Q),
        sigma_mode: cfg.sigma_mode.unwrap_or_default(),
        seed: cfg.seed.unwrap_or(0),
        path: path_options(cfg),
        aggregation: qagg_options(cfg),
        sqrt_pipeline: SqrtPipelineOptions {
            lambda_min: cfg.lambda_min,
            ..Default::default()
        },
    })
}

fn run_simulate(cfg: &RunConfig, threads: usize) -> Result<Outcome> {
    let config = trial_config(cfg)?;
    let coverage = monte_carlo(&config, cfg.reps.unwrap_or(200), threads)?;
    let i = config.instance;
    let expectation_bound = matches!(i.design, DesignKind::Orthonormal)
        .then(|| expectation_bound(i.sigma * i.sigma, i.s, i.n, i.p, 1.0, 1.0));
    let converged = coverage.all_converged;
    let results = SimulationResults {
        config,
        coverage,
        expectation_bound,
    };
    Ok(Outcome {
        results: to_value(&results)?,
        timing: None,
        converged,
    })
}

fn run_weights(cfg: &RunConfig) -> Result<Outcome> {
    let Some(p) = cfg.p else {
        return invalid("weights needs --p");
    };
    let results = WeightsResults {
        table: WeightTable::new(p)?,
        bounds_hold: verify_weight_bounds(p),
        total_mass: total_mass(p),
    };
    Ok(Outcome {
        results: to_value(&results)?,
        timing: None,
        converged: true,
    })
}

/// Runs one command with fully layered settings on a pool of `threads`.
pub fn execute(kind: CommandKind, cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let threads = cfg.threads.unwrap_or(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start thread pool: {e}")))?;
    pool.install(|| match kind {
        CommandKind::Path => run_path(cfg),
        CommandKind::Aggregate => run_aggregate(cfg),
        CommandKind::SqrtPipeline => run_sqrt(cfg),
        CommandKind::Simulate => run_simulate(cfg, threads),
        CommandKind::Weights => run_weights(cfg),
    })
}

fn command_name(kind: CommandKind) -> String {
    serde_json::to_value(kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

/// Layers flags over the config file, runs, and writes the report.
/// Returns the process exit code.
pub fn run(cli: &Cli) -> Result<i32> {
    let file = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let cfg = cli.to_config().over(file);
    let kind = cli.kind();
    let start = Instant::now();
    let outcome = execute(kind, &cfg)?;
    let report = ReportJson {
        schema_version: crate::io::SCHEMA_VERSION,
        command: command_name(kind),
        config: cfg.clone(),
        results: outcome.results,
        environment: Environment {
            version: env!("CARGO_PKG_VERSION").to_string(),
            threads: cfg.threads.unwrap_or(1),
            wall_seconds: start.elapsed().as_secs_f64(),
            timing: outcome.timing,
        },
    };
    write_report(&report, cfg.out.as_deref())?;
    if outcome.converged {
        Ok(0)
    } else {
        let err =
            Error::NotConverged("a solver stopped at its iteration cap; see the report".into());
        eprintln!("{}", error_json(&err));
        Ok(err.exit_code())
    }
}

/// The machine-readable form of an error, as printed on stderr.
pub fn error_json(err: &Error) -> String {
    let mut body = json!({ "kind": err.kind(), "message": err.to_string() });
    if let Error::Parse { line, column, .. } = err {
        body["line"] = json!(line);
        body["column"] = json!(column);
    }
    canonical_json(&json!({ "error": body, "exit_code": err.exit_code() })).unwrap_or_default()
}

/// Entry point for the binary: parse, run, report errors as JSON.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(std::io::stdout(), "{e}");
                return 0;
            }
            let body =
                json!({ "error": { "kind": "usage", "message": e.to_string() }, "exit_code": 2 });
            eprintln!("{}", canonical_json(&body).unwrap_or_default());
            return 2;
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            e.exit_code()
        }
    }
}
