//! End-to-end procedures.
//!
//! * [`path_aggregate`]: Lasso path, its support family, then aggregation
//!   with a user-supplied variance estimate.
//! * [`sqrt_lasso_pipeline`]: square-root Lasso on a geometric grid below the
//!   universal parameter, variance estimated at the top of the grid, then
//!   aggregation. Nothing has to be tuned by hand.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aggregation::{precompute, run_method, AggregationResult, Method, QaggOptions};
use crate::error::{invalid, Error, Result};
use crate::model::{DesignMatrix, ProjectionCache, ResponseVector, Support};
use crate::path::{
    compute_path, path_support_family, FamilySource, LassoPath, PathOptions, SupportFamily,
};
use crate::solvers::{sqrt_lasso, sqrt_lasso_universal_lambda, SqrtLassoOptions};

/// Wall-clock seconds per stage. Kept out of serialized results so that
/// reports stay reproducible.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StageTiming {
    pub family_seconds: f64,
    pub precompute_seconds: f64,
    pub aggregate_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathMeta {
    pub knots: Vec<f64>,
    pub supports: Vec<Support>,
    pub end_lambda: f64,
    pub truncated: bool,
    pub degenerate: bool,
}

impl PathMeta {
    pub fn of(path: &LassoPath) -> Self {
        Self {
            knots: path.knots.clone(),
            supports: path.supports.clone(),
            end_lambda: path.end_lambda,
            truncated: path.truncated,
            degenerate: path.degenerate,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GridPointStatus {
    Converged,
    NotConverged,
    /// The residual collapsed; no support is recorded.
    DegenerateVariance,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SqrtGridEntry {
    pub lambda: f64,
    pub support: Option<Support>,
    pub sigma_hat_sq: Option<f64>,
    pub status: GridPointStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridMeta {
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub mode: GridMode,
    /// Whether the fit at `λ_max` that supplies the variance converged.
    pub variance_fit_converged: bool,
    /// Fitting order, decreasing in λ.
    pub entries: Vec<SqrtGridEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PipelineMeta {
    Path(PathMeta),
    Grid(GridMeta),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PipelineReport {
    pub family: SupportFamily,
    pub sigma_hat_sq: f64,
    pub method: Method,
    pub result: AggregationResult,
    pub meta: PipelineMeta,
    #[serde(skip)]
    pub timing: StageTiming,
}

impl PipelineReport {
    /// The aggregator and every solve feeding the family converged.
    pub fn converged(&self) -> bool {
        let fits_ok = match &self.meta {
            PipelineMeta::Path(_) => true,
            PipelineMeta::Grid(g) => {
                g.variance_fit_converged
                    && g.entries
                        .iter()
                        .all(|e| e.status != GridPointStatus::NotConverged)
            }
        };
        fits_ok && self.result.converged()
    }
}

fn aggregate_family(
    x: &DesignMatrix,
    y: &ResponseVector,
    family: &SupportFamily,
    sigma_hat_sq: f64,
    method: Method,
    opts: QaggOptions,
    cache: &ProjectionCache,
    timing: &mut StageTiming,
) -> Result<AggregationResult> {
    let t = Instant::now();
    let pre = precompute(x, y, family, Some(cache))?;
    timing.precompute_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let result = run_method(&pre, sigma_hat_sq, method, opts)?;
    timing.aggregate_seconds = t.elapsed().as_secs_f64();
    Ok(result)
}

/// Aggregates the supports visited by the Lasso path.
///
/// A truncated path contributes the supports it reached.
pub fn path_aggregate(
    x: &DesignMatrix,
    y: &ResponseVector,
    sigma_hat_sq: f64,
    method: Method,
    path_opts: PathOptions,
    agg_opts: QaggOptions,
) -> Result<PipelineReport> {
    let t = Instant::now();
    let path = compute_path(x, y, path_opts)?;
    let elapsed = t.elapsed().as_secs_f64();
    let mut report = aggregate_path(
        x,
        y,
        &path,
        sigma_hat_sq,
        method,
        agg_opts,
        &ProjectionCache::new(),
    )?;
    report.timing.family_seconds += elapsed;
    Ok(report)
}

/// Aggregation step of [`path_aggregate`] for an already computed path.
pub fn aggregate_path(
    x: &DesignMatrix,
    y: &ResponseVector,
    path: &LassoPath,
    sigma_hat_sq: f64,
    method: Method,
    agg_opts: QaggOptions,
    cache: &ProjectionCache,
) -> Result<PipelineReport> {
    if !sigma_hat_sq.is_finite() {
        return invalid("variance estimate must be finite");
    }
    let mut timing = StageTiming::default();
    let t = Instant::now();
    let family = path_support_family(path);
    timing.family_seconds = t.elapsed().as_secs_f64();
    let result = aggregate_family(
        x,
        y,
        &family,
        sigma_hat_sq,
        method,
        agg_opts,
        cache,
        &mut timing,
    )?;
    Ok(PipelineReport {
        family,
        sigma_hat_sq: result.sigma_hat_sq_used(),
        method,
        result,
        meta: PipelineMeta::Path(PathMeta::of(path)),
        timing,
    })
}

/// How grid values are spread between `λ_min` and `λ_max`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GridMode {
    /// `λ_j = λ_min (λ_max/λ_min)^{(j−1)/(M−1)}`, from `λ_min` to `λ_max`.
    #[default]
    Spanning,
    /// `λ_j = λ_min (λ_max/λ_min)^{(j−1)/M − 1}`, which lies below `λ_min`.
    PaperLiteral,
}

/// The `M` grid values, increasing.
pub fn geometric_grid(
    lambda_min: f64,
    lambda_max: f64,
    m: usize,
    mode: GridMode,
) -> Result<Vec<f64>> {
    if !(lambda_min > 0.0 && lambda_min < lambda_max && lambda_max.is_finite()) {
        return invalid(format!(
            "need 0 < lambda_min < lambda_max, got {lambda_min} and {lambda_max}"
        ));
    }
    if m < 2 {
        return invalid(format!("grid size must be at least 2, got {m}"));
    }
    let ratio = lambda_max / lambda_min;
    Ok((1..=m)
        .map(|j| {
            let e = match mode {
                GridMode::Spanning => (j - 1) as f64 / (m - 1) as f64,
                GridMode::PaperLiteral => (j - 1) as f64 / m as f64 - 1.0,
            };
            match (mode, j) {
                (GridMode::Spanning, 1) => lambda_min,
                (GridMode::Spanning, j) if j == m => lambda_max,
                _ => lambda_min * ratio.powf(e),
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqrtPipelineOptions {
    /// Defaults to `λ_max / 100`.
    pub lambda_min: Option<f64>,
    pub grid_size: usize,
    pub grid_mode: GridMode,
    pub method: Method,
    pub solver: SqrtLassoOptions,
    pub aggregation: QaggOptions,
}

impl Default for SqrtPipelineOptions {
    fn default() -> Self {
        Self {
            lambda_min: None,
            grid_size: 20,
            grid_mode: GridMode::Spanning,
            method: Method::Q,
            solver: SqrtLassoOptions::default(),
            aggregation: QaggOptions::default(),
        }
    }
}

/// The square-root Lasso pipeline.
///
/// Grid fits run from the largest λ down with warm starts. The variance
/// estimate is the one at `λ_max` (the universal parameter); if that fit
/// degenerates the pipeline fails. Degenerate or unconverged fits further
/// down the grid are recorded and left out of the family.
pub fn sqrt_lasso_pipeline(
    x: &DesignMatrix,
    y: &ResponseVector,
    opts: SqrtPipelineOptions,
) -> Result<PipelineReport> {
    y.check_against(x)?;
    let lambda_max = sqrt_lasso_universal_lambda(x.n(), x.p());
    let lambda_min = opts.lambda_min.unwrap_or(lambda_max / 100.0);
    let mut grid = geometric_grid(lambda_min, lambda_max, opts.grid_size, opts.grid_mode)?;
    grid.reverse();

    let mut timing = StageTiming::default();
    let t = Instant::now();
    // The variance estimate always comes from λ_max, which the literal grid
    // does not contain.
    let top = sqrt_lasso(x, y, lambda_max, opts.solver, None)?;
    let sigma_hat_sq = top.sigma_hat_sq;
    let mut warm = top.beta.clone();
    let mut entries = Vec::with_capacity(grid.len());
    for &lam in &grid {
        let fit = if lam == lambda_max {
            Ok(top.clone())
        } else {
            sqrt_lasso(x, y, lam, opts.solver, Some(&warm))
        };
        match fit {
            Ok(fit) => {
                entries.push(SqrtGridEntry {
                    lambda: lam,
                    support: Some(Support::of_beta(&fit.beta)),
                    sigma_hat_sq: Some(fit.sigma_hat_sq),
                    status: if fit.converged {
                        GridPointStatus::Converged
                    } else {
                        GridPointStatus::NotConverged
                    },
                });
                warm = fit.beta;
            }
            Err(Error::DegenerateVariance(msg)) => {
                log::warn!("grid point {lam} skipped: {msg}");
                entries.push(SqrtGridEntry {
                    lambda: lam,
                    support: None,
                    sigma_hat_sq: None,
                    status: GridPointStatus::DegenerateVariance,
                });
            }
            Err(e) => return Err(e),
        }
    }
    let family = SupportFamily::new(
        FamilySource::Grid,
        std::iter::once(Support::empty()).chain(
            entries
                .iter()
                .filter(|e| e.status == GridPointStatus::Converged)
                .filter_map(|e| e.support.clone()),
        ),
    );
    timing.family_seconds = t.elapsed().as_secs_f64();
    let result = aggregate_family(
        x,
        y,
        &family,
        sigma_hat_sq,
        opts.method,
        opts.aggregation,
        &ProjectionCache::new(),
        &mut timing,
    )?;
    Ok(PipelineReport {
        family,
        sigma_hat_sq,
        method: opts.method,
        result,
        meta: PipelineMeta::Grid(GridMeta {
            lambda_max,
            lambda_min,
            mode: opts.grid_mode,
            variance_fit_converged: top.converged,
            entries,
        }),
        timing,
    })
}

/// One row of the `(λ, loss proxy, support size)` profile of a path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProfilePoint {
    pub lambda: f64,
    /// `‖y − Xβ̂_λ‖² / n`.
    pub loss_proxy: f64,
    pub support_size: usize,
}

/// The path evaluated at its knots, segment midpoints and lower end.
pub fn path_profile(x: &DesignMatrix, y: &ResponseVector, path: &LassoPath) -> Vec<ProfilePoint> {
    path.evaluation_points()
        .into_iter()
        .map(|(lambda, beta)| ProfilePoint {
            lambda,
            loss_proxy: (y.values() - x.mul(&beta)).norm_squared() / x.n() as f64,
            support_size: Support::of_beta(&beta).size(),
        })
        .collect()
}
