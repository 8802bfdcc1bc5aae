//! Synthetic sparse regression and Monte Carlo checks of the oracle bounds.
//!
//! Every replication draws its design, coefficients and noise from a
//! ChaCha8 stream keyed by its own seed, so a batch of replications gives the
//! same numbers whatever the thread count.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{precompute, q_aggregate, Method, QAggResult, QaggOptions};
use crate::error::{invalid, Result};
use crate::model::{
    operator_norm_phi_max, project, DesignMatrix, ProjectionCache, ResponseVector, Support,
};
use crate::path::{compute_path, FamilySource, LassoPath, PathOptions, SupportFamily};
use crate::pipelines::{aggregate_path, sqrt_lasso_pipeline, SqrtPipelineOptions};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignKind {
    /// Independent standard Gaussian entries.
    IidGaussian,
    /// Gaussian rows with pairwise column correlation `rho`.
    Equicorrelated { rho: f64 },
    /// `X = √n·Q` with `Q` having orthonormal columns; needs `p ≤ n`.
    Orthonormal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    /// `±σ` with equal probability.
    Rademacher,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub sigma: f64,
    pub design: DesignKind,
    #[serde(default)]
    pub noise: NoiseKind,
}

#[derive(Clone, Debug)]
pub struct SimInstance {
    pub x: DesignMatrix,
    pub beta_star: Vec<f64>,
    pub mu: DVector<f64>,
    pub y: ResponseVector,
    pub sigma: f64,
    pub seed: u64,
    pub design: DesignKind,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn normalize_columns(m: &mut DMatrix<f64>) {
    let n = m.nrows() as f64;
    for mut c in m.column_iter_mut() {
        let norm = c.norm();
        if norm > 0.0 {
            c *= n.sqrt() / norm;
        }
    }
}

/// Draws one instance. Columns are scaled so that `diag(XᵀX/n) = 1`.
pub fn generate_instance(spec: &InstanceSpec, seed: u64) -> Result<SimInstance> {
    let InstanceSpec {
        n,
        p,
        s,
        sigma,
        design,
        noise,
    } = *spec;
    if n == 0 || p == 0 {
        return invalid("n and p must be positive");
    }
    if s > p {
        return invalid(format!("sparsity {s} exceeds p = {p}"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return invalid(format!("noise level must be nonnegative, got {sigma}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = match design {
        DesignKind::IidGaussian => gaussian_matrix(&mut rng, n, p),
        DesignKind::Equicorrelated { rho } => {
            if !(0.0..1.0).contains(&rho) {
                return invalid(format!("correlation must lie in [0, 1), got {rho}"));
            }
            let shared: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let z = gaussian_matrix(&mut rng, n, p);
            DMatrix::from_fn(n, p, |i, j| {
                rho.sqrt() * shared[i] + (1.0 - rho).sqrt() * z[(i, j)]
            })
        }
        DesignKind::Orthonormal => {
            if p > n {
                return invalid(format!(
                    "orthonormal design needs p ≤ n, got p = {p}, n = {n}"
                ));
            }
            gaussian_matrix(&mut rng, n, p).qr().q()
        }
    };
    normalize_columns(&mut x);

    let mut beta_star = vec![0.0; p];
    for j in sample(&mut rng, p, s) {
        beta_star[j] = if rng.random::<bool>() { 1.0 } else { -1.0 };
    }
    let x = DesignMatrix::new(x)?;
    let mu = x.mul(&beta_star);
    let xi = DVector::from_fn(n, |_, _| match noise {
        NoiseKind::Gaussian => sigma * rng.sample::<f64, _>(StandardNormal),
        NoiseKind::Rademacher => {
            if rng.random::<bool>() {
                sigma
            } else {
                -sigma
            }
        }
    });
    let y = ResponseVector::from_dvector(&mu + xi)?;
    Ok(SimInstance {
        x,
        beta_star,
        mu,
        y,
        sigma,
        seed,
        design,
    })
}

/// Constants of an oracle bound: `lead·bias + (σ̂²/n)(c0 + c1·|T|·log(ep/(|T|∨1))) + cx·σ²x/n`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct BoundConstants {
    lead: f64,
    c0: f64,
    c1: f64,
    cx: f64,
}

const SOI: BoundConstants = BoundConstants {
    lead: 1.0,
    c0: 24.0,
    c1: 96.0,
    cx: 22.0,
};
const OI: BoundConstants = BoundConstants {
    lead: 3.0,
    c0: 26.0,
    c1: 104.0,
    cx: 28.0,
};

fn complexity(p: usize, k: usize) -> f64 {
    if k == 0 {
        0.0
    } else {
        k as f64 * (std::f64::consts::E * p as f64 / k as f64).ln()
    }
}

/// An oracle bound, with the per-candidate terms inside the minimum.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundValue {
    pub value: f64,
    pub terms: Vec<f64>,
    pub argmin: usize,
}

fn assemble(
    terms: Vec<f64>,
    c: BoundConstants,
    sigma_sq: f64,
    x_level: f64,
    n: usize,
) -> BoundValue {
    let argmin = (0..terms.len())
        .min_by(|&a, &b| terms[a].total_cmp(&terms[b]))
        .expect("at least one term");
    BoundValue {
        value: terms[argmin] + c.cx * sigma_sq * x_level / n as f64,
        terms,
        argmin,
    }
}

fn support_bound(
    c: BoundConstants,
    family: &SupportFamily,
    mu: &DVector<f64>,
    x: &DesignMatrix,
    sigma_hat_sq: f64,
    sigma_sq: f64,
    x_level: f64,
    cache: Option<&ProjectionCache>,
) -> Result<BoundValue> {
    if !(x_level > 0.0) {
        return invalid("confidence level x must be positive");
    }
    if family.is_empty() {
        return invalid("support family is empty");
    }
    let n = x.n() as f64;
    let terms = family
        .supports()
        .iter()
        .map(|t| {
            let r = match cache {
                Some(cache) => cache.project(x, t, mu)?,
                None => project(x, t, mu)?,
            };
            Ok(c.lead * r.residual.norm_squared() / n
                + sigma_hat_sq / n * (c.c0 + c.c1 * complexity(x.p(), t.size())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(terms, c, sigma_sq, x_level, x.n()))
}

/// Right-hand side of the high-probability bound for the Q-aggregate:
/// `min_T {(1/n)‖Π_Tμ − μ‖² + (σ̂²/n)(24 + 96|T| log(ep/(|T|∨1)))} + 22σ²x/n`.
pub fn soi_rhs_supports(
    family: &SupportFamily,
    mu: &DVector<f64>,
    x: &DesignMatrix,
    sigma_hat_sq: f64,
    sigma_sq: f64,
    x_level: f64,
    cache: Option<&ProjectionCache>,
) -> Result<BoundValue> {
    support_bound(SOI, family, mu, x, sigma_hat_sq, sigma_sq, x_level, cache)
}

/// Right-hand side of the bound for the selected support:
/// `min_T {3(1/n)‖Π_Tμ − μ‖² + (σ̂²/n)(26 + 104|T| log(ep/(|T|∨1)))} + 28σ²x/n`.
pub fn oi_rhs_crit(
    family: &SupportFamily,
    mu: &DVector<f64>,
    x: &DesignMatrix,
    sigma_hat_sq: f64,
    sigma_sq: f64,
    x_level: f64,
    cache: Option<&ProjectionCache>,
) -> Result<BoundValue> {
    support_bound(OI, family, mu, x, sigma_hat_sq, sigma_sq, x_level, cache)
}

/// Right-hand side of the path bound, with the minimum over `λ > 0` taken
/// over the path's evaluation points (knots, midpoints, lower end) and
/// `λ ≥ λ₀` where the Lasso is zero. The terms follow `path.evaluation_points()`
/// with the zero solution appended last.
pub fn soi_path_rhs(
    path: &LassoPath,
    mu: &DVector<f64>,
    x: &DesignMatrix,
    sigma_hat_sq: f64,
    sigma_sq: f64,
    x_level: f64,
) -> Result<BoundValue> {
    if !(x_level > 0.0) {
        return invalid("confidence level x must be positive");
    }
    let n = x.n() as f64;
    let term = |beta: &[f64]| {
        (x.mul(beta) - mu).norm_squared() / n
            + sigma_hat_sq / n
                * (SOI.c0 + SOI.c1 * complexity(x.p(), Support::of_beta(beta).size()))
    };
    let mut terms: Vec<f64> = path
        .evaluation_points()
        .iter()
        .filter(|(lam, _)| *lam > 0.0)
        .map(|(_, b)| term(b))
        .collect();
    terms.push(term(&vec![0.0; x.p()]));
    Ok(assemble(terms, SOI, sigma_sq, x_level, x.n()))
}

/// `(176σ²s log p)/n + 384σ²s/n + 90σ²/n` generalised to
/// `((128 + 48φ_max)σ²s log p)/(κ²n) + 384σ²s/(κ²n) + 90σ²/n`.
pub fn expectation_bound(
    sigma_sq: f64,
    s: usize,
    n: usize,
    p: usize,
    kappa_sq: f64,
    phi_max: f64,
) -> f64 {
    let (s, n) = (s as f64, n as f64);
    (128.0 + 48.0 * phi_max) * sigma_sq * s * (p as f64).ln() / (kappa_sq * n)
        + 384.0 * sigma_sq * s / (kappa_sq * n)
        + 90.0 * sigma_sq / n
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// `σ̂² = σ²`.
    #[default]
    Known,
    /// Variance from the square-root Lasso pipeline.
    SqrtLasso,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub instance: InstanceSpec,
    pub x_level: f64,
    pub method: Method,
    pub sigma_mode: SigmaMode,
    pub seed: u64,
    pub path: PathOptions,
    pub aggregation: QaggOptions,
    pub sqrt_pipeline: SqrtPipelineOptions,
}

impl TrialConfig {
    /// n = 100, p = 200, s = 5, σ = 1, x = 3, i.i.d. Gaussian design.
    pub fn standard() -> Self {
        Self {
            instance: InstanceSpec {
                n: 100,
                p: 200,
                s: 5,
                sigma: 1.0,
                design: DesignKind::IidGaussian,
                noise: NoiseKind::Gaussian,
            },
            x_level: 3.0,
            method: Method::Q,
            sigma_mode: SigmaMode::Known,
            seed: 0,
            path: PathOptions::default(),
            aggregation: QaggOptions::default(),
            sqrt_pipeline: SqrtPipelineOptions::default(),
        }
    }
}

/// One side-by-side comparison of realized loss and bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleCheck {
    pub seed: u64,
    /// `(1/n)‖μ̂ − μ‖²`.
    pub lhs: f64,
    pub rhs: f64,
    pub x_level: f64,
    pub held: bool,
    /// Description of the candidate achieving the minimum in the bound.
    pub minimizing_term: String,
    pub sigma_hat_sq: f64,
    pub family_size: usize,
    pub converged: bool,
}

/// Generates an instance, runs the configured estimator and compares its
/// loss with the matching bound: the path bound for Q-aggregation of the
/// Lasso path, the support bounds otherwise.
pub fn run_oracle_trial(config: &TrialConfig, seed: u64) -> Result<OracleCheck> {
    let inst = generate_instance(&config.instance, seed)?;
    let sigma_sq = inst.sigma * inst.sigma;
    let n = inst.x.n() as f64;
    let cache = ProjectionCache::new();
    let (report, path) = match config.sigma_mode {
        SigmaMode::Known => {
            let path = compute_path(&inst.x, &inst.y, config.path)?;
            let r = aggregate_path(
                &inst.x,
                &inst.y,
                &path,
                sigma_sq,
                config.method,
                config.aggregation,
                &cache,
            )?;
            (r, Some(path))
        }
        SigmaMode::SqrtLasso => {
            let opts = SqrtPipelineOptions {
                method: config.method,
                ..config.sqrt_pipeline
            };
            (sqrt_lasso_pipeline(&inst.x, &inst.y, opts)?, None)
        }
    };
    let lhs = (report.result.mu_hat() - &inst.mu).norm_squared() / n;
    let s2 = report.sigma_hat_sq;
    let (bound, minimizing_term) = match (config.method, &path) {
        (Method::Q, Some(path)) => {
            let b = soi_path_rhs(path, &inst.mu, &inst.x, s2, sigma_sq, config.x_level)?;
            let points = path.evaluation_points();
            let label = match points.iter().filter(|(l, _)| *l > 0.0).nth(b.argmin) {
                Some((lam, beta)) => format!("lambda={lam} support={}", Support::of_beta(beta)),
                None => format!("lambda={} support={{}}", path.lambda_zero()),
            };
            (b, label)
        }
        (method, _) => {
            let f = match method {
                Method::Q => soi_rhs_supports,
                Method::Crit => oi_rhs_crit,
            };
            let b = f(
                &report.family,
                &inst.mu,
                &inst.x,
                s2,
                sigma_sq,
                config.x_level,
                Some(&cache),
            )?;
            let label = format!("support={}", report.family.supports()[b.argmin]);
            (b, label)
        }
    };
    Ok(OracleCheck {
        seed,
        lhs,
        rhs: bound.value,
        x_level: config.x_level,
        held: lhs <= bound.value,
        minimizing_term,
        sigma_hat_sq: s2,
        family_size: report.family.len(),
        converged: report.converged(),
    })
}

/// Largest `p` accepted by [`exhaustive_spa`].
pub const EXHAUSTIVE_MAX_P: usize = 10;

/// All `2^p` supports, ordered by bitmask.
pub fn all_supports(p: usize) -> Result<SupportFamily> {
    if p > EXHAUSTIVE_MAX_P {
        return invalid(format!(
            "exhaustive enumeration is limited to p ≤ {EXHAUSTIVE_MAX_P}, got {p}"
        ));
    }
    Ok(SupportFamily::new(
        FamilySource::External,
        (0u32..1 << p)
            .map(|mask| Support::new((0..p).filter(|j| mask >> j & 1 == 1)).expect("distinct")),
    ))
}

/// Q-aggregation over every support (the sparsity pattern aggregate).
pub fn exhaustive_spa(
    x: &DesignMatrix,
    y: &ResponseVector,
    sigma_hat_sq: f64,
    opts: QaggOptions,
) -> Result<(SupportFamily, QAggResult)> {
    let family = all_supports(x.p())?;
    let pre = precompute(x, y, &family, None)?;
    let r = q_aggregate(&pre, sigma_hat_sq, opts)?;
    Ok((family, r))
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Quantile by linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Quantiles {
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
}

impl Quantiles {
    fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Self {
            q10: quantile(&v, 0.1),
            q50: quantile(&v, 0.5),
            q90: quantile(&v, 0.9),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageReport {
    pub reps: usize,
    pub seed0: u64,
    pub held: usize,
    pub held_rate: f64,
    pub mean_lhs: f64,
    pub mean_rhs: f64,
    pub lhs_quantiles: Quantiles,
    pub rhs_quantiles: Quantiles,
    /// `φ_max` of the first replication's design.
    pub phi_max: f64,
    pub all_converged: bool,
    pub trials: Vec<OracleCheck>,
}

/// Runs `reps` trials with seeds `config.seed + i` on `threads` workers.
pub fn monte_carlo(config: &TrialConfig, reps: usize, threads: usize) -> Result<CoverageReport> {
    if reps == 0 {
        return invalid("reps must be at least 1");
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| crate::Error::InvalidInput(format!("cannot start thread pool: {e}")))?;
    let trials = pool.install(|| {
        (0..reps as u64)
            .into_par_iter()
            .map(|i| run_oracle_trial(config, config.seed.wrapping_add(i)))
            .collect::<Result<Vec<_>>>()
    })?;
    let first = generate_instance(&config.instance, config.seed)?;
    let lhs: Vec<f64> = trials.iter().map(|t| t.lhs).collect();
    let rhs: Vec<f64> = trials.iter().map(|t| t.rhs).collect();
    let held = trials.iter().filter(|t| t.held).count();
    Ok(CoverageReport {
        reps,
        seed0: config.seed,
        held,
        held_rate: held as f64 / reps as f64,
        mean_lhs: compensated_sum(lhs.iter().copied()) / reps as f64,
        mean_rhs: compensated_sum(rhs.iter().copied()) / reps as f64,
        lhs_quantiles: Quantiles::of(&lhs),
        rhs_quantiles: Quantiles::of(&rhs),
        phi_max: operator_norm_phi_max(&first.x).value,
        all_converged: trials.iter().all(|t| t.converged),
        trials,
    })
}
