//! Aggregation of a family of supports.
//!
//! Given supports `T̂_1, …, T̂_M` with least-squares fits `μ̂_j = Π_{T̂_j} y`,
//! two estimators are provided:
//!
//! * [`crit_select`] picks the support minimizing
//!   `‖y − Π_T y‖² + 18 σ̂² log(1/π_T)`;
//! * [`q_aggregate`] minimizes over the simplex
//!   `H(θ) = ‖μ̂_θ − y‖² + ½ Σ θ_j ‖μ̂_j − μ̂_θ‖² + 26 σ̂² Σ θ_j log(1/π_{T̂_j})`.
//!
//! With `G_jk = μ̂_jᵀμ̂_k` the Q objective is the quadratic
//! `½ θᵀGθ + Σ θ_j (−2 μ̂_jᵀy + ½ G_jj + 26 σ̂² log(1/π_j)) + ‖y‖²`, which is
//! what gets evaluated; it never touches `n`-dimensional vectors.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{DesignMatrix, ProjectionCache, ResponseVector, Support};
use crate::path::{FamilySource, SupportFamily};
use crate::weights::log_inv_weight;

/// Multiplier of `σ̂² log(1/π_T)` in the selection criterion.
pub const CRIT_PENALTY: f64 = 18.0;
/// Multiplier of `σ̂² Σ θ_j log(1/π_j)` in the Q-aggregation objective.
pub const Q_PENALTY: f64 = 26.0;

/// Least-squares fits and their inner products for one support family.
#[derive(Clone, Debug)]
pub struct PrecomputedFits {
    pub family: SupportFamily,
    pub p: usize,
    /// `μ̂_j = Π_{T̂_j} y`.
    pub fitted: Vec<DVector<f64>>,
    /// `G_jk = μ̂_jᵀ μ̂_k`.
    pub gram: DMatrix<f64>,
    /// `μ̂_jᵀ y`.
    pub y_dot: Vec<f64>,
    /// `‖μ̂_j‖²`.
    pub fit_norms_sq: Vec<f64>,
    /// `‖y − μ̂_j‖²`, from the projection residual.
    pub resid_sq: Vec<f64>,
    pub y_norm_sq: f64,
    /// `log(1/π_{T̂_j})`.
    pub log_inv_weights: Vec<f64>,
}

impl PrecomputedFits {
    pub fn len(&self) -> usize {
        self.fitted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fitted.is_empty()
    }

    /// Linear coefficients of the Gram-form Q objective.
    fn linear_terms(&self, sigma_hat_sq: f64) -> Vec<f64> {
        (0..self.len())
            .map(|j| {
                -2.0 * self.y_dot[j]
                    + 0.5 * self.gram[(j, j)]
                    + Q_PENALTY * sigma_hat_sq * self.log_inv_weights[j]
            })
            .collect()
    }

    /// `Σ θ_j μ̂_j`.
    pub fn combine(&self, theta: &[f64]) -> DVector<f64> {
        let n = self.fitted.first().map_or(0, |f| f.len());
        let mut out = DVector::zeros(n);
        for (t, f) in theta.iter().zip(&self.fitted) {
            if *t != 0.0 {
                out.axpy(*t, f, 1.0);
            }
        }
        out
    }
}

/// Projects `y` on every support of the family.
///
/// The projections run on the current rayon pool; results are collected in
/// family order, so the output does not depend on the thread count.
pub fn precompute(
    x: &DesignMatrix,
    y: &ResponseVector,
    family: &SupportFamily,
    cache: Option<&ProjectionCache>,
) -> Result<PrecomputedFits> {
    y.check_against(x)?;
    if family.is_empty() {
        return invalid("support family is empty");
    }
    let fits = family
        .supports()
        .par_iter()
        .map(|t| match cache {
            Some(c) => c.project(x, t, y.values()),
            None => crate::model::project(x, t, y.values()),
        })
        .collect::<Result<Vec<_>>>()?;
    let m = fits.len();
    let fitted: Vec<DVector<f64>> = fits.iter().map(|f| f.fitted.clone()).collect();
    let resid_sq = fits.iter().map(|f| f.residual.norm_squared()).collect();
    let mut gram = DMatrix::zeros(m, m);
    for j in 0..m {
        for k in j..m {
            let v = fitted[j].dot(&fitted[k]);
            gram[(j, k)] = v;
            gram[(k, j)] = v;
        }
    }
    let y_dot = fitted.iter().map(|f| f.dot(y.values())).collect();
    let fit_norms_sq = (0..m).map(|j| gram[(j, j)]).collect();
    let log_inv_weights = family
        .supports()
        .iter()
        .map(|t| log_inv_weight(x.p(), t.size()))
        .collect::<Result<Vec<_>>>()?;
    Ok(PrecomputedFits {
        family: family.clone(),
        p: x.p(),
        fitted,
        gram,
        y_dot,
        fit_norms_sq,
        resid_sq,
        y_norm_sq: y.values().norm_squared(),
        log_inv_weights,
    })
}

fn clamp_sigma(sigma_hat_sq: f64) -> f64 {
    if sigma_hat_sq < 0.0 {
        log::warn!("negative variance estimate {sigma_hat_sq} clamped to 0");
        0.0
    } else {
        sigma_hat_sq
    }
}

/// `‖y − Π_T y‖² + 18 σ̂² log(1/π_T)`.
pub fn crit_value(resid_sq: f64, log_inv_w: f64, sigma_hat_sq: f64) -> f64 {
    resid_sq + CRIT_PENALTY * sigma_hat_sq * log_inv_w
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CritResult {
    pub chosen: Support,
    /// Position of the chosen support in the family.
    pub index: usize,
    pub crit_value: f64,
    #[serde(serialize_with = "ser_dvector")]
    pub mu_hat: DVector<f64>,
    pub sigma_hat_sq_used: f64,
}

/// The support of the family minimizing the penalized criterion.
///
/// Ties go to the smaller support, then to the lexicographically smaller one.
pub fn crit_select(pre: &PrecomputedFits, sigma_hat_sq: f64) -> CritResult {
    let s2 = clamp_sigma(sigma_hat_sq);
    let supports = pre.family.supports();
    let index = (0..pre.len())
        .min_by(|&a, &b| {
            let ca = crit_value(pre.resid_sq[a], pre.log_inv_weights[a], s2);
            let cb = crit_value(pre.resid_sq[b], pre.log_inv_weights[b], s2);
            ca.total_cmp(&cb)
                .then(supports[a].size().cmp(&supports[b].size()))
                .then(supports[a].indices().cmp(supports[b].indices()))
        })
        .expect("family is nonempty");
    CritResult {
        chosen: supports[index].clone(),
        index,
        crit_value: crit_value(pre.resid_sq[index], pre.log_inv_weights[index], s2),
        mu_hat: pre.fitted[index].clone(),
        sigma_hat_sq_used: s2,
    }
}

/// A point of the probability simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    /// Accepts `θ` with entries `≥ −1e-8` summing to one within `1e-8`.
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return invalid("simplex weights must be nonempty");
        }
        if theta.iter().any(|t| !t.is_finite() || *t < -1e-8) {
            return invalid("simplex weights must be finite and nonnegative");
        }
        let sum: f64 = theta.iter().sum();
        if (sum - 1.0).abs() > 1e-8 {
            return invalid(format!("simplex weights sum to {sum}, not 1"));
        }
        Ok(Self(theta))
    }

    pub fn vertex(m: usize, k: usize) -> Self {
        let mut v = vec![0.0; m];
        v[k] = 1.0;
        Self(v)
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Euclidean projection onto the simplex (sort and threshold).
pub fn simplex_project(v: &[f64]) -> SimplexWeights {
    assert!(!v.is_empty(), "cannot project an empty vector");
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    let mut theta: Vec<f64> = v.iter().map(|&x| (x - tau).max(0.0)).collect();
    let sum: f64 = theta.iter().sum();
    theta.iter_mut().for_each(|t| *t /= sum);
    SimplexWeights(theta)
}

/// The Q-aggregation objective `H(θ)` in Gram form.
pub fn q_objective(
    theta: &SimplexWeights,
    pre: &PrecomputedFits,
    sigma_hat_sq: f64,
) -> Result<f64> {
    if theta.len() != pre.len() {
        return invalid(format!(
            "theta has length {}, family has {} supports",
            theta.len(),
            pre.len()
        ));
    }
    let b = pre.linear_terms(clamp_sigma(sigma_hat_sq));
    Ok(gram_objective(
        &pre.gram,
        &b,
        pre.y_norm_sq,
        theta.as_slice(),
    ))
}

fn gram_objective(g: &DMatrix<f64>, b: &[f64], y_norm_sq: f64, theta: &[f64]) -> f64 {
    let t = DVector::from_column_slice(theta);
    0.5 * t.dot(&(g * &t)) + t.iter().zip(b).map(|(a, c)| a * c).sum::<f64>() + y_norm_sq
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaggOptions {
    /// Frank–Wolfe gap tolerance; `None` means `1e-8·(1 + |H|)`.
    pub tol_gap: Option<f64>,
    pub max_iter: usize,
}

impl Default for QaggOptions {
    fn default() -> Self {
        Self {
            tol_gap: None,
            max_iter: 50_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QAggResult {
    pub theta_hat: SimplexWeights,
    #[serde(serialize_with = "ser_dvector")]
    pub mu_hat: DVector<f64>,
    /// `H(θ̂)`.
    pub objective: f64,
    /// `max_k ∇H(θ̂)ᵀ(θ̂ − e_k)`.
    pub fw_gap: f64,
    pub sigma_hat_sq_used: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn largest_eigenvalue(g: &DMatrix<f64>) -> f64 {
    let m = g.nrows();
    let mut v = DVector::from_fn(m, |j, _| 1.0 + j as f64 / m as f64);
    v.normalize_mut();
    let mut value = 0.0;
    for _ in 0..10_000 {
        let w = g * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - value).abs() <= 1e-10 * next.abs() {
            return next;
        }
        value = next;
    }
    value
}

/// Minimizes the Q-aggregation objective over the simplex.
///
/// Accelerated projected gradient with step `1/L` (`L` the top eigenvalue of
/// `G`), started at the best vertex. A step that would increase `H` resets
/// the momentum and is replaced by a plain projected-gradient step, so the
/// objective never goes up. Stops once the Frank–Wolfe gap is below
/// tolerance.
pub fn q_aggregate(
    pre: &PrecomputedFits,
    sigma_hat_sq: f64,
    opts: QaggOptions,
) -> Result<QAggResult> {
    if let Some(t) = opts.tol_gap {
        if !(t > 0.0) {
            return invalid("tol_gap must be positive");
        }
    }
    let s2 = clamp_sigma(sigma_hat_sq);
    let m = pre.len();
    let g = &pre.gram;
    let b = pre.linear_terms(s2);
    let h = |theta: &[f64]| gram_objective(g, &b, pre.y_norm_sq, theta);
    let grad = |theta: &[f64]| -> Vec<f64> {
        let t = DVector::from_column_slice(theta);
        let gt = g * t;
        gt.iter().zip(&b).map(|(a, c)| a + c).collect()
    };
    let fw_gap = |theta: &[f64], gr: &[f64]| -> f64 {
        let lin: f64 = theta.iter().zip(gr).map(|(a, c)| a * c).sum();
        let min = gr.iter().copied().fold(f64::INFINITY, f64::min);
        (lin - min).max(0.0)
    };
    let tol_for = |obj: f64| opts.tol_gap.unwrap_or(1e-8 * (1.0 + obj.abs()));

    let best_vertex = (0..m)
        .min_by(|&a, &c| (0.5 * g[(a, a)] + b[a]).total_cmp(&(0.5 * g[(c, c)] + b[c])))
        .expect("family is nonempty");
    let mut theta = SimplexWeights::vertex(m, best_vertex).into_inner();
    let mut obj = h(&theta);
    let mut gr = grad(&theta);
    let mut gap = fw_gap(&theta, &gr);

    let step = 1.0 / largest_eigenvalue(g).max(1e-12);
    let mut momentum_point = theta.clone();
    let mut t_k = 1.0f64;
    let mut iterations = 0;
    while gap > tol_for(obj) && iterations < opts.max_iter {
        iterations += 1;
        let gy = grad(&momentum_point);
        let trial: Vec<f64> = momentum_point
            .iter()
            .zip(&gy)
            .map(|(v, d)| v - step * d)
            .collect();
        let mut next = simplex_project(&trial).into_inner();
        let mut next_obj = h(&next);
        if next_obj > obj {
            // Restart from the last accepted iterate.
            let trial: Vec<f64> = theta.iter().zip(&gr).map(|(v, d)| v - step * d).collect();
            next = simplex_project(&trial).into_inner();
            next_obj = h(&next);
            t_k = 1.0;
            if next_obj > obj {
                // Round-off level: no further progress possible.
                break;
            }
            momentum_point = next.clone();
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_k * t_k).sqrt());
            let beta = (t_k - 1.0) / t_next;
            momentum_point = next
                .iter()
                .zip(&theta)
                .map(|(a, prev)| a + beta * (a - prev))
                .collect();
            t_k = t_next;
        }
        theta = next;
        obj = next_obj;
        gr = grad(&theta);
        gap = fw_gap(&theta, &gr);
    }
    let converged = gap <= tol_for(obj);
    if !converged {
        log::debug!("q_aggregate stopped after {iterations} iterations with gap {gap:e}");
    }
    let mu_hat = pre.combine(&theta);
    Ok(QAggResult {
        theta_hat: SimplexWeights(theta),
        mu_hat,
        objective: obj,
        fw_gap: gap,
        sigma_hat_sq_used: s2,
        iterations,
        converged,
    })
}

/// Which of the two estimators to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Q-aggregation over the simplex.
    Q,
    /// Penalized-criterion selection of one support.
    Crit,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum AggregationResult {
    Q(QAggResult),
    Crit(CritResult),
}

impl AggregationResult {
    pub fn mu_hat(&self) -> &DVector<f64> {
        match self {
            Self::Q(r) => &r.mu_hat,
            Self::Crit(r) => &r.mu_hat,
        }
    }

    pub fn sigma_hat_sq_used(&self) -> f64 {
        match self {
            Self::Q(r) => r.sigma_hat_sq_used,
            Self::Crit(r) => r.sigma_hat_sq_used,
        }
    }

    pub fn converged(&self) -> bool {
        match self {
            Self::Q(r) => r.converged,
            Self::Crit(_) => true,
        }
    }
}

/// Runs the chosen estimator on precomputed fits.
pub fn run_method(
    pre: &PrecomputedFits,
    sigma_hat_sq: f64,
    method: Method,
    opts: QaggOptions,
) -> Result<AggregationResult> {
    Ok(match method {
        Method::Q => AggregationResult::Q(q_aggregate(pre, sigma_hat_sq, opts)?),
        Method::Crit => AggregationResult::Crit(crit_select(pre, sigma_hat_sq)),
    })
}

/// Aggregates arbitrary coefficient estimates through their supports.
///
/// The family is `{supp(β̂_j)}`; the estimators then use `Π_T y`, not `Xβ̂_j`.
pub fn aggregate_estimators(
    x: &DesignMatrix,
    y: &ResponseVector,
    betas: &[Vec<f64>],
    sigma_hat_sq: f64,
    method: Method,
    opts: QaggOptions,
) -> Result<(SupportFamily, AggregationResult)> {
    if betas.is_empty() {
        return invalid("no estimators to aggregate");
    }
    if let Some(b) = betas.iter().find(|b| b.len() != x.p()) {
        return invalid(format!(
            "coefficient vector has length {}, expected {}",
            b.len(),
            x.p()
        ));
    }
    let family = SupportFamily::new(
        FamilySource::External,
        betas.iter().map(|b| Support::of_beta(b)),
    );
    let pre = precompute(x, y, &family, None)?;
    let result = run_method(&pre, sigma_hat_sq, method, opts)?;
    Ok((family, result))
}

pub(crate) fn ser_dvector<S: serde::Serializer>(
    v: &DVector<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    v.as_slice().serialize(s)
}
