//! Exact Lasso regularization path and data-driven support families.
//!
//! [`compute_path`] follows the homotopy in λ (LARS with sign-change drops).
//! On each segment the active coefficients satisfy
//!
//! ```text
//! G_A β_A(λ) = X_Aᵀy/n − λ s_A,     G_A = X_AᵀX_A / n
//! ```
//!
//! so they move along `w = G_A⁻¹ s_A` as λ decreases. The next knot is the
//! first of: an inactive correlation reaching `±λ` (entry), or an active
//! coefficient crossing zero (drop).

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{DesignMatrix, ResponseVector, Support};
use crate::solvers::{lasso_cd, CdOptions};

/// Relative tolerance under which two path events count as simultaneous.
pub const TIE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PathOptions {
    /// Cap on the number of knots; defaults to `10·min(n, p) + 10`.
    pub max_knots: Option<usize>,
    /// Stop once λ reaches this value; defaults to `1e-8·λ₀`.
    pub lambda_floor: Option<f64>,
}

/// The piecewise-linear Lasso solution path.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LassoPath {
    /// Strictly decreasing knots, starting at `λ₀ = ‖Xᵀy‖∞/n`.
    pub knots: Vec<f64>,
    /// Coefficients at each knot.
    pub betas_at_knots: Vec<Vec<f64>>,
    /// `supports[k]` is active on the open segment below `knots[k]`.
    pub supports: Vec<Support>,
    /// Lower end of the last segment (the floor, 0, or the cap point).
    pub end_lambda: f64,
    pub end_beta: Vec<f64>,
    /// The knot cap was hit before the floor.
    pub truncated: bool,
    /// Simultaneous events or a singular active set were encountered.
    pub degenerate: bool,
}

impl LassoPath {
    pub fn p(&self) -> usize {
        self.end_beta.len()
    }

    pub fn lambda_zero(&self) -> f64 {
        self.knots.first().copied().unwrap_or(0.0)
    }

    /// Number of segments below `λ₀`.
    pub fn segments(&self) -> usize {
        self.knots.len()
    }

    /// Segment `k` as `(upper λ, lower λ, β at upper, β at lower)`.
    pub fn segment(&self, k: usize) -> (f64, f64, &[f64], &[f64]) {
        let hi = self.knots[k];
        if k + 1 < self.knots.len() {
            (
                hi,
                self.knots[k + 1],
                &self.betas_at_knots[k],
                &self.betas_at_knots[k + 1],
            )
        } else {
            (hi, self.end_lambda, &self.betas_at_knots[k], &self.end_beta)
        }
    }

    /// The Lasso solution at `λ` by linear interpolation between knots.
    ///
    /// Returns `None` below the computed range.
    pub fn beta_at(&self, lambda: f64) -> Option<Vec<f64>> {
        if lambda >= self.lambda_zero() {
            return Some(vec![0.0; self.p()]);
        }
        if lambda < self.end_lambda {
            return None;
        }
        let k = self.knots.iter().rposition(|&l| l > lambda).unwrap_or(0);
        let (hi, lo, bh, bl) = self.segment(k);
        let t = if hi > lo {
            (hi - lambda) / (hi - lo)
        } else {
            0.0
        };
        Some(bh.iter().zip(bl).map(|(a, b)| a + t * (b - a)).collect())
    }

    /// Knots, segment midpoints and the lower endpoint: the points at which
    /// path-wide quantities are evaluated.
    pub fn evaluation_points(&self) -> Vec<(f64, Vec<f64>)> {
        let mut out = Vec::with_capacity(2 * self.knots.len() + 1);
        for k in 0..self.segments() {
            let (hi, lo, bh, bl) = self.segment(k);
            out.push((hi, bh.to_vec()));
            let mid: Vec<f64> = bh.iter().zip(bl).map(|(a, b)| 0.5 * (a + b)).collect();
            out.push((0.5 * (hi + lo), mid));
        }
        if self.end_lambda > 0.0 && !self.knots.is_empty() {
            out.push((self.end_lambda, self.end_beta.clone()));
        }
        out
    }
}

/// Active-set bookkeeping for the homotopy.
#[derive(Default)]
struct ActiveSet {
    idx: Vec<usize>,
    signs: Vec<f64>,
}

impl ActiveSet {
    fn add(&mut self, j: usize, sign: f64) {
        self.idx.push(j);
        self.signs.push(sign);
    }

    fn remove(&mut self, j: usize) {
        if let Some(pos) = self.idx.iter().position(|&i| i == j) {
            self.idx.remove(pos);
            self.signs.remove(pos);
        }
    }

    fn support(&self) -> Support {
        Support::new(self.idx.iter().copied()).expect("active set has no duplicates")
    }
}

/// Thin QR of `X_A`, solving systems in `G_A = X_AᵀX_A/n` without forming it.
struct ActiveQr {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    least_squares: DVector<f64>,
    /// `y − X_A·least_squares`.
    ls_residual: DVector<f64>,
    n: f64,
}

/// Equiangular direction: `w = G_A⁻¹ s` and `u = X_A w`.
struct Direction {
    w: DVector<f64>,
    u: DVector<f64>,
}

impl ActiveQr {
    /// `None` when `X_A` is numerically rank deficient.
    fn new(x: &DesignMatrix, y: &ResponseVector, idx: &[usize]) -> Option<Self> {
        if idx.len() > x.n() {
            return None;
        }
        let qr = x.matrix().select_columns(idx).qr();
        let r = qr.r();
        let scale = idx
            .iter()
            .map(|&j| x.column_norms_sq()[j])
            .fold(0.0f64, f64::max);
        let min_pivot = r.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v * v));
        if !(min_pivot > 1e-12 * scale) {
            return None;
        }
        let q = qr.q();
        let qty = q.transpose() * y.values();
        let least_squares = r.solve_upper_triangular(&qty)?;
        let ls_residual = y.values() - &q * qty;
        Some(Self {
            q,
            r,
            least_squares,
            ls_residual,
            n: x.n() as f64,
        })
    }

    /// `u = n·Q·R⁻ᵀs` avoids the squared conditioning of `G_A`.
    fn direction(&self, signs: &[f64]) -> Direction {
        let z = self
            .r
            .tr_solve_upper_triangular(&DVector::from_column_slice(signs))
            .expect("nonzero pivots");
        let w = self.r.solve_upper_triangular(&z).expect("nonzero pivots") * self.n;
        let u = &self.q * z * self.n;
        Direction { w, u }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Event {
    Enter { j: usize, sign: f64 },
    Drop { j: usize },
}

impl Event {
    fn column(&self) -> usize {
        match *self {
            Event::Enter { j, .. } | Event::Drop { j } => j,
        }
    }
}

/// Computes the Lasso path from `λ₀` down to the floor.
pub fn compute_path(x: &DesignMatrix, y: &ResponseVector, opts: PathOptions) -> Result<LassoPath> {
    y.check_against(x)?;
    let (n, p) = (x.n(), x.p());
    let max_knots = opts.max_knots.unwrap_or(10 * n.min(p) + 10);
    if max_knots == 0 {
        return invalid("max_knots must be at least 1");
    }
    let xty = x.correlations(y.values());
    let lambda0 = xty.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let floor = opts.lambda_floor.unwrap_or(1e-8 * lambda0);
    if !(floor >= 0.0) {
        return invalid("lambda_floor must be nonnegative");
    }

    let mut path = LassoPath {
        knots: Vec::new(),
        betas_at_knots: Vec::new(),
        supports: Vec::new(),
        end_lambda: 0.0,
        end_beta: vec![0.0; p],
        truncated: false,
        degenerate: false,
    };
    if lambda0 == 0.0 || lambda0 <= floor {
        path.end_lambda = lambda0;
        return Ok(path);
    }

    let mut active = ActiveSet::default();
    let mut beta = vec![0.0; p];
    let mut lam = lambda0;

    // Entering variables at λ₀, lowest index first on ties.
    let first = xty
        .iter()
        .position(|c| c.abs() >= lambda0 * (1.0 - TIE_TOL))
        .expect("maximum is attained");
    if xty
        .iter()
        .filter(|c| c.abs() >= lambda0 * (1.0 - TIE_TOL))
        .count()
        > 1
    {
        path.degenerate = true;
    }
    active.add(first, xty[first].signum());
    path.knots.push(lam);
    path.betas_at_knots.push(beta.clone());
    path.supports.push(active.support());

    let mut blocked_entry: Option<usize> = None;
    let mut blocked_drop: Option<usize> = Some(first);
    // Guards against cycling through zero-length steps.
    let mut budget = 4 * max_knots + 4 * p + 16;

    loop {
        budget -= 1;
        if budget == 0 {
            path.truncated = true;
            path.degenerate = true;
            path.end_lambda = lam;
            path.end_beta = beta.clone();
            break;
        }

        let qr = match ActiveQr::new(x, y, &active.idx) {
            Some(q) => q,
            None => {
                // Dependent column: drop the most recent arrival.
                let j = *active.idx.last().expect("singular system has columns");
                active.remove(j);
                beta[j] = 0.0;
                blocked_entry = Some(j);
                blocked_drop = None;
                path.degenerate = true;
                *path.supports.last_mut().expect("at least one knot") = active.support();
                continue;
            }
        };
        let Direction { w, u } = qr.direction(&active.signs);
        // a_j = X_jᵀ X_A w / n.
        let a = x.correlations(&u);
        let coef_at = |target: f64, active: &ActiveSet| -> Vec<f64> {
            let mut out = vec![0.0; p];
            for (pos, &j) in active.idx.iter().enumerate() {
                out[j] = qr.least_squares[pos] - target * w[pos];
            }
            out
        };
        // Re-solve at the knot so event times match the coefficients this segment stores.
        beta = coef_at(lam, &active);
        if let Some(j) = blocked_drop {
            beta[j] = 0.0;
        }
        *path.betas_at_knots.last_mut().expect("at least one knot") = beta.clone();
        let c = x.correlations(&(&qr.ls_residual + &u * lam));

        let mut events: Vec<(f64, Event)> = Vec::new();
        let in_active: HashSet<usize> = active.idx.iter().copied().collect();
        for j in 0..p {
            if in_active.contains(&j) {
                continue;
            }
            let mut best: Option<(f64, f64)> = None;
            for (num, den, sign) in [
                (lam - c[j], 1.0 - a[j], 1.0),
                (lam + c[j], 1.0 + a[j], -1.0),
            ] {
                if den <= 1e-12 {
                    continue;
                }
                // A column that just left sits at |c_j| = λ; only a later crossing counts.
                if blocked_entry == Some(j) && num <= TIE_TOL * lam {
                    continue;
                }
                let g = (num / den).max(0.0);
                if best.is_none_or(|(bg, _)| g < bg) {
                    best = Some((g, sign));
                }
            }
            if let Some((g, sign)) = best {
                events.push((g, Event::Enter { j, sign }));
            }
        }
        for (pos, &j) in active.idx.iter().enumerate() {
            if blocked_drop == Some(j) || beta[j] == 0.0 || w[pos] == 0.0 {
                continue;
            }
            let g = -beta[j] / w[pos];
            if g > 0.0 {
                events.push((g, Event::Drop { j }));
            }
        }

        let gamma = events.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
        let next_lam = lam - gamma;
        if !(next_lam > floor) {
            path.end_lambda = floor;
            path.end_beta = coef_at(floor, &active);
            break;
        }
        let zero_step = gamma <= TIE_TOL * lam;
        if !zero_step && path.knots.len() >= max_knots {
            path.truncated = true;
            path.end_lambda = next_lam;
            path.end_beta = coef_at(next_lam, &active);
            break;
        }

        if !zero_step {
            beta = coef_at(next_lam, &active);
            lam = next_lam;
        }
        let mut simultaneous: Vec<Event> = events
            .iter()
            .filter(|(g, _)| *g <= gamma + TIE_TOL * lam.max(gamma))
            .map(|e| e.1)
            .collect();
        simultaneous.sort_by_key(Event::column);
        if simultaneous.len() > 1 {
            path.degenerate = true;
        }
        // One event per step; any others are picked up at zero step length.
        let event = simultaneous[0];
        blocked_entry = None;
        blocked_drop = None;
        match event {
            Event::Enter { j, sign } => {
                active.add(j, sign);
                beta[j] = 0.0;
                blocked_drop = Some(j);
            }
            Event::Drop { j } => {
                active.remove(j);
                beta[j] = 0.0;
                blocked_entry = Some(j);
            }
        }
        if zero_step {
            *path.supports.last_mut().expect("at least one knot") = active.support();
            *path.betas_at_knots.last_mut().expect("at least one knot") = beta.clone();
        } else {
            path.knots.push(lam);
            path.betas_at_knots.push(beta.clone());
            path.supports.push(active.support());
        }
    }
    Ok(path)
}

/// Where a support family came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilySource {
    Path,
    Grid,
    External,
}

/// An ordered collection of distinct supports.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SupportFamily {
    supports: Vec<Support>,
    source: FamilySource,
}

impl SupportFamily {
    /// Deduplicates, keeping first appearances in order.
    pub fn new(source: FamilySource, supports: impl IntoIterator<Item = Support>) -> Self {
        let mut seen = HashSet::new();
        let supports = supports
            .into_iter()
            .filter(|s| seen.insert(s.clone()))
            .collect();
        Self { supports, source }
    }

    pub fn supports(&self) -> &[Support] {
        &self.supports
    }

    pub fn source(&self) -> FamilySource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.supports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.supports.is_empty()
    }

    pub fn contains(&self, s: &Support) -> bool {
        self.supports.contains(s)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Support> {
        self.supports.iter()
    }

    /// A copy with `support` removed.
    pub fn without(&self, support: &Support) -> Self {
        Self {
            supports: self
                .supports
                .iter()
                .filter(|s| *s != support)
                .cloned()
                .collect(),
            source: self.source,
        }
    }
}

/// `{∅} ∪ {supp(β̂_λ) : λ on the path}` in order of first appearance.
pub fn path_support_family(path: &LassoPath) -> SupportFamily {
    SupportFamily::new(
        FamilySource::Path,
        std::iter::once(Support::empty()).chain(path.supports.iter().cloned()),
    )
}

/// One grid point of [`grid_support_family`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridEntry {
    pub lambda: f64,
    pub support: Support,
    pub converged: bool,
    pub duality_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridFamily {
    pub family: SupportFamily,
    /// Entries in fitting order (decreasing λ).
    pub entries: Vec<GridEntry>,
    /// Coefficient vectors in the same order.
    #[serde(skip)]
    pub betas: Vec<Vec<f64>>,
}

/// Supports of the Lasso on a grid of λ values, warm-started from the largest.
///
/// Grid points whose solve did not converge are reported but left out of the
/// family. The empty support is always included.
pub fn grid_support_family(
    x: &DesignMatrix,
    y: &ResponseVector,
    lambdas: &[f64],
    opts: CdOptions,
) -> Result<GridFamily> {
    if let Some(bad) = lambdas.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
        return invalid(format!(
            "grid values must be positive and finite, got {bad}"
        ));
    }
    let mut order: Vec<f64> = lambdas.to_vec();
    order.sort_by(|a, b| b.total_cmp(a));
    let mut warm = vec![0.0; x.p()];
    let mut entries = Vec::with_capacity(order.len());
    let mut betas = Vec::with_capacity(order.len());
    for lam in order {
        let fit = lasso_cd(x, y, lam, opts, Some(&warm))?;
        warm.clone_from(&fit.beta);
        entries.push(GridEntry {
            lambda: lam,
            support: Support::of_beta(&fit.beta),
            converged: fit.converged,
            duality_gap: fit.duality_gap,
        });
        betas.push(fit.beta);
    }
    let family = SupportFamily::new(
        FamilySource::Grid,
        std::iter::once(Support::empty()).chain(
            entries
                .iter()
                .filter(|e| e.converged)
                .map(|e| e.support.clone()),
        ),
    );
    Ok(GridFamily {
        family,
        entries,
        betas,
    })
}
