//! Problem data and least-squares projections onto column spans.
//!
//! A [`Support`] `T` selects columns of the design; [`project`] returns the
//! orthogonal projection of a vector onto `span{X_j : j ∈ T}`. Projections go
//! through a Householder QR with column-norm pivoting, so submatrices with
//! duplicated or numerically dependent columns are handled: pivots whose
//! magnitude falls below [`RANK_TOL`] times the leading pivot are discarded.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Result};

/// Relative pivot threshold of the rank-revealing factorization.
pub const RANK_TOL: f64 = 1e-10;

/// Coefficients with magnitude at or below this count as zero when
/// extracting a support.
pub const SUPPORT_THRESHOLD: f64 = 1e-10;

/// Dense `n × p` design matrix with cached squared column norms.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    data: DMatrix<f64>,
    column_norms_sq: Vec<f64>,
}

impl DesignMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return invalid(format!(
                "design matrix must be at least 1x1, got {}x{}",
                data.nrows(),
                data.ncols()
            ));
        }
        if let Some((idx, _)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (row, col) = (idx % data.nrows(), idx / data.nrows());
            return invalid(format!(
                "non-finite design entry at row {}, column {}",
                row + 1,
                col + 1
            ));
        }
        let column_norms_sq = data.column_iter().map(|c| c.norm_squared()).collect();
        Ok(Self {
            data,
            column_norms_sq,
        })
    }

    /// Builds a matrix from observations (one inner vector per row).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return invalid("design matrix has no rows");
        }
        let p = rows[0].len();
        if let Some(bad) = rows.iter().position(|r| r.len() != p) {
            return invalid(format!(
                "ragged design: row {} has {} entries, expected {}",
                bad + 1,
                rows[bad].len(),
                p
            ));
        }
        Self::new(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn p(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn column_norms_sq(&self) -> &[f64] {
        &self.column_norms_sq
    }

    /// `X β`.
    pub fn mul(&self, beta: &[f64]) -> DVector<f64> {
        debug_assert_eq!(beta.len(), self.p());
        let mut out = DVector::zeros(self.n());
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                out.axpy(b, &self.data.column(j), 1.0);
            }
        }
        out
    }

    /// `Xᵀ v / n`.
    pub fn correlations(&self, v: &DVector<f64>) -> Vec<f64> {
        let n = self.n() as f64;
        self.data.column_iter().map(|c| c.dot(v) / n).collect()
    }

    /// `Xᵀ y / n` maximum absolute value: the smallest λ at which the Lasso
    /// solution is zero.
    pub fn lambda_max(&self, y: &ResponseVector) -> f64 {
        self.correlations(y.values())
            .into_iter()
            .fold(0.0, |m, c| m.max(c.abs()))
    }
}

/// Observation vector of length `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseVector {
    values: DVector<f64>,
}

impl ResponseVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite response entry at row {}", i + 1));
        }
        Ok(Self {
            values: DVector::from_vec(values),
        })
    }

    pub fn from_dvector(values: DVector<f64>) -> Result<Self> {
        Self::new(values.as_slice().to_vec())
    }

    /// Checks the length against the design.
    pub fn check_against(&self, x: &DesignMatrix) -> Result<()> {
        if self.len() != x.n() {
            return invalid(format!(
                "response has length {}, design has {} rows",
                self.len(),
                x.n()
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }
}

/// A subset of column indices, stored 0-based and strictly increasing.
///
/// Serialized 1-based, as users see columns.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Support {
    indices: Vec<usize>,
}

impl Support {
    pub fn empty() -> Self {
        Self::default()
    }

    /// From 0-based indices in any order. Duplicates are rejected.
    pub fn new(indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut indices: Vec<usize> = indices.into_iter().collect();
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return invalid("support contains duplicate indices");
        }
        Ok(Self { indices })
    }

    /// From 1-based indices as written in user-facing files.
    pub fn from_one_based(indices: &[usize]) -> Result<Self> {
        if indices.contains(&0) {
            return invalid("1-based support contains index 0");
        }
        Self::new(indices.iter().map(|&i| i - 1))
    }

    /// Indices of the coefficients with `|β_j| > SUPPORT_THRESHOLD`.
    pub fn of_beta(beta: &[f64]) -> Self {
        Self {
            indices: beta
                .iter()
                .enumerate()
                .filter(|(_, b)| b.abs() > SUPPORT_THRESHOLD)
                .map(|(j, _)| j)
                .collect(),
        }
    }

    /// All columns `0..p`.
    pub fn full(p: usize) -> Self {
        Self {
            indices: (0..p).collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.indices.iter().map(|i| i + 1).collect()
    }

    pub fn size(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    pub fn is_subset_of(&self, other: &Support) -> bool {
        self.indices.iter().all(|&j| other.contains(j))
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        match self.indices.last() {
            Some(&last) if last >= p => invalid(format!(
                "support index {} out of range for p = {}",
                last + 1,
                p
            )),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Support {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, j) in self.indices.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", j + 1)?;
        }
        write!(f, "}}")
    }
}

impl Serialize for Support {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.one_based().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Support {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<usize>::deserialize(d)?;
        Support::from_one_based(&raw).map_err(serde::de::Error::custom)
    }
}

/// `Π_T v` together with its residual.
#[derive(Clone, Debug)]
pub struct ProjectionResult {
    pub fitted: DVector<f64>,
    pub residual: DVector<f64>,
    pub rank: usize,
}

/// Householder factorization of `X_T` truncated to its numerical rank.
#[derive(Clone, Debug)]
pub struct Projector {
    n: usize,
    // (first row, unit Householder vector on rows first..n)
    reflectors: Vec<(usize, Vec<f64>)>,
    rank: usize,
}

impl Projector {
    pub fn new(x: &DesignMatrix, support: &Support) -> Result<Self> {
        support.validate(x.p())?;
        let n = x.n();
        let k = support.size();
        let mut a = DMatrix::from_fn(n, k, |i, c| x.matrix()[(i, support.indices()[c])]);
        let steps = n.min(k);
        let mut reflectors = Vec::with_capacity(steps);
        let mut pivots = Vec::with_capacity(steps);

        for i in 0..steps {
            // Businger-Golub: bring the remaining column of largest norm forward.
            let (best, best_norm) = (i..k)
                .map(|c| (c, a.view((i, c), (n - i, 1)).norm_squared()))
                .fold((i, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
            if best != i {
                a.swap_columns(i, best);
            }
            let norm = best_norm.sqrt();
            pivots.push(norm);
            if norm == 0.0 {
                break;
            }
            let x0 = a[(i, i)];
            let alpha = if x0 >= 0.0 { -norm } else { norm };
            let mut v: Vec<f64> = (i..n).map(|r| a[(r, i)]).collect();
            v[0] -= alpha;
            let vnorm = v.iter().map(|e| e * e).sum::<f64>().sqrt();
            if vnorm > 0.0 {
                v.iter_mut().for_each(|e| *e /= vnorm);
                for c in i..k {
                    let dot: f64 = v.iter().enumerate().map(|(o, e)| e * a[(i + o, c)]).sum();
                    for (o, e) in v.iter().enumerate() {
                        a[(i + o, c)] -= 2.0 * dot * e;
                    }
                }
            }
            reflectors.push((i, v));
        }

        let lead = pivots.first().copied().unwrap_or(0.0);
        let rank = if lead > 0.0 {
            pivots.iter().take_while(|&&r| r > RANK_TOL * lead).count()
        } else {
            0
        };
        reflectors.truncate(rank);
        Ok(Self {
            n,
            reflectors,
            rank,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<ProjectionResult> {
        if v.len() != self.n {
            return invalid(format!(
                "vector has length {}, expected {}",
                v.len(),
                self.n
            ));
        }
        if v.iter().any(|e| !e.is_finite()) {
            return invalid("vector to project has non-finite entries");
        }
        let mut z = v.clone();
        for (start, h) in &self.reflectors {
            reflect(&mut z, *start, h);
        }
        for e in z.iter_mut().skip(self.rank) {
            *e = 0.0;
        }
        for (start, h) in self.reflectors.iter().rev() {
            reflect(&mut z, *start, h);
        }
        let residual = v - &z;
        Ok(ProjectionResult {
            fitted: z,
            residual,
            rank: self.rank,
        })
    }
}

fn reflect(z: &mut DVector<f64>, start: usize, h: &[f64]) {
    let dot: f64 = h.iter().enumerate().map(|(o, e)| e * z[start + o]).sum();
    for (o, e) in h.iter().enumerate() {
        z[start + o] -= 2.0 * dot * e;
    }
}

/// Orthogonal projection of `v` onto the span of the columns indexed by `support`.
pub fn project(x: &DesignMatrix, support: &Support, v: &DVector<f64>) -> Result<ProjectionResult> {
    Projector::new(x, support)?.apply(v)
}

/// Per-support factorization cache, safe to share between threads.
#[derive(Debug, Default)]
pub struct ProjectionCache {
    inner: RwLock<HashMap<Support, Arc<Projector>>>,
}

impl ProjectionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn projector(&self, x: &DesignMatrix, support: &Support) -> Result<Arc<Projector>> {
        if let Some(p) = self.inner.read().expect("cache poisoned").get(support) {
            return Ok(Arc::clone(p));
        }
        let built = Arc::new(Projector::new(x, support)?);
        let mut guard = self.inner.write().expect("cache poisoned");
        Ok(Arc::clone(guard.entry(support.clone()).or_insert(built)))
    }

    pub fn project(
        &self,
        x: &DesignMatrix,
        support: &Support,
        v: &DVector<f64>,
    ) -> Result<ProjectionResult> {
        self.projector(x, support)?.apply(v)
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Largest eigenvalue of `XᵀX/n` by power iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhiMax {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

pub fn operator_norm_phi_max(x: &DesignMatrix) -> PhiMax {
    const TOL: f64 = 1e-10;
    const MAX_ITER: usize = 10_000;
    let p = x.p();
    let n = x.n() as f64;
    let m = x.matrix();
    // Uneven start so it is not orthogonal to the leading eigenvector by symmetry.
    let mut v = DVector::from_fn(p, |j, _| 1.0 + j as f64 / p as f64);
    v.normalize_mut();
    let mut value = 0.0;
    for it in 1..=MAX_ITER {
        let xv = m * &v;
        let w = m.tr_mul(&xv) / n;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return PhiMax {
                value: 0.0,
                converged: true,
                iterations: it,
            };
        }
        v = w / norm;
        if (next - value).abs() <= TOL * next.abs().max(f64::MIN_POSITIVE) {
            return PhiMax {
                value: next,
                converged: true,
                iterations: it,
            };
        }
        value = next;
    }
    log::warn!("power iteration hit the {MAX_ITER} iteration cap");
    PhiMax {
        value,
        converged: false,
        iterations: MAX_ITER,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dm(rows: &[Vec<f64>]) -> DesignMatrix {
        DesignMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn empty_support_projects_to_zero() {
        let x = dm(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![0.5, -1.0]]);
        let y = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let r = project(&x, &Support::empty(), &y).unwrap();
        assert_eq!(r.fitted, DVector::zeros(3));
        assert_eq!(r.residual, y);
        assert_eq!(r.rank, 0);
    }

    #[test]
    fn full_rank_square_span_reproduces_vector() {
        let s = 2f64.sqrt();
        let x = dm(&[vec![s, 0.0], vec![0.0, s]]);
        let v = DVector::from_vec(vec![3.0, 4.0]);
        let r = project(&x, &Support::full(2), &v).unwrap();
        assert_relative_eq!(r.fitted, v, epsilon = 1e-12);
        assert!(r.residual.norm() < 1e-12);
    }

    #[test]
    fn single_constant_column_gives_mean() {
        let x = dm(&[vec![1.0], vec![1.0], vec![1.0]]);
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let r = project(&x, &Support::full(1), &v).unwrap();
        assert_relative_eq!(r.fitted, DVector::from_element(3, 2.0), epsilon = 1e-12);
    }

    #[test]
    fn duplicated_columns_drop_rank() {
        let x = dm(&[
            vec![1.0, 1.0, 0.0],
            vec![2.0, 2.0, 1.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 1.0, 3.0],
        ]);
        let v = DVector::from_vec(vec![1.0, 0.0, 2.0, -1.0]);
        let r = project(&x, &Support::full(3), &v).unwrap();
        assert_eq!(r.rank, 2);
        let r13 = project(&x, &Support::new([0, 2]).unwrap(), &v).unwrap();
        assert_eq!(r13.rank, 2);
        assert_relative_eq!(r.fitted, r13.fitted, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let x = dm(&[vec![1.0], vec![2.0]]);
        let short = DVector::from_vec(vec![1.0]);
        assert!(project(&x, &Support::full(1), &short).is_err());
        let nan = DVector::from_vec(vec![1.0, f64::NAN]);
        assert!(project(&x, &Support::full(1), &nan).is_err());
        assert!(project(&x, &Support::new([1]).unwrap(), &DVector::zeros(2)).is_err());
        assert!(DesignMatrix::from_rows(&[vec![1.0, f64::INFINITY]]).is_err());
        assert!(DesignMatrix::from_rows(&[vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(Support::new([1, 1]).is_err());
    }

    #[test]
    fn phi_max_examples() {
        let x = dm(&[vec![1.0], vec![1.0], vec![1.0], vec![1.0]]);
        assert_relative_eq!(operator_norm_phi_max(&x).value, 1.0, epsilon = 1e-9);

        let id = DesignMatrix::new(DMatrix::identity(3, 3) * 3f64.sqrt()).unwrap();
        assert_relative_eq!(operator_norm_phi_max(&id).value, 1.0, epsilon = 1e-9);

        // Columns with squared norm n = 2 and inner product 2ρ, so Gram/n = [[1, ρ], [ρ, 1]].
        let rho: f64 = 0.5;
        let c = (1.0 - rho * rho).sqrt();
        let x = dm(&[
            vec![2f64.sqrt(), rho * 2f64.sqrt()],
            vec![0.0, c * 2f64.sqrt()],
        ]);
        let phi = operator_norm_phi_max(&x);
        assert!(phi.converged);
        assert_relative_eq!(phi.value, 1.5, epsilon = 1e-9);
    }

    #[test]
    fn support_serializes_one_based() {
        let s = Support::new([3, 0]).unwrap();
        assert_eq!(serde_json::to_string(&s).unwrap(), "[1,4]");
        assert_eq!(s.to_string(), "{1,4}");
        let back: Support = serde_json::from_str("[1,4]").unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn cache_reuses_factorizations() {
        let x = dm(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 2.0]]);
        let cache = ProjectionCache::new();
        let t = Support::full(2);
        let a = cache.projector(&x, &t).unwrap();
        let b = cache.projector(&x, &t).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(cache.len(), 1);
    }
}
