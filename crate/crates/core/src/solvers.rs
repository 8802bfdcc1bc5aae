//! Fixed-λ Lasso and square-root Lasso solvers.
//!
//! The Lasso objective is `(1/2n)‖y − Xβ‖² + λ‖β‖₁`, minimized by cyclic
//! coordinate descent. Convergence is certified by the Fenchel duality gap,
//! evaluated in a cancellation-free form:
//!
//! ```text
//! c   = Xᵀr / n,  s = min(1, λ / ‖c‖∞)
//! gap = (1 − s)²‖r‖² / 2n + Σ_j (λ|β_j| − s β_j c_j)
//! ```
//!
//! Every summand is nonnegative, so the gap stays meaningful near 1e-15.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{DesignMatrix, ResponseVector};

/// Stopping rule for coordinate descent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct CdOptions {
    /// Duality-gap tolerance.
    pub tol: f64,
    /// Maximum number of full cycles over the coordinates.
    pub max_iter: usize,
}

impl Default for CdOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LassoFit {
    pub beta: Vec<f64>,
    pub lambda: f64,
    pub duality_gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Soft-thresholding `sign(z)·max(|z| − t, 0)`.
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// `(1/2n)‖y − Xβ‖² + λ‖β‖₁`.
pub fn lasso_objective(x: &DesignMatrix, y: &ResponseVector, lambda: f64, beta: &[f64]) -> f64 {
    let r = y.values() - x.mul(beta);
    r.norm_squared() / (2.0 * x.n() as f64) + lambda * l1(beta)
}

fn l1(beta: &[f64]) -> f64 {
    beta.iter().map(|b| b.abs()).sum()
}

/// Fenchel duality gap of the Lasso at `β` given its residual.
pub fn duality_gap(x: &DesignMatrix, lambda: f64, beta: &[f64], residual: &DVector<f64>) -> f64 {
    let n = x.n() as f64;
    let c = x.correlations(residual);
    let cmax = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let s = if cmax > lambda { lambda / cmax } else { 1.0 };
    let mut gap = (1.0 - s).powi(2) * residual.norm_squared() / (2.0 * n);
    for (b, cj) in beta.iter().zip(&c) {
        gap += lambda * b.abs() - s * b * cj;
    }
    gap.max(0.0)
}

fn check_lasso_inputs(x: &DesignMatrix, y: &ResponseVector, lambda: f64) -> Result<()> {
    y.check_against(x)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return invalid(format!("lambda must be positive and finite, got {lambda}"));
    }
    Ok(())
}

/// Lasso at fixed `λ` by cyclic coordinate descent, optionally warm-started.
pub fn lasso_cd(
    x: &DesignMatrix,
    y: &ResponseVector,
    lambda: f64,
    opts: CdOptions,
    warm_start: Option<&[f64]>,
) -> Result<LassoFit> {
    check_lasso_inputs(x, y, lambda)?;
    if !(opts.tol > 0.0) {
        return invalid("coordinate descent tolerance must be positive");
    }
    let p = x.p();
    let n = x.n() as f64;
    let mut beta = match warm_start {
        Some(b) if b.len() != p => {
            return invalid(format!("warm start has length {}, expected {p}", b.len()))
        }
        Some(b) => b.to_vec(),
        None => vec![0.0; p],
    };
    let scaled_norms: Vec<f64> = x.column_norms_sq().iter().map(|s| s / n).collect();
    let m = x.matrix();
    let mut residual = y.values() - x.mul(&beta);

    let mut gap = duality_gap(x, lambda, &beta, &residual);
    if gap <= opts.tol {
        return Ok(LassoFit {
            beta,
            lambda,
            duality_gap: gap,
            iterations: 0,
            converged: true,
        });
    }
    #[cfg(debug_assertions)]
    let mut last_obj = residual.norm_squared() / (2.0 * n) + lambda * l1(&beta);

    for cycle in 1..=opts.max_iter {
        for j in 0..p {
            let col = m.column(j);
            if scaled_norms[j] == 0.0 {
                // A zero column never moves the fit; its optimal coefficient is 0.
                beta[j] = 0.0;
                continue;
            }
            let old = beta[j];
            let rho = col.dot(&residual) / n + scaled_norms[j] * old;
            let new = soft_threshold(rho, lambda) / scaled_norms[j];
            if new != old {
                residual.axpy(old - new, &col, 1.0);
                beta[j] = new;
            }
        }
        #[cfg(debug_assertions)]
        {
            let obj = residual.norm_squared() / (2.0 * n) + lambda * l1(&beta);
            debug_assert!(
                obj <= last_obj + 1e-12 * (1.0 + last_obj.abs()),
                "coordinate descent objective increased: {last_obj} -> {obj}"
            );
            last_obj = obj;
        }
        // Refresh the residual now and then to shed accumulated round-off.
        if cycle % 64 == 0 {
            residual = y.values() - x.mul(&beta);
        }
        gap = duality_gap(x, lambda, &beta, &residual);
        if gap <= opts.tol {
            return Ok(LassoFit {
                beta,
                lambda,
                duality_gap: gap,
                iterations: cycle,
                converged: true,
            });
        }
    }
    log::debug!(
        "lasso_cd: gap {gap:e} above tol after {} cycles",
        opts.max_iter
    );
    Ok(LassoFit {
        beta,
        lambda,
        duality_gap: gap,
        iterations: opts.max_iter,
        converged: false,
    })
}

/// Outcome of a first-order optimality check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KktReport {
    pub passed: bool,
    pub worst_violation: f64,
}

/// Checks `|X_jᵀr/n| ≤ λ` everywhere and `X_jᵀr/n = λ·sign(β_j)` on the support.
pub fn kkt_check(
    x: &DesignMatrix,
    y: &ResponseVector,
    lambda: f64,
    beta: &[f64],
    tol: f64,
) -> KktReport {
    let residual = y.values() - x.mul(beta);
    let c = x.correlations(&residual);
    let worst = beta
        .iter()
        .zip(&c)
        .map(|(&b, &cj)| {
            if b != 0.0 {
                (cj - lambda * b.signum()).abs()
            } else {
                (cj.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0f64, f64::max);
    KktReport {
        passed: worst <= tol,
        worst_violation: worst,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct SqrtLassoOptions {
    /// Relative tolerance on successive noise-level iterates.
    pub tol: f64,
    /// Maximum number of noise-level updates.
    pub max_iter: usize,
    /// Inner Lasso solves.
    pub inner: CdOptions,
}

impl Default for SqrtLassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 1_000,
            inner: CdOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SqrtLassoFit {
    pub beta: Vec<f64>,
    pub lambda: f64,
    /// `‖y − Xβ̂‖² / n`.
    pub sigma_hat_sq: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `‖y − Xβ‖/√n + λ‖β‖₁`.
pub fn sqrt_lasso_objective(
    x: &DesignMatrix,
    y: &ResponseVector,
    lambda: f64,
    beta: &[f64],
) -> f64 {
    let r = y.values() - x.mul(beta);
    r.norm() / (x.n() as f64).sqrt() + lambda * l1(beta)
}

/// Square-root Lasso by the scaled-Lasso alternation
/// `σ ← ‖y − Xβ‖/√n`, `β ← lasso(λσ)`.
///
/// Fails with [`Error::DegenerateVariance`] when the residual collapses
/// (the fit interpolates `y`), since the noise-level estimate is then zero.
pub fn sqrt_lasso(
    x: &DesignMatrix,
    y: &ResponseVector,
    lambda: f64,
    opts: SqrtLassoOptions,
    warm_start: Option<&[f64]>,
) -> Result<SqrtLassoFit> {
    check_lasso_inputs(x, y, lambda)?;
    let root_n = (x.n() as f64).sqrt();
    let floor = 1e-12 * y.values().norm() / root_n;
    let mut beta = match warm_start {
        Some(b) if b.len() != x.p() => {
            return invalid(format!(
                "warm start has length {}, expected {}",
                b.len(),
                x.p()
            ))
        }
        Some(b) => b.to_vec(),
        None => vec![0.0; x.p()],
    };
    let degenerate = |sigma: f64| {
        Error::DegenerateVariance(format!(
            "residual scale {sigma:e} fell to the floor {floor:e} at lambda = {lambda}"
        ))
    };

    let mut sigma = (y.values() - x.mul(&beta)).norm() / root_n;
    if sigma <= floor {
        return Err(degenerate(sigma));
    }
    for it in 1..=opts.max_iter {
        // The Lasso objective scales like σ²; keep the gap tolerance relative to it.
        let inner = CdOptions {
            tol: opts.inner.tol * sigma.powi(2).min(1.0),
            ..opts.inner
        };
        let fit = lasso_cd(x, y, lambda * sigma, inner, Some(&beta))?;
        beta = fit.beta;
        let next = (y.values() - x.mul(&beta)).norm() / root_n;
        if next <= floor {
            return Err(degenerate(next));
        }
        let done = (next - sigma).abs() <= opts.tol * sigma;
        sigma = next;
        if done {
            return Ok(SqrtLassoFit {
                beta,
                lambda,
                sigma_hat_sq: sigma * sigma,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(SqrtLassoFit {
        beta,
        lambda,
        sigma_hat_sq: sigma * sigma,
        iterations: opts.max_iter,
        converged: false,
    })
}

/// Universal square-root Lasso parameter at confidence level 0.01:
/// `2·√(log(p/0.01)/n)`.
pub fn sqrt_lasso_universal_lambda(n: usize, p: usize) -> f64 {
    2.0 * ((p as f64 / 0.01).ln() / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn scalar() -> (DesignMatrix, ResponseVector) {
        (
            DesignMatrix::from_rows(&[vec![1.0]]).unwrap(),
            ResponseVector::new(vec![3.0]).unwrap(),
        )
    }

    #[test]
    fn scalar_lasso() {
        let (x, y) = scalar();
        let fit = lasso_cd(&x, &y, 1.0, CdOptions::default(), None).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.beta[0], 2.0, epsilon = 1e-12);
        let k = kkt_check(&x, &y, 1.0, &fit.beta, 1e-12);
        assert!(k.passed && k.worst_violation <= 1e-12);
        assert!(!kkt_check(&x, &y, 1.0, &[2.1], 1e-6).passed);
    }

    #[test]
    fn zero_at_lambda_max() {
        let x =
            DesignMatrix::from_rows(&[vec![1.0, 0.5], vec![-0.3, 2.0], vec![0.7, 0.1]]).unwrap();
        let y = ResponseVector::new(vec![1.0, 2.0, -1.0]).unwrap();
        let lmax = x.lambda_max(&y);
        let fit = lasso_cd(&x, &y, lmax, CdOptions::default(), None).unwrap();
        assert!(fit.beta.iter().all(|&b| b == 0.0));
        assert!(kkt_check(&x, &y, lmax, &[0.0, 0.0], 1e-12).passed);
    }

    #[test]
    fn zero_column_is_skipped() {
        let x = DesignMatrix::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let y = ResponseVector::new(vec![1.0, 1.0]).unwrap();
        let fit = lasso_cd(&x, &y, 0.1, CdOptions::default(), Some(&[0.0, 5.0])).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.beta[1], 0.0);
    }

    #[test]
    fn rejects_nonpositive_lambda() {
        let (x, y) = scalar();
        assert!(lasso_cd(&x, &y, 0.0, CdOptions::default(), None).is_err());
        assert!(sqrt_lasso(&x, &y, -1.0, SqrtLassoOptions::default(), None).is_err());
    }

    #[test]
    fn nonconvergence_is_reported() {
        let x = DesignMatrix::new(DMatrix::from_fn(6, 4, |i, j| {
            ((i * 7 + j * 3) % 5) as f64 - 2.0 + 0.1 * j as f64
        }))
        .unwrap();
        let y = ResponseVector::new(vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.5]).unwrap();
        let fit = lasso_cd(
            &x,
            &y,
            1e-3,
            CdOptions {
                tol: 1e-300,
                max_iter: 3,
            },
            None,
        )
        .unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 3);
    }

    #[test]
    fn sqrt_lasso_null_fit() {
        let x = DesignMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let y = ResponseVector::new(vec![1.0, -1.0, 0.5]).unwrap();
        let n = 3.0f64;
        let xty = x.lambda_max(&y) * n;
        let lam = xty * n.sqrt() / (y.values().norm() * n) * 1.01;
        let fit = sqrt_lasso(&x, &y, lam, SqrtLassoOptions::default(), None).unwrap();
        assert!(fit.beta.iter().all(|&b| b == 0.0));
        assert_relative_eq!(
            fit.sigma_hat_sq,
            y.values().norm_squared() / n,
            epsilon = 1e-14
        );
    }

    #[test]
    fn sqrt_lasso_scalar_interpolates() {
        let (x, y) = scalar();
        let err = sqrt_lasso(&x, &y, 0.5, SqrtLassoOptions::default(), None).unwrap_err();
        assert!(matches!(err, Error::DegenerateVariance(_)));
        let zero = ResponseVector::new(vec![0.0]).unwrap();
        assert!(matches!(
            sqrt_lasso(&x, &zero, 0.5, SqrtLassoOptions::default(), None),
            Err(Error::DegenerateVariance(_))
        ));
    }

    #[test]
    fn universal_lambda() {
        assert_relative_eq!(
            sqrt_lasso_universal_lambda(100, 100),
            0.606_970_851_754,
            epsilon = 1e-10
        );
        assert_relative_eq!(sqrt_lasso_universal_lambda(1, 1), 4.291_932, epsilon = 1e-6);
        assert_relative_eq!(
            sqrt_lasso_universal_lambda(400, 50),
            sqrt_lasso_universal_lambda(100, 50) / 2.0,
            epsilon = 1e-15
        );
    }
}
