//! Sparsity-pattern prior weights.
//!
//! `π_T = (H_p · C(p, |T|) · e^{|T|})⁻¹` with `H_p = (e − e^{−p}) / (e − 1)`.
//! The weights sum to one over all `2^p` supports. Only `log(1/π_T)` is ever
//! materialized; `π_T` itself underflows long before `p` gets large.

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Result};

/// `log H_p`.
pub fn log_h(p: usize) -> f64 {
    let e = std::f64::consts::E;
    ((e - (-(p as f64)).exp()) / (e - 1.0)).ln()
}

/// `log C(p, k)` through the log-gamma function.
pub fn log_binomial(p: usize, k: usize) -> f64 {
    debug_assert!(k <= p);
    if k == 0 || k == p {
        return 0.0;
    }
    ln_gamma(p as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((p - k) as f64 + 1.0)
}

/// `log(1/π_T)` for any support of size `k` among `p` columns.
pub fn log_inv_weight(p: usize, k: usize) -> Result<f64> {
    if p == 0 {
        return invalid("p must be at least 1");
    }
    if k > p {
        return invalid(format!("support size {k} exceeds p = {p}"));
    }
    Ok(log_h(p) + log_binomial(p, k) + k as f64)
}

/// `log(1/π)` tabulated by support size.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightTable {
    pub p: usize,
    pub log_h_p: f64,
    pub log_inv_weight_by_size: Vec<f64>,
}

impl WeightTable {
    pub fn new(p: usize) -> Result<Self> {
        let log_inv_weight_by_size = (0..=p)
            .map(|k| log_inv_weight(p, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            p,
            log_h_p: log_h(p),
            log_inv_weight_by_size,
        })
    }

    pub fn get(&self, k: usize) -> f64 {
        self.log_inv_weight_by_size[k]
    }
}

/// Upper bound `1/2 + 2k·log(ep/(k ∨ 1))` on `log(1/π)` for size-`k` supports.
pub fn weight_upper_bound(p: usize, k: usize) -> f64 {
    let kk = k.max(1) as f64;
    0.5 + 2.0 * k as f64 * (std::f64::consts::E * p as f64 / kk).ln()
}

/// Checks `k ≤ log(1/π) ≤ 1/2 + 2k·log(ep/(k ∨ 1))` for every `k = 0..=p`.
pub fn verify_weight_bounds(p: usize) -> bool {
    if p == 0 {
        return false;
    }
    (0..=p).all(|k| {
        let l = log_inv_weight(p, k).expect("k in range");
        k as f64 <= l && l <= weight_upper_bound(p, k)
    })
}

/// `Σ_k C(p,k) π(k)`, which should equal one.
pub fn total_mass(p: usize) -> f64 {
    // Each term is e^{log C(p,k) - log(1/π_k)}; summed smallest first.
    let mut terms: Vec<f64> = (0..=p)
        .map(|k| (log_binomial(p, k) - log_inv_weight(p, k).expect("k in range")).exp())
        .collect();
    terms.sort_by(|a, b| a.total_cmp(b));
    terms.iter().sum()
}
