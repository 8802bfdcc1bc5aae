#![allow(dead_code)]

use lasso_agg::model::{DesignMatrix, ResponseVector, Support};
use lasso_agg::weights::log_inv_weight;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn random_instance(seed: u64, n: usize, p: usize) -> (DesignMatrix, ResponseVector) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y: Vec<f64> = (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    (
        DesignMatrix::new(x).unwrap(),
        ResponseVector::new(y).unwrap(),
    )
}

/// Least-squares fit through the normal equations (full column rank only).
pub fn normal_equations_fit(x: &DesignMatrix, t: &Support, v: &DVector<f64>) -> DVector<f64> {
    if t.size() == 0 {
        return DVector::zeros(v.len());
    }
    let xt = x.matrix().select_columns(t.indices());
    let g = xt.transpose() * &xt;
    let coef = g.lu().solve(&(xt.transpose() * v)).expect("full rank");
    xt * coef
}

/// `H(θ)` straight from its definition, with fits from the normal equations.
pub fn direct_h(
    x: &DesignMatrix,
    y: &DVector<f64>,
    supports: &[Support],
    theta: &[f64],
    s2: f64,
) -> f64 {
    let fits: Vec<DVector<f64>> = supports
        .iter()
        .map(|t| normal_equations_fit(x, t, y))
        .collect();
    direct_h_from_fits(&fits, y, supports, x.p(), theta, s2)
}

pub fn direct_h_from_fits(
    fits: &[DVector<f64>],
    y: &DVector<f64>,
    supports: &[Support],
    p: usize,
    theta: &[f64],
    s2: f64,
) -> f64 {
    let mut mu = DVector::zeros(y.len());
    for (t, f) in theta.iter().zip(fits) {
        mu += f * *t;
    }
    let pen: f64 = theta
        .iter()
        .zip(fits)
        .map(|(t, f)| t * (f - &mu).norm_squared())
        .sum();
    let k: f64 = theta
        .iter()
        .zip(supports)
        .map(|(t, s)| t * log_inv_weight(p, s.size()).unwrap())
        .sum();
    (&mu - y).norm_squared() + 0.5 * pen + 26.0 * s2 * k
}

pub fn random_family(rng: &mut ChaCha8Rng, p: usize, m: usize) -> Vec<Support> {
    let mut out: Vec<Support> = Vec::new();
    while out.len() < m {
        let size = rng.random_range(0..=p.min(4));
        let mut idx: Vec<usize> = (0..p).collect();
        for i in 0..size {
            let j = rng.random_range(i..p);
            idx.swap(i, j);
        }
        let t = Support::new(idx[..size].iter().copied()).unwrap();
        if !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

/// Exact minimum over `t ∈ [0, 1]` of a quadratic `h`, from three evaluations.
pub fn two_atom_minimum(h: impl Fn(f64) -> f64) -> f64 {
    let (h0, hm, h1) = (h(0.0), h(0.5), h(1.0));
    let a = 2.0 * (h1 - 2.0 * hm + h0);
    let b = h1 - h0 - a;
    let t_star = if a > 0.0 {
        (-b / (2.0 * a)).clamp(0.0, 1.0)
    } else if h1 < h0 {
        1.0
    } else {
        0.0
    };
    h(t_star)
}

/// Minimum of `f` over a barycentric grid of the 2-simplex, zoomed in twice.
pub fn grid_minimum(f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut best = (f64::INFINITY, 0.0, 0.0);
    let steps = 1000;
    for i in 0..=steps {
        for j in 0..=(steps - i) {
            let (a, b) = (i as f64 / steps as f64, j as f64 / steps as f64);
            let v = f(&[a, b, (1.0 - a - b).max(0.0)]);
            if v < best.0 {
                best = (v, a, b);
            }
        }
    }
    let mut width = 2e-3;
    for _ in 0..3 {
        let (_, ca, cb) = best;
        let k = 200;
        for i in 0..=k {
            let a = (ca - width + 2.0 * width * i as f64 / k as f64).clamp(0.0, 1.0);
            for j in 0..=k {
                let b = (cb - width + 2.0 * width * j as f64 / k as f64).clamp(0.0, 1.0 - a);
                let v = f(&[a, b, (1.0 - a - b).max(0.0)]);
                if v < best.0 {
                    best = (v, a, b);
                }
            }
        }
        width /= 50.0;
    }
    best.0
}
