use lasso_agg::aggregation::{
    aggregate_estimators, crit_select, crit_value, precompute, q_aggregate, q_objective,
    simplex_project, Method, QaggOptions, SimplexWeights,
};
use lasso_agg::model::{project, Support};
use lasso_agg::path::{grid_support_family, FamilySource, SupportFamily};
use lasso_agg::solvers::{lasso_cd, CdOptions};
use lasso_agg::weights::log_inv_weight;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{
    direct_h, direct_h_from_fits, grid_minimum, normal_equations_fit, random_family,
    random_instance, two_atom_minimum,
};

const STRICT: QaggOptions = QaggOptions {
    tol_gap: Some(1e-9),
    max_iter: 200_000,
};

#[test]
fn gram_form_matches_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..20 {
        let (x, y) = random_instance(seed, 20, 8);
        let supports = random_family(&mut rng, 8, 3);
        let fam = SupportFamily::new(FamilySource::External, supports.clone());
        let pre = precompute(&x, &y, &fam, None).unwrap();
        let raw: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
        let theta = simplex_project(&raw);
        let s2 = rng.random_range(0.0..2.0);
        let gram = q_objective(&theta, &pre, s2).unwrap();
        let direct = direct_h(&x, y.values(), &supports, theta.as_slice(), s2);
        assert!(
            (gram - direct).abs() <= 1e-9 * direct.abs(),
            "{gram} vs {direct}"
        );
    }
}

#[test]
fn two_atoms_match_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..30 {
        let (x, y) = random_instance(100 + seed, 15, 6);
        let supports = random_family(&mut rng, 6, 2);
        let s2 = rng.random_range(0.0..0.5);
        let fits: Vec<DVector<f64>> = supports
            .iter()
            .map(|t| normal_equations_fit(&x, t, y.values()))
            .collect();
        let best = two_atom_minimum(|t| {
            direct_h_from_fits(&fits, y.values(), &supports, 6, &[t, 1.0 - t], s2)
        });

        let fam = SupportFamily::new(FamilySource::External, supports.clone());
        let pre = precompute(&x, &y, &fam, None).unwrap();
        let q = q_aggregate(&pre, s2, STRICT).unwrap();
        assert!(
            q.converged,
            "seed {seed} gap {} it {} H {} best {best} theta {:?}",
            q.fw_gap, q.iterations, q.objective, q.theta_hat
        );
        assert!(
            (q.objective - best).abs() <= 1e-8,
            "seed {seed}: {} vs {best}",
            q.objective
        );
    }
}

#[test]
fn three_atoms_match_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..5 {
        let (x, y) = random_instance(200 + seed, 12, 5);
        let supports = random_family(&mut rng, 5, 3);
        let s2 = rng.random_range(0.0..0.3);
        let fits: Vec<DVector<f64>> = supports
            .iter()
            .map(|t| normal_equations_fit(&x, t, y.values()))
            .collect();
        let grid = grid_minimum(|th| direct_h_from_fits(&fits, y.values(), &supports, 5, th, s2));
        let fam = SupportFamily::new(FamilySource::External, supports.clone());
        let pre = precompute(&x, &y, &fam, None).unwrap();
        let q = q_aggregate(&pre, s2, QaggOptions::default()).unwrap();
        assert!(q.converged);
        assert!(q.fw_gap <= 1e-8 * (1.0 + q.objective.abs()));
        assert!(
            (q.objective - grid).abs() <= 1e-6,
            "seed {seed}: {} vs {grid}",
            q.objective
        );
    }
}

#[test]
fn certificate_and_vertex_domination() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for seed in 0..20 {
        let (x, y) = random_instance(300 + seed, 25, 10);
        let m = rng.random_range(2..12);
        let supports = random_family(&mut rng, 10, m);
        let fam = SupportFamily::new(FamilySource::External, supports);
        let pre = precompute(&x, &y, &fam, None).unwrap();
        let s2 = rng.random_range(0.0..1.0);
        let q = q_aggregate(&pre, s2, QaggOptions::default()).unwrap();
        let tol = 1e-8 * (1.0 + q.objective.abs());
        assert!(q.converged && q.fw_gap <= tol);
        for k in 0..pre.len() {
            let hk = q_objective(&SimplexWeights::vertex(pre.len(), k), &pre, s2).unwrap();
            assert!(q.objective <= hk + tol);
        }
        let recomputed = q_objective(&q.theta_hat, &pre, s2).unwrap();
        assert!((recomputed - q.objective).abs() <= 1e-9 * (1.0 + recomputed.abs()));
    }
}

#[test]
fn crit_matches_brute_force_and_ignores_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for seed in 0..20 {
        let (x, y) = random_instance(400 + seed, 20, 8);
        let m = rng.random_range(1..10);
        let mut supports = random_family(&mut rng, 8, m);
        let s2 = rng.random_range(0.0..1.5);
        let brute = supports
            .iter()
            .map(|t| {
                let r = (y.values() - normal_equations_fit(&x, t, y.values())).norm_squared();
                (
                    crit_value(r, log_inv_weight(8, t.size()).unwrap(), s2),
                    t.clone(),
                )
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap();
        let fam = SupportFamily::new(FamilySource::External, supports.clone());
        let c = crit_select(&precompute(&x, &y, &fam, None).unwrap(), s2);
        assert_eq!(c.chosen, brute.1);
        assert!((c.crit_value - brute.0).abs() <= 1e-9 * brute.0);

        supports.reverse();
        let fam = SupportFamily::new(FamilySource::External, supports);
        let c2 = crit_select(&precompute(&x, &y, &fam, None).unwrap(), s2);
        assert_eq!(c2.chosen, c.chosen);
    }
}

#[test]
fn crit_ties_prefer_smaller_then_lexicographic() {
    // Orthogonal columns with equal correlation to y give equal residuals.
    let x = lasso_agg::model::DesignMatrix::from_rows(&[
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
        vec![0.0, 0.0, 0.0],
    ])
    .unwrap();
    let y = lasso_agg::model::ResponseVector::new(vec![1.0, 1.0, 0.0, 0.5]).unwrap();
    let a = Support::new([0]).unwrap();
    let b = Support::new([1]).unwrap();
    let c = Support::new([0, 2]).unwrap();
    for order in [
        vec![b.clone(), a.clone(), c.clone()],
        vec![c.clone(), a.clone(), b.clone()],
    ] {
        let fam = SupportFamily::new(FamilySource::External, order);
        let r = crit_select(&precompute(&x, &y, &fam, None).unwrap(), 0.0);
        assert_eq!(r.chosen, a);
    }
}

#[test]
fn least_squares_beats_any_coefficients_on_support() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for seed in 0..20 {
        let (x, y) = random_instance(500 + seed, 15, 10);
        let t = random_family(&mut rng, 10, 1).pop().unwrap();
        let ls = project(&x, &t, y.values()).unwrap().residual.norm();
        for _ in 0..10 {
            let mut b = vec![0.0; 10];
            for &j in t.indices() {
                b[j] = rng.random_range(-3.0..3.0);
            }
            assert!(ls <= (y.values() - x.mul(&b)).norm() + 1e-12);
        }
    }
}

#[test]
fn estimators_route_through_supports() {
    let (x, y) = random_instance(600, 30, 12);
    let lam_max = x.lambda_max(&y);
    let grid: Vec<f64> = (0..8).map(|j| lam_max * 0.6f64.powi(j)).collect();
    let g = grid_support_family(&x, &y, &grid, CdOptions::default()).unwrap();
    let mut betas: Vec<Vec<f64>> = vec![vec![0.0; 12]];
    let mut warm: Option<Vec<f64>> = None;
    for &l in &grid {
        let fit = lasso_cd(&x, &y, l, CdOptions::default(), warm.as_deref()).unwrap();
        warm = Some(fit.beta.clone());
        betas.push(fit.beta);
    }
    let (fam, res) =
        aggregate_estimators(&x, &y, &betas, 0.8, Method::Q, QaggOptions::default()).unwrap();
    let mut a: Vec<_> = fam.supports().to_vec();
    let mut b: Vec<_> = g.family.supports().to_vec();
    a.sort();
    b.sort();
    assert_eq!(a, b);
    let direct = q_aggregate(
        &precompute(&x, &y, &g.family, None).unwrap(),
        0.8,
        QaggOptions::default(),
    )
    .unwrap();
    let lasso_agg::aggregation::AggregationResult::Q(r) = res else {
        panic!()
    };
    assert!((r.objective - direct.objective).abs() <= 1e-8 * (1.0 + direct.objective.abs()));
}

proptest! {
    #[test]
    fn projection_lands_on_simplex(v in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        let p = simplex_project(&v);
        let s: f64 = p.as_slice().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(p.as_slice().iter().all(|&t| t >= 0.0));
        // KKT: v - θ is constant on the support and no larger off it.
        let tau = p.as_slice().iter().zip(&v).find(|(t, _)| **t > 0.0).map(|(t, x)| x - t).unwrap();
        for (t, x) in p.as_slice().iter().zip(&v) {
            if *t > 0.0 {
                prop_assert!((x - t - tau).abs() < 1e-9);
            } else {
                prop_assert!(*x <= tau + 1e-9);
            }
        }
    }

    #[test]
    fn projection_is_idempotent(v in prop::collection::vec(-5.0f64..5.0, 1..12)) {
        let once = simplex_project(&v);
        let twice = simplex_project(once.as_slice());
        for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
