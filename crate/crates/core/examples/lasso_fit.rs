//! Coordinate descent for a single Lasso problem, with its optimality
//! certificate, and the square-root Lasso at the universal parameter.
//!
//! `cargo run --example lasso_fit`

use lasso_agg::model::Support;
use lasso_agg::simulation::{generate_instance, DesignKind, InstanceSpec, NoiseKind};
use lasso_agg::solvers::{
    kkt_check, lasso_cd, soft_threshold, sqrt_lasso, sqrt_lasso_universal_lambda, CdOptions,
    SqrtLassoOptions,
};

fn main() -> lasso_agg::Result<()> {
    let spec = InstanceSpec {
        n: 80,
        p: 40,
        s: 4,
        sigma: 0.5,
        design: DesignKind::IidGaussian,
        noise: NoiseKind::Gaussian,
    };
    let inst = generate_instance(&spec, 3)?;
    let lambda = 0.3 * inst.x.lambda_max(&inst.y);
    let fit = lasso_cd(&inst.x, &inst.y, lambda, CdOptions::default(), None)?;
    let kkt = kkt_check(&inst.x, &inst.y, lambda, &fit.beta, 1e-7);
    println!(
        "lambda = {lambda:.4}: {} cycles, gap {:.2e}, KKT violation {:.2e}",
        fit.iterations, fit.duality_gap, kkt.worst_violation
    );
    println!("  estimated support {}", Support::of_beta(&fit.beta));
    println!("  true support      {}", Support::of_beta(&inst.beta_star));

    // With orthonormal columns the Lasso is soft-thresholding of Xᵀy/n.
    let spec = InstanceSpec {
        n: 200,
        p: 10,
        design: DesignKind::Orthonormal,
        ..spec
    };
    let inst = generate_instance(&spec, 4)?;
    let z = inst.x.correlations(inst.y.values());
    let fit = lasso_cd(
        &inst.x,
        &inst.y,
        0.2,
        CdOptions {
            tol: 1e-14,
            ..Default::default()
        },
        None,
    )?;
    let err = z
        .iter()
        .zip(&fit.beta)
        .map(|(zj, b)| (soft_threshold(*zj, 0.2) - b).abs())
        .fold(0.0, f64::max);
    println!("orthonormal design: max deviation from soft-thresholding {err:.2e}");

    let lam = sqrt_lasso_universal_lambda(inst.x.n(), inst.x.p());
    let sq = sqrt_lasso(&inst.x, &inst.y, lam, SqrtLassoOptions::default(), None)?;
    println!(
        "square-root Lasso at lambda = {lam:.4}: sigma_hat^2 = {:.4} (true {:.4}), support {}",
        sq.sigma_hat_sq,
        spec.sigma * spec.sigma,
        Support::of_beta(&sq.beta)
    );
    Ok(())
}
