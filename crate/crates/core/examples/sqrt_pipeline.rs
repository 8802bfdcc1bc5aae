//! The tuning-free pipeline: square-root Lasso grid, variance at the top of
//! the grid, then aggregation of the grid supports.
//!
//! `cargo run --example sqrt_pipeline`

use lasso_agg::aggregation::Method;
use lasso_agg::pipelines::{
    geometric_grid, sqrt_lasso_pipeline, GridMode, PipelineMeta, SqrtPipelineOptions,
};
use lasso_agg::simulation::{generate_instance, DesignKind, InstanceSpec, NoiseKind};

fn main() -> lasso_agg::Result<()> {
    let spec = InstanceSpec {
        n: 400,
        p: 100,
        s: 5,
        sigma: 0.8,
        design: DesignKind::Equicorrelated { rho: 0.6 },
        noise: NoiseKind::Gaussian,
    };
    let inst = generate_instance(&spec, 5)?;
    let n = inst.x.n() as f64;

    println!(
        "spanning grid (0.1, 10, M = 3): {:?}",
        geometric_grid(0.1, 10.0, 3, GridMode::Spanning)?
    );
    println!(
        "literal grid  (0.1, 10, M = 3): {:?}",
        geometric_grid(0.1, 10.0, 3, GridMode::PaperLiteral)?
    );

    for method in [Method::Q, Method::Crit] {
        let opts = SqrtPipelineOptions {
            method,
            ..Default::default()
        };
        let report = sqrt_lasso_pipeline(&inst.x, &inst.y, opts)?;
        let loss = (report.result.mu_hat() - &inst.mu).norm_squared() / n;
        println!(
            "{method:?}: sigma_hat^2 = {:.4} (true {:.4}), {} supports, loss {loss:.4}",
            report.sigma_hat_sq,
            spec.sigma * spec.sigma,
            report.family.len()
        );
        if let PipelineMeta::Grid(g) = &report.meta {
            for e in g.entries.iter().step_by(5) {
                let size = e.support.as_ref().map_or(0, |s| s.size());
                println!("  lambda {:.4}  |T| = {size:>2}  {:?}", e.lambda, e.status);
            }
        }
    }
    Ok(())
}
