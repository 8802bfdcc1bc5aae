//! Q-aggregation and penalized selection over the Lasso path, known noise level.
//!
//! `cargo run --example aggregate_supports`

use lasso_agg::aggregation::{AggregationResult, Method, QaggOptions};
use lasso_agg::path::PathOptions;
use lasso_agg::pipelines::path_aggregate;
use lasso_agg::simulation::{generate_instance, DesignKind, InstanceSpec, NoiseKind};

fn main() -> lasso_agg::Result<()> {
    let spec = InstanceSpec {
        n: 400,
        p: 100,
        s: 4,
        sigma: 1.0,
        design: DesignKind::IidGaussian,
        noise: NoiseKind::Gaussian,
    };
    let inst = generate_instance(&spec, 21)?;
    let n = inst.x.n() as f64;
    let sigma_hat_sq = spec.sigma * spec.sigma;

    for method in [Method::Q, Method::Crit] {
        let report = path_aggregate(
            &inst.x,
            &inst.y,
            sigma_hat_sq,
            method,
            PathOptions::default(),
            QaggOptions::default(),
        )?;
        let loss = (report.result.mu_hat() - &inst.mu).norm_squared() / n;
        println!(
            "{method:?}: family of {} supports, loss {loss:.4}",
            report.family.len()
        );
        match &report.result {
            AggregationResult::Q(q) => {
                println!(
                    "  H = {:.4}, gap {:.1e}, {} iterations",
                    q.objective, q.fw_gap, q.iterations
                );
                for (t, w) in report.family.iter().zip(q.theta_hat.as_slice()) {
                    if *w > 1e-6 {
                        println!("  {w:.4}  |T| = {}", t.size());
                    }
                }
            }
            AggregationResult::Crit(c) => {
                println!("  chose {} (criterion {:.4})", c.chosen, c.crit_value)
            }
        }
        if method == Method::Q {
            println!(
                "  true support {}",
                lasso_agg::model::Support::of_beta(&inst.beta_star)
            );
        }
    }
    Ok(())
}
