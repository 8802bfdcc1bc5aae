//! The exact Lasso path and the supports it visits.
//!
//! `cargo run --example lasso_path`

use lasso_agg::path::{compute_path, path_support_family, PathOptions};
use lasso_agg::pipelines::path_profile;
use lasso_agg::simulation::{generate_instance, DesignKind, InstanceSpec, NoiseKind};

fn main() -> lasso_agg::Result<()> {
    let spec = InstanceSpec {
        n: 30,
        p: 12,
        s: 3,
        sigma: 0.5,
        design: DesignKind::Equicorrelated { rho: 0.4 },
        noise: NoiseKind::Gaussian,
    };
    let inst = generate_instance(&spec, 11)?;
    let path = compute_path(&inst.x, &inst.y, PathOptions::default())?;
    println!(
        "{} knots, truncated: {}, degenerate: {}",
        path.knots.len(),
        path.truncated,
        path.degenerate
    );
    for (k, (lam, support)) in path.knots.iter().zip(&path.supports).enumerate() {
        println!("{k:>3}  below {lam:>10.6}  {support}");
    }

    let family = path_support_family(&path);
    println!("{} distinct supports (with the empty one)", family.len());

    println!("\n{:>10} {:>12} {:>5}", "lambda", "rss/n", "|T|");
    for row in path_profile(&inst.x, &inst.y, &path).iter().step_by(4) {
        println!(
            "{:>10.5} {:>12.6} {:>5}",
            row.lambda, row.loss_proxy, row.support_size
        );
    }

    let mid = 0.5 * path.lambda_zero();
    let beta = path.beta_at(mid).expect("inside the path");
    println!(
        "\nbeta at lambda = {mid:.4}: {:?}",
        beta.iter()
            .map(|b| (b * 1e4).round() / 1e4)
            .collect::<Vec<_>>()
    );
    Ok(())
}
