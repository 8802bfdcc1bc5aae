//! Q-aggregation over all 2^p supports against the Lasso path family.
//!
//! `cargo run --release --example exhaustive_spa`

use lasso_agg::aggregation::{q_objective, AggregationResult, Method, QaggOptions, SimplexWeights};
use lasso_agg::path::PathOptions;
use lasso_agg::pipelines::path_aggregate;
use lasso_agg::simulation::{
    exhaustive_spa, generate_instance, DesignKind, InstanceSpec, NoiseKind,
};

fn main() -> lasso_agg::Result<()> {
    let spec = InstanceSpec {
        n: 25,
        p: 8,
        s: 2,
        sigma: 0.7,
        design: DesignKind::IidGaussian,
        noise: NoiseKind::Gaussian,
    };
    let s2 = spec.sigma * spec.sigma;
    for seed in 0..5 {
        let inst = generate_instance(&spec, seed)?;
        let (family, spa) = exhaustive_spa(&inst.x, &inst.y, s2, QaggOptions::default())?;
        let report = path_aggregate(
            &inst.x,
            &inst.y,
            s2,
            Method::Q,
            PathOptions::default(),
            QaggOptions::default(),
        )?;
        let AggregationResult::Q(q) = &report.result else {
            unreachable!()
        };

        let pre = lasso_agg::aggregation::precompute(&inst.x, &inst.y, &report.family, None)?;
        let best_vertex = (0..pre.len())
            .map(|k| q_objective(&SimplexWeights::vertex(pre.len(), k), &pre, s2))
            .collect::<lasso_agg::Result<Vec<_>>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        println!(
            "seed {seed}: all {} supports H = {:.5}  <=  path ({} supports) H = {:.5}  <=  best single support {:.5}",
            family.len(),
            spa.objective,
            report.family.len(),
            q.objective,
            best_vertex
        );
    }
    Ok(())
}
