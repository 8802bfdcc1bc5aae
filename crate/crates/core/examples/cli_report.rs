//! Running the command-line workflow in-process: write CSV inputs, execute the
//! square-root pipeline twice with different thread counts, compare reports.
//!
//! `cargo run --example cli_report`

use lasso_agg::cli::{execute, CommandKind};
use lasso_agg::io::{canonical_json, load_matrix_csv, save_matrix_csv, save_vector_csv, RunConfig};
use lasso_agg::simulation::{generate_instance, DesignKind, InstanceSpec, NoiseKind};

fn main() -> lasso_agg::Result<()> {
    let dir = std::env::temp_dir().join(format!("lasso-agg-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let spec = InstanceSpec {
        n: 100,
        p: 50,
        s: 3,
        sigma: 1.0,
        design: DesignKind::IidGaussian,
        noise: NoiseKind::Gaussian,
    };
    let inst = generate_instance(&spec, 42)?;
    let (xp, yp) = (dir.join("X.csv"), dir.join("y.csv"));
    save_matrix_csv(&xp, inst.x.matrix())?;
    save_vector_csv(&yp, inst.y.as_slice())?;
    assert_eq!(load_matrix_csv(&xp, false)?.matrix(), inst.x.matrix());

    let cfg = RunConfig {
        x_csv: Some(xp),
        y_csv: Some(yp),
        ..Default::default()
    };
    let one = execute(
        CommandKind::SqrtPipeline,
        &RunConfig {
            threads: Some(1),
            ..cfg.clone()
        },
    )?;
    let four = execute(
        CommandKind::SqrtPipeline,
        &RunConfig {
            threads: Some(4),
            ..cfg
        },
    )?;
    let (a, b) = (
        canonical_json(&one.results)?,
        canonical_json(&four.results)?,
    );
    println!("results identical across thread counts: {}", a == b);
    println!("sigma_hat_sq = {}", one.results["sigma_hat_sq"]);
    println!("family = {}", one.results["family"]["supports"]);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
