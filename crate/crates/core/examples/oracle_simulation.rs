//! Monte Carlo coverage of the oracle bounds on the standard sparse design.
//!
//! Run with `cargo run --release --example oracle_simulation -- [reps] [threads]`.

use std::time::Instant;

use lasso_agg::aggregation::Method;
use lasso_agg::simulation::{monte_carlo, TrialConfig};

fn main() -> lasso_agg::Result<()> {
    let mut args = std::env::args().skip(1);
    let reps: usize = args.next().map_or(50, |a| a.parse().expect("reps"));
    let threads: usize = args.next().map_or(4, |a| a.parse().expect("threads"));

    let mut config = TrialConfig::standard();
    config.seed = 7;
    for method in [Method::Q, Method::Crit] {
        config.method = method;
        let start = Instant::now();
        let report = monte_carlo(&config, reps, threads)?;
        println!(
            "{method:?}: held {}/{} (rate {:.3}), mean loss {:.4}, mean bound {:.4}, {:.1}s",
            report.held,
            report.reps,
            report.held_rate,
            report.mean_lhs,
            report.mean_rhs,
            start.elapsed().as_secs_f64()
        );
        let worst = report
            .trials
            .iter()
            .max_by(|a, b| (a.lhs / a.rhs).total_cmp(&(b.lhs / b.rhs)))
            .expect("at least one trial");
        println!(
            "  tightest replication: seed {} loss {:.4} bound {:.4} ({})",
            worst.seed, worst.lhs, worst.rhs, worst.minimizing_term
        );
    }
    Ok(())
}
