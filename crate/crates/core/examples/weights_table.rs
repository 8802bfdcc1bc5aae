//! Prior weights over sparsity patterns.
//!
//! `cargo run --example weights_table -- 12`

use lasso_agg::weights::{total_mass, verify_weight_bounds, weight_upper_bound, WeightTable};

fn main() -> lasso_agg::Result<()> {
    let p: usize = std::env::args()
        .nth(1)
        .map_or(12, |a| a.parse().expect("p"));
    let table = WeightTable::new(p)?;
    println!("p = {p}, log H_p = {:.6}", table.log_h_p);
    println!("{:>4} {:>12} {:>12}", "|T|", "log(1/pi)", "upper");
    for k in 0..=p {
        println!(
            "{k:>4} {:>12.6} {:>12.6}",
            table.get(k),
            weight_upper_bound(p, k)
        );
    }
    println!("bounds hold: {}", verify_weight_bounds(p));
    println!("total mass:  {:.15}", total_mass(p));
    Ok(())
}
