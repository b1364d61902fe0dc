//! Constraint-aware model selection against the accuracy-greedy baseline.
//!
//! `cargo run --example select_model`

use infersim::catalog::{select_model_naive, select_model_paragon};
use infersim::cloud::cost_per_million;
use infersim::{Catalog, ConstraintSet, RateCard};

fn main() -> infersim::Result<()> {
    let catalog = Catalog::bundled();
    let card = RateCard::bundled();
    let rate = 100.0;

    println!("{:>8} {:>8}  {:<22} {:>12}  naive", "acc>=", "lat<=", "paragon", "$/1M");
    for (acc, lat) in [(55.0, 100), (70.0, 100), (76.0, 300), (78.0, 500), (80.0, 1000), (85.0, 1000)] {
        let c = ConstraintSet::accuracy_latency(acc, lat);
        let pick = select_model_paragon(&catalog, &c, |m| cost_per_million(m, &card, rate, lat).unwrap())?;
        let naive = select_model_naive(&catalog, &c);
        println!(
            "{acc:>8} {lat:>8}  {:<22} {:>12}  {}{}",
            pick.model_name.as_deref().unwrap_or("(none)"),
            pick.estimated_cost_per_1m.map(|m| format!("{:.4}", m.to_f64())).unwrap_or_default(),
            naive.model_name.unwrap(),
            if naive.satisfied { "" } else { " (violates)" }
        );
    }
    Ok(())
}
