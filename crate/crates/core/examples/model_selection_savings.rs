//! Procurement cost of serving per-query constraints with the cheapest
//! feasible model versus always the most accurate one.
//!
//! `cargo run --release --example model_selection_savings`

use std::collections::BTreeMap;
use std::path::Path;

use infersim::Experiment;

fn main() -> infersim::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/experiments");
    let paragon = Experiment::load(dir.join("workload2.json"))?;
    let naive = Experiment::load(dir.join("workload2_naive.json"))?;

    let (_, queries) = paragon.workload(0)?;
    let mut per_model: BTreeMap<&str, usize> = BTreeMap::new();
    for q in &queries {
        *per_model.entry(&q.model_name).or_default() += 1;
    }
    println!("constraint-aware assignment: {per_model:?}");

    for (a, b) in paragon.run()?.iter().zip(naive.run()?.iter()) {
        let (pc, nc) = (a.total_cost.to_f64(), b.total_cost.to_f64());
        println!(
            "{:<9} cost {pc:.4} vs naive {nc:.4}  saving {:.1}%  violations {:.2}% vs {:.2}%",
            a.policy_name,
            100.0 * (1.0 - pc / nc),
            a.slo_violation_pct,
            b.slo_violation_pct
        );
    }
    Ok(())
}
