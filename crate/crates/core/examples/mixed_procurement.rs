//! Serverless functions as a stopgap while new VMs boot.
//!
//! A ten-minute trace with one sharp burst; reactive scaling queues the
//! overflow, mixed procurement sends it to functions until VMs are ready.

use infersim::sim::run;
use infersim::workload::{assign_constraints, gen_burst, ConstraintTemplate, Jitter, SelectionMode};
use infersim::{Catalog, MixSpec, Money, PolicyKind, PolicySpec, RateCard};

fn main() -> infersim::Result<()> {
    let catalog = Catalog::bundled().subset(&["resnet50"])?;
    let card = RateCard::bundled();
    let trace = gen_burst(20.0, 60.0, 240.0, 120.0, 600.0, Jitter::Poisson, 4)?;
    let mix = MixSpec {
        strict_templates: vec![ConstraintTemplate::accuracy(76.0)],
        relaxed_templates: vec![ConstraintTemplate::accuracy(76.0)],
        ..MixSpec::default()
    };
    let queries = assign_constraints(&trace, &mix, &catalog, SelectionMode::Paragon, |_| Money::ZERO)?;

    for kind in [PolicyKind::Reactive, PolicyKind::Mixed] {
        let policy = PolicySpec {
            initial_vms: 2,
            ..PolicySpec::new(kind)
        };
        let r = run(&trace, &queries, &policy, &card, &catalog, 4)?;
        println!(
            "{:<9} cost {:.5} (vm {:.5}, functions {:.5})  violations {:>6.2}%  p99 {:>6} ms  invocations {} ({} cold)",
            r.policy_name,
            r.total_cost.to_f64(),
            r.vm_cost.to_f64(),
            r.serverless_cost.to_f64(),
            r.slo_violation_pct,
            r.response.p99_ms,
            r.serverless_invocations,
            r.cold_starts
        );
    }
    Ok(())
}
