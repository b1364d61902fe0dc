//! VM-only against serverless-only cost at constant request rates.
//!
//! `cargo run --release --example constant_load_costs [model]`

use infersim::cloud::vm_capacity;
use infersim::policy::required_vms;
use infersim::sim::run;
use infersim::workload::{assign_constraints, gen_constant, Jitter, SelectionMode};
use infersim::{Catalog, MixSpec, PolicyKind, PolicySpec, RateCard};

fn main() -> infersim::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "resnet50".into());
    let catalog = Catalog::bundled().subset(&[&name])?;
    let card = RateCard::bundled();
    let model = &catalog.models()[0];
    let slots = vm_capacity(&card.reference_vm_type, model, &card)?;
    let mix = MixSpec {
        strict_fraction: 0.0,
        ..MixSpec::default()
    };

    println!("{name}: one hour at constant load");
    println!("{:>6} {:>5} {:>12} {:>12} {:>7}", "req/s", "vms", "vm_only", "serverless", "ratio");
    for rate in [10.0, 50.0, 100.0, 200.0] {
        let trace = gen_constant(rate, 3600.0, Jitter::None, 0)?;
        let queries = assign_constraints(&trace, &mix, &catalog, SelectionMode::Paragon, |_| infersim::Money::ZERO)?;
        let fleet = required_vms(rate, model.ref_latency_ms, slots) + 1;
        let vm_only = PolicySpec {
            initial_vms: fleet,
            ..PolicySpec::new(PolicyKind::Reactive)
        };
        let serverless_only = PolicySpec {
            max_vms: Some(0),
            ..PolicySpec::new(PolicyKind::Mixed)
        };
        let a = run(&trace, &queries, &vm_only, &card, &catalog, 0)?;
        let b = run(&trace, &queries, &serverless_only, &card, &catalog, 0)?;
        println!(
            "{rate:>6} {fleet:>5} {:>12.6} {:>12.6} {:>7.2}",
            a.total_cost.to_f64(),
            b.total_cost.to_f64(),
            b.total_cost.to_f64() / a.total_cost.to_f64()
        );
    }
    Ok(())
}
