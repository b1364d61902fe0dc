//! Re-pricing a report from its billing ledger, and catching a tampered one.

use infersim::sim::{run_with, LedgerMode, RunOptions};
use infersim::workload::{assign_constraints, gen_burst, Jitter, SelectionMode};
use infersim::{replay_verify, Catalog, MetricsReport, MixSpec, Money, PolicyKind, PolicySpec, RateCard};

fn main() -> infersim::Result<()> {
    let catalog = Catalog::bundled().subset(&["mobilenet_v2"])?;
    let card = RateCard::bundled();
    let trace = gen_burst(30.0, 120.0, 60.0, 30.0, 300.0, Jitter::Poisson, 8)?;
    let queries = assign_constraints(&trace, &MixSpec::default(), &catalog, SelectionMode::Paragon, |_| Money::ZERO)?;
    let opts = RunOptions { ledger: LedgerMode::Billing };
    let report = run_with(&trace, &queries, &PolicySpec::new(PolicyKind::Mixed), &card, &catalog, 8, opts)?;

    let ledger = report.ledger.as_ref().unwrap();
    println!(
        "{} VMs and {} invocations priced at {}",
        ledger.vms.len(),
        ledger.invocations.len(),
        report.total_cost
    );
    println!("round trip through JSON verifies: {}", replay_verify(&MetricsReport::from_json(&report.to_json()?)?, &card)?);

    let mut tampered = report.clone();
    if let Some(vm) = tampered.ledger.as_mut().unwrap().vms.first_mut() {
        vm.terminate_ms += 60_000;
    }
    println!("one VM kept a minute longer verifies: {}", replay_verify(&tampered, &card)?);
    Ok(())
}
