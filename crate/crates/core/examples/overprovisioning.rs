//! VM over-provisioning of the utilization and prediction policies relative
//! to reactive scaling, on the shipped bursty trace.
//!
//! `cargo run --release --example overprovisioning`

use std::path::Path;

use infersim::{over_provision_ratio, Experiment};

fn main() -> infersim::Result<()> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/experiments/bursty.json");
    let exp = Experiment::load(config)?;
    let reports = exp.run()?;
    let reactive = reports.iter().find(|r| r.policy_name == "reactive").unwrap();

    println!("{:<18} {:>6} {:>6} {:>9} {:>9} {:>10}", "policy", "theta", "beta", "vm_hours", "ratio", "slo_viol%");
    for r in reports.iter().filter(|r| !r.policy.kind.uses_serverless()) {
        println!(
            "{:<18} {:>6} {:>6} {:>9.2} {:>9.3} {:>10.3}",
            r.policy_name,
            r.policy.theta,
            r.policy.beta,
            r.vm_seconds_provisioned / 3600.0,
            over_provision_ratio(r, reactive)?,
            r.slo_violation_pct
        );
    }
    Ok(())
}
