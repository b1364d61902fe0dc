//! Strict-only offload against offloading everything, on the shipped bursty
//! trace with half strict and half relaxed queries.
//!
//! `cargo run --release --example paragon_vs_mixed`

use std::path::Path;

use infersim::{compare, Experiment};

fn main() -> infersim::Result<()> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/experiments/bursty.json");
    let exp = Experiment::load(config)?;
    let reports = exp.run()?;
    print!("{}", compare(&reports, "reactive")?.render());

    for r in reports.iter().filter(|r| r.policy.kind.uses_serverless()) {
        print!("{:<8}", r.policy_name);
        for (class, s) in &r.by_class {
            print!("  {}: {} requests, {} violations", class.as_str(), s.requests, s.violations);
        }
        println!("  functions: {} invocations", r.serverless_invocations);
    }
    Ok(())
}
