//! Synthetic traces and their peak-to-median burstiness at several windows.
//!
//! `cargo run --example trace_analysis [trace.csv]`

use infersim::workload::{gen_burst, gen_constant, load_trace_csv, peak_to_median, Jitter};
use infersim::ArrivalTrace;

fn describe(label: &str, t: &ArrivalTrace) {
    let counts = t.window_counts(60);
    let peak = counts.iter().max().copied().unwrap_or(0);
    print!("{label:<24} {:>7} arrivals, peak {peak:>5}/min", t.len());
    for w in [1, 10, 60] {
        print!("  p2m@{w}s {:>5.1}%", peak_to_median(t, w));
    }
    println!();
}

fn main() -> infersim::Result<()> {
    if let Some(path) = std::env::args().nth(1) {
        describe(&path, &load_trace_csv(&path)?);
        return Ok(());
    }
    describe("constant 50/s", &gen_constant(50.0, 3600.0, Jitter::None, 0)?);
    describe("constant 50/s poisson", &gen_constant(50.0, 3600.0, Jitter::Poisson, 1)?);
    describe("burst 50->150/s 5 min", &gen_burst(50.0, 150.0, 1200.0, 300.0, 3600.0, Jitter::Poisson, 2)?);
    describe("burst 50->400/s 10 s", &gen_burst(50.0, 400.0, 1200.0, 10.0, 3600.0, Jitter::Poisson, 3)?);
    Ok(())
}
