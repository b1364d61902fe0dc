//! Latency and price per invocation across function memory sizes.

use infersim::cloud::{serverless_exec_latency, serverless_invocation_cost, serverless_memory_options};
use infersim::{Catalog, RateCard};

fn main() -> infersim::Result<()> {
    let card = RateCard::bundled();
    for m in Catalog::bundled().models() {
        println!("{} (needs {} MB)", m.name, m.memory_mb);
        for mem in serverless_memory_options(m, &card) {
            let lat = serverless_exec_latency(m, mem, &card)?;
            let cost = serverless_invocation_cost(lat, mem, &card);
            println!("  {mem:>5} MB {lat:>6} ms  {:>12.9} per call  {:>9.4} per 1M", cost.to_f64(), (cost * 1_000_000).to_f64());
        }
    }
    Ok(())
}
