//! Dataset, pretraining, every fine-tuning strategy and held-out
//! evaluation on the desk profile. Takes under a minute in release mode.
//!
//! Usage: `cargo run --release --example full_pipeline -- [seed]`

use scenepref::config::RunConfig;
use scenepref::pipeline::run_scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::new().filter_level(log::LevelFilter::Info).init();
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let (report, _) = run_scenario(&RunConfig::desk().reseeded(seed))?;
    println!("{} clusters, {} pairs", report.clusters, report.pairs);
    println!("{}", report.ablation);
    for (name, exact) in report.ablation.ranking() {
        println!("{name:<14} {exact:.3}");
    }
    println!("{:?}", report.times);
    Ok(())
}
