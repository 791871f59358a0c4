//! Builds a small preference dataset and writes it to a directory.
//!
//! Usage: `cargo run --example build_dataset -- [out_dir]`

use scenepref::config::RunConfig;
use scenepref::dataset::{dataset_stats, write_dataset};
use scenepref::pipeline::{generate_dataset, split_prompts};
use scenepref::scene::Codec;
use scenepref::tools::ToolService;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/example-dataset".into());
    let mut cfg = RunConfig::desk();
    cfg.data.clusters = 10;
    let codec = Codec::new(&cfg.vocab, cfg.latent_dim, cfg.codec_seed);
    let prompts = split_prompts(&cfg)?.train;
    let tools = ToolService::new(&cfg.vocab, cfg.tools.clone());
    let ds = generate_dataset(&cfg, &prompts, &tools, &codec)?;
    write_dataset(&ds, std::path::Path::new(&out))?;
    println!("{}", serde_json::to_string_pretty(&dataset_stats(&ds))?);
    println!("written to {out}");
    Ok(())
}
