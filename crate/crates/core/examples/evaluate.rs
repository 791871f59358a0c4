//! Compositional accuracy of an oracle and of an untrained denoiser.

use scenepref::config::RunConfig;
use scenepref::diffusion::{Architecture, Denoiser, NoiseSchedule};
use scenepref::evaluation::{compositional_accuracy, EvalConfig, OracleDenoiser};
use scenepref::pipeline::split_prompts;
use scenepref::scene::Codec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::desk();
    let codec = Codec::new(&cfg.vocab, cfg.latent_dim, cfg.codec_seed);
    let prompts = &split_prompts(&cfg)?.heldout[..20];
    let schedule = NoiseSchedule::cosine(64);
    let eval = EvalConfig { samples_per_prompt: 4, seed: 0 };

    let oracle = OracleDenoiser { dim: cfg.latent_dim, schedule: schedule.clone() };
    println!("oracle\n{}", compositional_accuracy(&oracle, &schedule, &codec, prompts, &eval, "oracle")?);

    let random = Denoiser::new(Architecture::new(cfg.latent_dim, &[64, 64]), 64, 0, false);
    println!("untrained\n{}", compositional_accuracy(&random, &schedule, &codec, prompts, &eval, "random")?);
    Ok(())
}
