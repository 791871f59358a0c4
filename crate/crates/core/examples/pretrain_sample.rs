//! Pretrains a small denoiser on clean embeddings and decodes samples.

use scenepref::config::RunConfig;
use scenepref::diffusion::{pretrain, sample, CorpusItem, NoiseSchedule, PretrainConfig};
use scenepref::evaluation::candidate_set;
use scenepref::pipeline::split_prompts;
use scenepref::scene::Codec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::desk();
    let codec = Codec::new(&cfg.vocab, cfg.latent_dim, cfg.codec_seed);
    let split = split_prompts(&cfg)?;
    let corpus = split
        .corpus
        .iter()
        .map(|p| codec.embed(&p.scene).map(|x0| CorpusItem { condition: x0.clone(), x0 }))
        .collect::<Result<Vec<_>, _>>()?;
    let (state, log) = pretrain(&corpus, &PretrainConfig { steps: 1500, ..cfg.pretrain.clone() })?;
    println!("loss {:.4} -> {:.4}", log[0].loss, log.last().unwrap().loss);

    let schedule = NoiseSchedule::cosine(state.model.steps);
    for p in split.heldout.iter().take(5) {
        let x = sample(&state.model, &schedule, &codec.embed(&p.scene)?, 0)?;
        let got = codec.decode(&x, &candidate_set(&p.scene, &codec)?)?;
        println!("{:<40} {}", p.text, if got == p.scene { "exact" } else { "miss" });
    }
    Ok(())
}
