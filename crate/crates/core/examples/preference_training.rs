//! Fine-tunes a pretrained denoiser on preference pairs with each loss and
//! prints the training curves.

use scenepref::config::RunConfig;
use scenepref::diffusion::pretrain;
use scenepref::pipeline::{build_corpus, fitted_train_config, generate_dataset, split_prompts, train_pairs};
use scenepref::preference::{effective_beta, train, LossMode, TrainConfig};
use scenepref::scene::Codec;
use scenepref::tools::ToolService;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::desk();
    let codec = Codec::new(&cfg.vocab, cfg.latent_dim, cfg.codec_seed);
    let split = split_prompts(&cfg)?;
    let tools = ToolService::new(&cfg.vocab, cfg.tools.clone());
    let pairs = train_pairs(&generate_dataset(&cfg, &split.train, &tools, &codec)?, &codec)?;
    let corpus = build_corpus(&cfg, &split.corpus[..100], &codec)?;
    let (base, _) = pretrain(&corpus, &cfg.pretrain)?;

    let tc = fitted_train_config(&TrainConfig { steps: 300, log_every: 100, ..cfg.train.clone() }, &pairs);
    for d in 1..=4 {
        println!("distance {d}: effective beta {}", effective_beta(tc.beta, d, &tc.h));
    }
    for mode in LossMode::ALL {
        let (_, log) = train(base.clone(), &pairs, mode, &tc)?;
        for m in &log {
            println!("{:<12} step {:>4} loss {:>9.4} accuracy {:.3}", mode.name(), m.step, m.loss, m.implicit_accuracy);
        }
    }
    Ok(())
}
