//! End-to-end stages shared by the command line and the experiments:
//! prompt pools, the pretraining corpus, dataset generation, pair
//! reduction and the full scenario.

use std::collections::HashSet;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::orchestrate_dataset;
use crate::config::{ConfigError, RunConfig};
use crate::dataset::{expand_all, Dataset, DatasetError};
use crate::diffusion::{pretrain, CorpusItem, DiffusionError, PretrainLog, TrainState};
use crate::evaluation::{ablation_strategies, AblationReport};
use crate::preference::{LossMode, TrainConfig, TrainError, TrainPair};
use crate::scene::{Codec, Prompt, Scene, SceneError};
use crate::tools::{mix, NoiseProfile, ToolBackend, ToolError, ToolService};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] DiffusionError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{0}")]
    Prompts(String),
}

/// Training, held-out and corpus prompts. Training and held-out prompts are
/// distinct scenes; corpus prompts never coincide with a held-out scene.
/// Held-out prompts are drawn first, so they do not depend on the number of
/// training clusters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptSplit {
    pub train: Vec<Prompt>,
    pub heldout: Vec<Prompt>,
    pub corpus: Vec<Prompt>,
}

pub fn split_prompts(cfg: &RunConfig) -> Result<PromptSplit, PipelineError> {
    let vocab = &cfg.vocab;
    let need = cfg.data.clusters + cfg.data.heldout;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0x5052_4f4d));
    let mut seen: HashSet<Scene> = HashSet::new();
    let mut distinct = Vec::with_capacity(need);
    let mut tries = 0usize;
    while distinct.len() < need {
        tries += 1;
        if tries > 200 * need.max(1) {
            return Err(PipelineError::Prompts(format!(
                "found only {} distinct scenes of {need} requested; enlarge the vocabulary or sampler",
                distinct.len()
            )));
        }
        let s = cfg.data.sampler.sample(&mut rng, vocab);
        if seen.insert(s.clone()) {
            distinct.push(Prompt::from_scene(&s, vocab)?);
        }
    }
    let train = distinct.split_off(cfg.data.heldout);
    let heldout = distinct;
    let held: HashSet<&Scene> = heldout.iter().map(|p| &p.scene).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0x434f_5250));
    let mut corpus = Vec::with_capacity(cfg.data.corpus_prompts);
    tries = 0;
    while corpus.len() < cfg.data.corpus_prompts {
        tries += 1;
        if tries > 200 * cfg.data.corpus_prompts {
            return Err(PipelineError::Prompts("held-out scenes exhaust the corpus sampler".into()));
        }
        let s = cfg.data.sampler.sample(&mut rng, vocab);
        if !held.contains(&s) {
            corpus.push(Prompt::from_scene(&s, vocab)?);
        }
    }
    Ok(PromptSplit { train, heldout, corpus })
}

/// Images of the corpus prompts from a generator that corrupts each detail
/// with probability `data.corpus_error_rate`, paired with the prompt
/// embeddings.
pub fn build_corpus(cfg: &RunConfig, prompts: &[Prompt], codec: &Codec) -> Result<Vec<CorpusItem>, PipelineError> {
    let profile =
        NoiseProfile { gen_detail_error_rate: cfg.data.corpus_error_rate, ..NoiseProfile::perfect(mix(cfg.seed, 0x47454e)) };
    let svc = ToolService::new(&cfg.vocab, profile);
    let per = cfg.data.corpus_images_per_prompt;
    let mut out = Vec::with_capacity(prompts.len() * per);
    for (i, p) in prompts.iter().enumerate() {
        let condition = codec.embed(&p.scene)?;
        for j in 0..per {
            let id = svc.generate(p, (i * per + j) as u64)?;
            let image = svc.image(&id)?;
            out.push(CorpusItem { condition: condition.clone(), x0: codec.embed(&image.scene)? });
        }
    }
    Ok(out)
}

/// Runs the orchestrator over `prompts` and expands the clusters into
/// preference pairs.
pub fn generate_dataset(
    cfg: &RunConfig,
    prompts: &[Prompt],
    tools: &dyn ToolBackend,
    codec: &Codec,
) -> Result<Dataset, PipelineError> {
    let run = orchestrate_dataset(prompts, tools, &cfg.orchestrator, cfg.data.parallelism, &cfg.vocab);
    let pairs = expand_all(&run.clusters, codec, &cfg.vocab)?;
    let ds = Dataset::assemble(run, pairs, &cfg.vocab, codec, cfg.orchestrator.seed);
    ds.check()?;
    Ok(ds)
}

pub fn train_pairs(ds: &Dataset, codec: &Codec) -> Result<Vec<TrainPair>, PipelineError> {
    Ok(ds.pairs.iter().map(|p| TrainPair::from_pair(p, codec)).collect::<Result<_, _>>()?)
}

/// The training configuration with H's distance range fitted to `pairs`.
pub fn fitted_train_config(train: &TrainConfig, pairs: &[TrainPair]) -> TrainConfig {
    TrainConfig { h: train.h.fitted(pairs.iter().map(|p| p.distance)), ..train.clone() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub dataset_secs: f64,
    pub pretrain_secs: f64,
    pub ablation_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub seed: u64,
    pub clusters: usize,
    pub pairs: usize,
    pub pretrain_log: Vec<PretrainLog>,
    pub ablation: AblationReport,
    pub times: StageTimes,
}

impl ScenarioReport {
    pub fn exact(&self, mode: LossMode) -> Option<f64> {
        self.ablation.rows.iter().find(|r| r.mode == mode && r.error.is_none()).map(|r| r.report.exact_match)
    }
}

/// Pretrains a base on the corrupted corpus, builds a dataset with in-process
/// tools, fine-tunes every strategy from the base and evaluates each on the
/// held-out prompts.
pub fn run_scenario(cfg: &RunConfig) -> Result<(ScenarioReport, TrainState), PipelineError> {
    cfg.validate()?;
    let codec = Codec::new(&cfg.vocab, cfg.latent_dim, cfg.codec_seed);
    let split = split_prompts(cfg)?;

    let t0 = Instant::now();
    let tools = ToolService::new(&cfg.vocab, cfg.tools.clone());
    let ds = generate_dataset(cfg, &split.train, &tools, &codec)?;
    let pairs = train_pairs(&ds, &codec)?;
    let dataset_secs = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let corpus = build_corpus(cfg, &split.corpus, &codec)?;
    let (base, pretrain_log) = pretrain(&corpus, &cfg.pretrain)?;
    let pretrain_secs = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let train = fitted_train_config(&cfg.train, &pairs);
    let ablation = ablation_strategies(&base, &pairs, &split.heldout, &codec, &train, &cfg.eval, &LossMode::ALL)?;
    let ablation_secs = t2.elapsed().as_secs_f64();

    let report = ScenarioReport {
        seed: cfg.seed,
        clusters: ds.clusters.len(),
        pairs: pairs.len(),
        pretrain_log,
        ablation,
        times: StageTimes { dataset_secs, pretrain_secs, ablation_secs },
    };
    Ok((report, base))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_are_disjoint_and_reproducible() {
        let cfg = RunConfig::desk();
        let a = split_prompts(&cfg).unwrap();
        assert_eq!(a, split_prompts(&cfg).unwrap());
        assert_eq!(a.train.len(), cfg.data.clusters);
        assert_eq!(a.heldout.len(), cfg.data.heldout);
        let held: HashSet<&Scene> = a.heldout.iter().map(|p| &p.scene).collect();
        assert!(a.train.iter().chain(&a.corpus).all(|p| !held.contains(&p.scene)));
    }

    #[test]
    fn heldout_prompts_ignore_cluster_count() {
        let mut cfg = RunConfig::desk();
        let a = split_prompts(&cfg).unwrap();
        cfg.data.clusters = 5;
        let b = split_prompts(&cfg).unwrap();
        assert_eq!(a.heldout, b.heldout);
        assert_eq!(a.train[..5], b.train[..]);
    }

    #[test]
    fn clean_corpus_embeds_the_prompt() {
        let mut cfg = RunConfig::desk();
        cfg.data.corpus_error_rate = 0.0;
        let codec = Codec::new(&cfg.vocab, cfg.latent_dim, cfg.codec_seed);
        let split = split_prompts(&cfg).unwrap();
        let corpus = build_corpus(&cfg, &split.corpus[..10], &codec).unwrap();
        assert_eq!(corpus.len(), 10 * cfg.data.corpus_images_per_prompt);
        assert!(corpus.iter().all(|c| c.condition == c.x0));
    }
}
