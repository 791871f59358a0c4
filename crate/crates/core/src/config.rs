//! Run configuration, built-in profiles and TOML loading.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::OrchestratorConfig;
use crate::diffusion::PretrainConfig;
use crate::evaluation::EvalConfig;
use crate::preference::TrainConfig;
use crate::scene::{SceneSampler, Vocabulary};
use crate::tools::NoiseProfile;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown profile {0:?} (expected \"desk\" or \"paper-defaults\")")]
    UnknownProfile(String),
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Sizes of the prompt pools and of the pretraining corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Training clusters (one per prompt).
    pub clusters: usize,
    /// Held-out evaluation prompts, disjoint from the training prompts.
    pub heldout: usize,
    /// Prompts used to build the pretraining corpus.
    pub corpus_prompts: usize,
    pub corpus_images_per_prompt: usize,
    /// Per-detail corruption rate of corpus images.
    pub corpus_error_rate: f64,
    /// Orchestrator worker threads; output is reproducible only with 1.
    pub parallelism: usize,
    pub sampler: SceneSampler,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: String,
    pub vocab: Vocabulary,
    pub latent_dim: usize,
    pub codec_seed: u64,
    pub tools: NoiseProfile,
    pub data: DataConfig,
    pub orchestrator: OrchestratorConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Seed of prompt sampling and of everything not seeded elsewhere.
    pub seed: u64,
    pub output_dir: PathBuf,
}

pub const PROFILES: &[&str] = &["desk", "paper-defaults"];

fn desk_vocab() -> Vocabulary {
    Vocabulary::new(&["dog", "cat", "hat", "book"], &["red", "blue", "black"], &["small", "large"], &["with", "above"], 3, 3)
        .expect("desk vocabulary is valid")
}

impl RunConfig {
    /// Small vocabulary and sizes that run end to end in a few minutes.
    pub fn desk() -> RunConfig {
        RunConfig {
            profile: "desk".into(),
            vocab: desk_vocab(),
            latent_dim: 32,
            codec_seed: 7,
            tools: NoiseProfile::default(),
            data: DataConfig {
                clusters: 50,
                heldout: 60,
                corpus_prompts: 400,
                corpus_images_per_prompt: 4,
                corpus_error_rate: 0.3,
                parallelism: 1,
                sampler: SceneSampler::default(),
            },
            orchestrator: OrchestratorConfig { k_target: 5, ..OrchestratorConfig::default() },
            pretrain: PretrainConfig::default(),
            train: TrainConfig { steps: 2000, lr: 1e-3, ..TrainConfig::default() },
            eval: EvalConfig::default(),
            seed: 0,
            output_dir: PathBuf::from("runs/desk"),
        }
    }

    /// Full default vocabulary with the published dataset size and
    /// training hyperparameters.
    pub fn paper_defaults() -> RunConfig {
        let desk = RunConfig::desk();
        RunConfig {
            profile: "paper-defaults".into(),
            vocab: Vocabulary::default(),
            data: DataConfig { clusters: 725, heldout: 200, corpus_prompts: 2000, ..desk.data },
            orchestrator: OrchestratorConfig::default(),
            train: TrainConfig::default(),
            output_dir: PathBuf::from("runs/paper-defaults"),
            ..desk
        }
    }

    pub fn profile(name: &str) -> Result<RunConfig, ConfigError> {
        match name {
            "desk" => Ok(RunConfig::desk()),
            "paper-defaults" => Ok(RunConfig::paper_defaults()),
            other => Err(ConfigError::UnknownProfile(other.into())),
        }
    }

    /// Parses a TOML document layered over a profile. The document's own
    /// `profile` key selects the base, falling back to `default_profile`.
    pub fn from_toml(text: &str, default_profile: &str, path: &Path) -> Result<RunConfig, ConfigError> {
        let parse_err = |message: String| ConfigError::Parse { path: path.to_path_buf(), message };
        let overlay: toml::Table = text.parse().map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        let name = match overlay.get("profile") {
            Some(toml::Value::String(s)) => s.clone(),
            Some(_) => return Err(parse_err("profile must be a string".into())),
            None => default_profile.to_string(),
        };
        let base = RunConfig::profile(&name)?;
        let mut merged = toml::Table::try_from(&base).map_err(|e| parse_err(e.to_string()))?;
        merge(&mut merged, overlay);
        let cfg: RunConfig = merged.try_into().map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, default_profile: &str) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        RunConfig::from_toml(&text, default_profile, path)
    }

    /// The same configuration with every run seed set to `seed`. The codec
    /// seed is left alone so embeddings stay comparable across seeds.
    pub fn reseeded(&self, seed: u64) -> RunConfig {
        let mut c = self.clone();
        c.seed = seed;
        c.tools.seed = seed;
        c.orchestrator.seed = seed;
        c.pretrain.seed = seed;
        c.train.seed = seed;
        c.eval.seed = seed;
        c
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.vocab.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.tools.validate().map_err(ConfigError::Invalid)?;
        self.orchestrator.budget.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.data.corpus_error_rate) {
            return bad(format!("data.corpus_error_rate must lie in [0, 1], got {}", self.data.corpus_error_rate));
        }
        if self.orchestrator.k_target == 0 {
            return bad("orchestrator.k_target must be positive".into());
        }
        if self.pretrain.timesteps == 0 || self.pretrain.batch == 0 || self.pretrain.hidden.is_empty() {
            return bad("pretrain.timesteps, pretrain.batch and pretrain.hidden must be non-empty".into());
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_round_trip_through_toml() {
        for name in PROFILES {
            let cfg = RunConfig::profile(name).unwrap();
            cfg.validate().unwrap();
            let back = RunConfig::from_toml(&cfg.to_toml(), "desk", Path::new("x.toml")).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn overlay_changes_only_named_fields() {
        let cfg = RunConfig::from_toml(
            "profile = \"paper-defaults\"\n[train]\nsteps = 7\n[train.h]\nh_min = 0.25\n",
            "desk",
            Path::new("x.toml"),
        )
        .unwrap();
        let base = RunConfig::paper_defaults();
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.train.h.h_min, 0.25);
        assert_eq!(cfg.train.beta, base.train.beta);
        assert_eq!(cfg.data, base.data);
    }

    #[test]
    fn bad_documents_are_rejected() {
        let p = Path::new("x.toml");
        assert!(matches!(RunConfig::from_toml("profile = \"huge\"", "desk", p), Err(ConfigError::UnknownProfile(_))));
        assert!(matches!(RunConfig::from_toml("[train]\nstepz = 3", "desk", p), Err(ConfigError::Parse { .. })));
        assert!(matches!(RunConfig::from_toml("[train]\nlr = -1.0", "desk", p), Err(ConfigError::Invalid(_))));
    }
}
