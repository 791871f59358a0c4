//! Command-line entry point: subcommands, run manifests and exit codes.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{ConfigError, RunConfig};
use crate::dataset::{dataset_stats, expand_all, read_dataset, write_dataset, Dataset, DatasetError};
use crate::diffusion::{params_hash, pretrain, Checkpoint, DiffusionError, NoiseSchedule, CHECKPOINT_VERSION};
use crate::evaluation::{ablation_h, ablation_strategies, compositional_accuracy, preference_margin, EvalConfig};
use crate::pipeline::{build_corpus, fitted_train_config, generate_dataset, split_prompts, train_pairs, PipelineError};
use crate::preference::{objective_grad_checks, train, LossMode, TrainError};
use crate::scene::Codec;
use crate::tools::{serve, HttpToolClient, NoiseProfile, ToolBackend, ToolService};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "scenepref", version, about = "Contrastive scene datasets and preference fine-tuning of a toy denoiser")]
pub struct Cli {
    /// TOML configuration layered over the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in profile used when the file names none.
    #[arg(long, global = true, default_value = "desk")]
    pub preset: String,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Sets every run seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log level on standard error.
    #[arg(long, global = true, default_value = "info")]
    pub log: log::LevelFilter,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Heldout,
    Train,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AblationKind {
    Strategies,
    H,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Serve the simulated tools over HTTP until interrupted.
    ServeTools {
        /// Noise profile (TOML); defaults to the configured tools profile.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8700")]
        bind: String,
    },
    /// Build a contrastive dataset with the agents.
    GenData {
        /// Number of clusters.
        #[arg(long)]
        n: Option<usize>,
        /// Negatives requested per cluster.
        #[arg(long)]
        k: Option<usize>,
        /// Use a running tool server instead of in-process tools.
        #[arg(long)]
        tools_url: Option<String>,
        /// In-process tools without noise.
        #[arg(long)]
        perfect_tools: bool,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Recompute preference pairs from a dataset's clusters.
    ExpandPairs {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Pretrain the base denoiser on a generated corpus.
    Pretrain {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune a base checkpoint on a dataset.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long, value_parser = parse_mode, default_value = "apo")]
        mode: LossMode,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compositional accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "heldout")]
        split: Split,
        #[arg(long)]
        samples: Option<usize>,
        /// Also report preference margins on this dataset's pairs.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every strategy or every weighting variant.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "strategies")]
        kind: AblationKind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dataset statistics.
    Stats {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Finite-difference check of every objective's gradient.
    GradCheck {
        #[arg(long, default_value_t = 100)]
        probes: usize,
        #[arg(long, default_value_t = 1e-5)]
        threshold: f64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::ServeTools { .. } => "serve-tools",
            Command::GenData { .. } => "gen-data",
            Command::ExpandPairs { .. } => "expand-pairs",
            Command::Pretrain { .. } => "pretrain",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Ablate { .. } => "ablate",
            Command::Stats { .. } => "stats",
            Command::GradCheck { .. } => "grad-check",
        }
    }
}

fn parse_mode(s: &str) -> Result<LossMode, String> {
    LossMode::ALL
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| format!("expected one of {}", LossMode::ALL.map(|m| m.name()).join(", ")))
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Validation(_) => "validation",
            CliError::Runtime(_) => "runtime",
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<DiffusionError> for CliError {
    fn from(e: DiffusionError) -> Self {
        match e {
            DiffusionError::Checkpoint { .. } => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(e) => e.into(),
            PipelineError::Dataset(e) => e.into(),
            PipelineError::Model(e) => e.into(),
            PipelineError::Train(e) => e.into(),
            PipelineError::Prompts(m) => CliError::Validation(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

/// Written when a command starts and rewritten when it ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub status: String,
    pub config: RunConfig,
    pub inputs: Vec<Artifact>,
    pub artifacts: Vec<Artifact>,
    pub summary: serde_json::Value,
    pub error: Option<String>,
}

pub fn manifest_path(out_dir: &Path, command: &str) -> PathBuf {
    out_dir.join(format!("{command}.run.json"))
}

fn file_hash(path: &Path) -> Result<Artifact, CliError> {
    let mut h = Sha256::new();
    let mut add = |p: &Path| -> Result<(), CliError> {
        h.update(fs::read(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?);
        Ok(())
    };
    if path.is_dir() {
        let mut entries: Vec<PathBuf> =
            fs::read_dir(path).map_err(runtime)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file()).collect();
        entries.sort();
        for p in entries {
            add(&p)?;
        }
    } else {
        add(path)?;
    }
    Ok(Artifact { path: path.to_path_buf(), sha256: hex::encode(h.finalize()) })
}

struct Run {
    manifest: RunManifest,
    path: PathBuf,
}

impl Run {
    fn start(command: &str, argv: Vec<String>, config: &RunConfig) -> Result<Run, CliError> {
        fs::create_dir_all(&config.output_dir).map_err(|e| runtime(format!("{}: {e}", config.output_dir.display())))?;
        let run = Run {
            manifest: RunManifest {
                command: command.into(),
                argv,
                status: "running".into(),
                config: config.clone(),
                inputs: Vec::new(),
                artifacts: Vec::new(),
                summary: serde_json::Value::Null,
                error: None,
            },
            path: manifest_path(&config.output_dir, command),
        };
        run.save()?;
        Ok(run)
    }

    fn save(&self) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&self.path, text + "\n").map_err(|e| runtime(format!("{}: {e}", self.path.display())))
    }

    fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.manifest.inputs.push(file_hash(path)?);
        Ok(())
    }

    fn artifact(&mut self, path: &Path) -> Result<(), CliError> {
        self.manifest.artifacts.push(file_hash(path)?);
        Ok(())
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(runtime)?;
    }
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n").map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn codec(cfg: &RunConfig) -> Codec {
    Codec::new(&cfg.vocab, cfg.latent_dim, cfg.codec_seed)
}

fn load_dataset(path: &Path, cfg: &RunConfig) -> Result<Dataset, CliError> {
    let ds = read_dataset(path)?;
    let m = &ds.manifest;
    if m.vocab_hash != cfg.vocab.hash_hex() || m.codec_seed != cfg.codec_seed || m.latent_dim != cfg.latent_dim {
        return Err(CliError::Validation(format!(
            "{} was built with a different vocabulary or codec than the configuration",
            path.display()
        )));
    }
    Ok(ds)
}

fn load_checkpoint(path: &Path, cfg: &RunConfig) -> Result<Checkpoint, CliError> {
    let ck = Checkpoint::load(path)?;
    if ck.vocab_hash != cfg.vocab.hash_hex() || ck.codec_seed != cfg.codec_seed || ck.state.model.arch.dim != cfg.latent_dim {
        return Err(CliError::Validation(format!(
            "{} was trained with a different vocabulary or codec than the configuration",
            path.display()
        )));
    }
    Ok(ck)
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p, &cli.preset)?,
        None => RunConfig::profile(&cli.preset)?,
    };
    if let Some(s) = cli.seed {
        cfg = cfg.reseeded(s);
    }
    if let Some(d) = &cli.out_dir {
        cfg.output_dir = d.clone();
    }
    Ok(cfg)
}

/// Parses `argv` (including the program name), runs the command and
/// returns the exit status. Errors are printed to standard error as one
/// JSON object.
pub fn main_with(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            if code == EXIT_USAGE {
                let mut cmd = <Cli as clap::CommandFactory>::command();
                let sub = argv.iter().skip(1).find_map(|a| cmd.find_subcommand(a).map(|s| s.get_name().to_string()));
                let help = match sub.and_then(|n| cmd.find_subcommand_mut(&n).map(|s| s.render_help())) {
                    Some(h) => h,
                    None => cmd.render_help(),
                };
                let _ = writeln!(std::io::stderr(), "\n{help}");
            }
            return code;
        }
    };
    let _ = env_logger::Builder::new().filter_level(cli.log).target(env_logger::Target::Stderr).try_init();
    match run(&cli, argv) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let line = json!({ "error": e.kind(), "message": e.to_string() });
            let _ = writeln!(std::io::stderr(), "{line}");
            e.exit_code()
        }
    }
}

fn run(cli: &Cli, argv: Vec<String>) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    cfg.validate()?;
    let name = cli.command.name();
    let mut run = Run::start(name, argv, &cfg)?;
    let result = dispatch(&cli.command, &cfg, &mut run);
    match &result {
        Ok(()) => run.manifest.status = "ok".into(),
        Err(e) => {
            run.manifest.status = "failed".into();
            run.manifest.error = Some(e.to_string());
        }
    }
    run.save()?;
    result
}

fn dispatch(command: &Command, cfg: &RunConfig, run: &mut Run) -> Result<(), CliError> {
    let out = &cfg.output_dir;
    let data_dir = |d: &Option<PathBuf>| d.clone().unwrap_or_else(|| out.join("dataset"));
    let base_path = |b: &Option<PathBuf>| b.clone().unwrap_or_else(|| out.join("base.ckpt.json"));
    match command {
        Command::ServeTools { profile, bind } => {
            let profile = match profile {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
                    let prof: NoiseProfile =
                        toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
                    run.input(p)?;
                    prof
                }
                None => cfg.tools.clone(),
            };
            profile.validate().map_err(CliError::Validation)?;
            let svc = Arc::new(ToolService::new(&cfg.vocab, profile));
            let handle = serve(svc, bind).map_err(|e| runtime(format!("cannot bind {bind}: {e}")))?;
            run.manifest.summary = json!({ "url": handle.url() });
            run.save()?;
            log::info!("serving tools on {}", handle.url());
            handle.wait();
            Ok(())
        }
        Command::GenData { n, k, tools_url, perfect_tools, data } => {
            let mut cfg = cfg.clone();
            if let Some(n) = n {
                cfg.data.clusters = *n;
            }
            if let Some(k) = k {
                cfg.orchestrator.k_target = *k;
            }
            if *perfect_tools {
                cfg.tools = NoiseProfile::perfect(cfg.tools.seed);
            }
            cfg.validate()?;
            run.manifest.config = cfg.clone();
            run.save()?;
            let codec = codec(&cfg);
            let split = split_prompts(&cfg)?;
            let tools: Box<dyn ToolBackend> = match tools_url {
                Some(url) => Box::new(HttpToolClient::new(url)),
                None => Box::new(ToolService::new(&cfg.vocab, cfg.tools.clone())),
            };
            let ds = generate_dataset(&cfg, &split.train, tools.as_ref(), &codec)?;
            let dir = data_dir(data);
            write_dataset(&ds, &dir)?;
            run.artifact(&dir)?;
            let stats = dataset_stats(&ds);
            log::info!("{} clusters, {} negatives, {} pairs", stats.clusters, stats.negatives, ds.pairs.len());
            run.manifest.summary = serde_json::to_value(&stats).expect("stats serialize");
            Ok(())
        }
        Command::ExpandPairs { data } => {
            let dir = data_dir(data);
            let ds = load_dataset(&dir, cfg)?;
            run.input(&dir)?;
            let pairs = expand_all(&ds.clusters, &codec(cfg), &cfg.vocab)?;
            let ds = ds.with_pairs(pairs);
            write_dataset(&ds, &dir)?;
            run.artifact(&dir)?;
            run.manifest.summary = json!({ "pairs": ds.pairs.len() });
            Ok(())
        }
        Command::Pretrain { out: path } => {
            let codec = codec(cfg);
            let split = split_prompts(cfg)?;
            let corpus = build_corpus(cfg, &split.corpus, &codec)?;
            let (state, log) = pretrain(&corpus, &cfg.pretrain)?;
            let path = path.clone().unwrap_or_else(|| base_path(&None));
            let ck = Checkpoint { version: CHECKPOINT_VERSION, codec_seed: cfg.codec_seed, vocab_hash: cfg.vocab.hash_hex(), state };
            ck.save(&path)?;
            run.artifact(&path)?;
            run.manifest.summary = json!({ "corpus": corpus.len(), "log": log, "params_hash": params_hash(&ck.state.model.params) });
            Ok(())
        }
        Command::Train { data, base, mode, steps, out: path } => {
            let dir = data_dir(data);
            let ds = load_dataset(&dir, cfg)?;
            run.input(&dir)?;
            let bp = base_path(base);
            let base = load_checkpoint(&bp, cfg)?;
            run.input(&bp)?;
            let pairs = train_pairs(&ds, &codec(cfg))?;
            let mut tc = fitted_train_config(&cfg.train, &pairs);
            if let Some(s) = steps {
                tc.steps = *s;
            }
            let (state, metrics) = train(base.state, &pairs, *mode, &tc)?;
            let path = path.clone().unwrap_or_else(|| out.join(format!("{}.ckpt.json", mode.name())));
            let ck = Checkpoint { state, ..base };
            ck.save(&path)?;
            run.artifact(&path)?;
            run.manifest.summary = json!({ "mode": mode.name(), "train": tc, "metrics": metrics });
            Ok(())
        }
        Command::Eval { checkpoint, split, samples, data, out: path } => {
            let cp = checkpoint.clone().unwrap_or_else(|| base_path(&None));
            let ck = load_checkpoint(&cp, cfg)?;
            run.input(&cp)?;
            let before = params_hash(&ck.state.model.params);
            let codec = codec(cfg);
            let prompts = split_prompts(cfg)?;
            let prompts = match split {
                Split::Heldout => prompts.heldout,
                Split::Train => prompts.train,
            };
            let ecfg = EvalConfig { samples_per_prompt: samples.unwrap_or(cfg.eval.samples_per_prompt), ..cfg.eval.clone() };
            let schedule = NoiseSchedule::cosine(ck.state.model.steps);
            let report = compositional_accuracy(&ck.state.model, &schedule, &codec, &prompts, &ecfg, &before)?;
            let margins = match data {
                Some(d) => {
                    let ds = load_dataset(d, cfg)?;
                    run.input(d)?;
                    Some(preference_margin(&ck.state, &train_pairs(&ds, &codec)?, 4, ecfg.seed)?)
                }
                None => None,
            };
            debug_assert_eq!(before, params_hash(&ck.state.model.params));
            let stem = cp.file_stem().and_then(|s| s.to_str()).unwrap_or("model").trim_end_matches(".ckpt").to_string();
            let path = path.clone().unwrap_or_else(|| out.join(format!("eval-{stem}.json")));
            let body = json!({ "report": report, "margins": margins, "eval": ecfg });
            write_json(&path, &body)?;
            run.artifact(&path)?;
            eprint!("{report}");
            run.manifest.summary = body;
            Ok(())
        }
        Command::Ablate { data, base, kind, out: path } => {
            let dir = data_dir(data);
            let ds = load_dataset(&dir, cfg)?;
            run.input(&dir)?;
            let bp = base_path(base);
            let base = load_checkpoint(&bp, cfg)?;
            run.input(&bp)?;
            let codec = codec(cfg);
            let pairs = train_pairs(&ds, &codec)?;
            let tc = fitted_train_config(&cfg.train, &pairs);
            let heldout = split_prompts(cfg)?.heldout;
            let report = match kind {
                AblationKind::Strategies => {
                    ablation_strategies(&base.state, &pairs, &heldout, &codec, &tc, &cfg.eval, &LossMode::ALL)?
                }
                AblationKind::H => ablation_h(&base.state, &pairs, &heldout, &codec, &tc, &cfg.eval)?,
            };
            let name = match kind {
                AblationKind::Strategies => "strategies",
                AblationKind::H => "h",
            };
            let path = path.clone().unwrap_or_else(|| out.join(format!("ablate-{name}.json")));
            write_json(&path, &report)?;
            run.artifact(&path)?;
            eprint!("{report}");
            run.manifest.summary = json!({ "ranking": report.ranking() });
            Ok(())
        }
        Command::Stats { data } => {
            let dir = data_dir(data);
            let ds = load_dataset(&dir, cfg)?;
            run.input(&dir)?;
            let stats = dataset_stats(&ds);
            let path = out.join("stats.json");
            write_json(&path, &stats)?;
            run.artifact(&path)?;
            eprint!("{stats}");
            run.manifest.summary = serde_json::to_value(&stats).expect("stats serialize");
            Ok(())
        }
        Command::GradCheck { probes, threshold } => {
            let checks = objective_grad_checks(*probes, cfg.seed);
            let mut worst: f64 = 0.0;
            for (name, g) in &checks {
                log::info!("{name}: max relative error {:.3e} over {} probes", g.max_rel_error, g.probes);
                worst = worst.max(g.max_rel_error);
            }
            run.manifest.summary = json!({ "threshold": threshold, "checks": checks });
            if worst < *threshold {
                Ok(())
            } else {
                Err(CliError::Runtime(format!("gradient check failed: max relative error {worst:.3e} >= {threshold:.1e}")))
            }
        }
    }
}
