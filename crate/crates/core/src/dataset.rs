//! Training pairs derived from clusters, JSONL persistence and summary
//! statistics.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{pair_filter, Cluster, ClusterFailure, DatasetRun, Role, ToolCounters, TraceRecord};
use crate::scene::{edit_distance, Codec, Prompt, Scene, SceneError, Vocabulary};

pub const DATASET_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CLUSTERS_FILE: &str = "clusters.jsonl";
pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const TRACES_FILE: &str = "traces.jsonl";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file} line {line}, field `{field}`: {message}")]
    Schema { file: String, line: usize, field: String, message: String },
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// One side of a preference pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairMember {
    pub image_id: String,
    pub scene: Scene,
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairSource {
    /// Positive against negative `k`.
    Anchor { k: usize },
    /// Negative `a` preferred over negative `b`.
    Intra { a: usize, b: usize },
}

/// `preferred` is better than `dispreferred` given `condition`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferencePair {
    pub cluster: usize,
    pub condition: Prompt,
    pub preferred: PairMember,
    pub dispreferred: PairMember,
    pub distance: u32,
    pub source: PairSource,
}

/// Whether the member with `positive_prompt` and `positive_scene` may be
/// preferred over `negative_scene`.
pub type PairFilter = fn(&Scene, &Scene, &Scene) -> bool;

/// Anchor pairs (positive over each negative) plus every ordered pair of
/// negatives accepted by `filter`, conditioned on the preferred member's
/// prompt. Duplicates by condition and member scenes are dropped.
pub fn expand_pairs(
    cluster: &Cluster,
    filter: PairFilter,
    codec: &Codec,
    vocab: &Vocabulary,
) -> Result<Vec<PreferencePair>, DatasetError> {
    let member = |image_id: &str, scene: &Scene| -> Result<PairMember, SceneError> {
        Ok(PairMember { image_id: image_id.to_string(), scene: scene.clone(), embedding: codec.embed(scene)? })
    };
    let positive = member(&cluster.positive_image, &cluster.positive_scene)?;
    let negatives: Vec<PairMember> =
        cluster.negatives.iter().map(|n| member(&n.image_id, &n.scene)).collect::<Result<_, _>>()?;
    let mut seen: HashSet<(String, Scene, Scene)> = HashSet::new();
    let mut out = Vec::new();
    let mut push = |pair: PreferencePair, out: &mut Vec<PreferencePair>| {
        let key = (pair.condition.text.clone(), pair.preferred.scene.clone(), pair.dispreferred.scene.clone());
        if seen.insert(key) {
            out.push(pair);
        }
    };
    for (k, n) in cluster.negatives.iter().enumerate() {
        if !filter(&cluster.prompt.scene, &cluster.positive_scene, &n.scene) {
            continue;
        }
        let pair = PreferencePair {
            cluster: cluster.index,
            condition: cluster.prompt.clone(),
            preferred: positive.clone(),
            dispreferred: negatives[k].clone(),
            distance: n.distance,
            source: PairSource::Anchor { k },
        };
        push(pair, &mut out);
    }
    for (a, na) in cluster.negatives.iter().enumerate() {
        for (b, nb) in cluster.negatives.iter().enumerate() {
            if a == b || !filter(&na.prompt.scene, &na.scene, &nb.scene) {
                continue;
            }
            let pair = PreferencePair {
                cluster: cluster.index,
                condition: na.prompt.clone(),
                preferred: negatives[a].clone(),
                dispreferred: negatives[b].clone(),
                distance: edit_distance(&na.scene, &nb.scene, vocab)?.distance,
                source: PairSource::Intra { a, b },
            };
            push(pair, &mut out);
        }
    }
    Ok(out)
}

/// Pairs of every cluster under the default filter.
pub fn expand_all(clusters: &[Cluster], codec: &Codec, vocab: &Vocabulary) -> Result<Vec<PreferencePair>, DatasetError> {
    let mut out = Vec::new();
    for c in clusters {
        out.extend(expand_pairs(c, pair_filter, codec, vocab)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub vocab_hash: String,
    pub codec_seed: u64,
    pub latent_dim: usize,
    pub seed: u64,
    pub clusters: usize,
    pub negatives: usize,
    pub dropped: usize,
    pub pairs: usize,
    pub tool_calls: ToolCounters,
    pub failures: Vec<ClusterFailure>,
}

/// A trace line: which cluster and agent it belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceLine {
    cluster: usize,
    #[serde(flatten)]
    record: TraceRecord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub clusters: Vec<Cluster>,
    pub pairs: Vec<PreferencePair>,
}

impl Dataset {
    /// Collects a finished run into a dataset whose manifest matches its
    /// records.
    pub fn assemble(run: DatasetRun, pairs: Vec<PreferencePair>, vocab: &Vocabulary, codec: &Codec, seed: u64) -> Dataset {
        let tool_calls = run.counters();
        let manifest = DatasetManifest {
            version: DATASET_VERSION,
            vocab_hash: vocab.hash_hex(),
            codec_seed: codec.seed(),
            latent_dim: codec.latent_dim(),
            seed,
            clusters: run.clusters.len(),
            negatives: run.clusters.iter().map(|c| c.negatives.len()).sum(),
            dropped: run.clusters.iter().map(|c| c.dropped).sum(),
            pairs: pairs.len(),
            tool_calls,
            failures: run.failures,
        };
        Dataset { manifest, clusters: run.clusters, pairs }
    }

    /// Replaces the pairs and updates the manifest count.
    pub fn with_pairs(mut self, pairs: Vec<PreferencePair>) -> Dataset {
        self.manifest.pairs = pairs.len();
        self.pairs = pairs;
        self
    }

    pub fn check(&self) -> Result<(), DatasetError> {
        let m = &self.manifest;
        let negatives: usize = self.clusters.iter().map(|c| c.negatives.len()).sum();
        let dropped: usize = self.clusters.iter().map(|c| c.dropped).sum();
        if m.clusters != self.clusters.len() || m.negatives != negatives || m.dropped != dropped || m.pairs != self.pairs.len()
        {
            return Err(DatasetError::Inconsistent("manifest counts differ from the records".into()));
        }
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), DatasetError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(&item).expect("records serialize");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn parse_line<T: DeserializeOwned>(text: &str, file: &str, line: usize) -> Result<T, DatasetError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| DatasetError::Schema {
        file: file.to_string(),
        line,
        field: e.path().to_string(),
        message: e.into_inner().to_string(),
    })
}

fn read_jsonl<T: DeserializeOwned>(dir: &Path, file: &str) -> Result<Vec<T>, DatasetError> {
    let path = dir.join(file);
    let f = fs::File::open(&path).map_err(io_err(&path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(&path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, file, i + 1)?);
    }
    Ok(out)
}

/// Writes the manifest, clusters, pairs and traces into `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<(), DatasetError> {
    dataset.check()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_jsonl(&dir.join(CLUSTERS_FILE), &dataset.clusters)?;
    write_jsonl(&dir.join(PAIRS_FILE), &dataset.pairs)?;
    let traces = dataset
        .clusters
        .iter()
        .map(|c| (c.index, &c.traces))
        .chain(dataset.manifest.failures.iter().map(|f| (f.index, &f.traces)))
        .flat_map(|(cluster, ts)| ts.iter().map(move |t| TraceLine { cluster, record: t.clone() }));
    let mut traces: Vec<TraceLine> = traces.collect();
    traces.sort_by_key(|t| t.cluster);
    write_jsonl(&dir.join(TRACES_FILE), traces)?;
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&dataset.manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))
}

/// Reads a dataset written by [`write_dataset`], validating every record.
pub fn read_dataset(dir: &Path) -> Result<Dataset, DatasetError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut manifest: DatasetManifest = parse_line(&text, MANIFEST_FILE, 1)?;
    let mut clusters: Vec<Cluster> = read_jsonl(dir, CLUSTERS_FILE)?;
    let pairs: Vec<PreferencePair> = read_jsonl(dir, PAIRS_FILE)?;
    let traces: Vec<TraceLine> = read_jsonl(dir, TRACES_FILE)?;
    for t in traces {
        if let Some(c) = clusters.iter_mut().find(|c| c.index == t.cluster) {
            c.traces.push(t.record);
        } else if let Some(f) = manifest.failures.iter_mut().find(|f| f.index == t.cluster) {
            f.traces.push(t.record);
        } else {
            return Err(DatasetError::Inconsistent(format!("trace for unknown cluster {}", t.cluster)));
        }
    }
    let ds = Dataset { manifest, clusters, pairs };
    ds.check()?;
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub clusters: usize,
    pub failed_clusters: usize,
    pub negatives: usize,
    pub dropped_negatives: usize,
    pub negatives_mean: f64,
    pub negatives_min: usize,
    pub negatives_max: usize,
    /// Negative count per distance.
    pub distance_histogram: BTreeMap<u32, usize>,
    pub anchor_pairs: usize,
    pub intra_pairs: usize,
    pub tool_calls: ToolCounters,
    /// Tool calls per agent role.
    pub calls_by_role: BTreeMap<String, ToolCounters>,
}

pub fn dataset_stats(ds: &Dataset) -> DatasetStats {
    let per: Vec<usize> = ds.clusters.iter().map(|c| c.negatives.len()).collect();
    let negatives: usize = per.iter().sum();
    let mut hist = BTreeMap::new();
    for n in ds.clusters.iter().flat_map(|c| &c.negatives) {
        *hist.entry(n.distance).or_insert(0) += 1;
    }
    let anchor = ds.pairs.iter().filter(|p| matches!(p.source, PairSource::Anchor { .. })).count();
    let mut by_role: BTreeMap<String, ToolCounters> = BTreeMap::new();
    let traces = ds.clusters.iter().flat_map(|c| &c.traces).chain(ds.manifest.failures.iter().flat_map(|f| &f.traces));
    for t in traces {
        let name = match t.role {
            Role::ImageGen => "image_gen",
            Role::ImageEdit => "image_edit",
            Role::DistanceEstimator => "distance_estimator",
            Role::Orchestrator => "orchestrator",
        };
        by_role.entry(name.to_string()).or_default().add(t.trace.counters());
    }
    DatasetStats {
        clusters: ds.clusters.len(),
        failed_clusters: ds.manifest.failures.len(),
        negatives,
        dropped_negatives: ds.clusters.iter().map(|c| c.dropped).sum(),
        negatives_mean: if per.is_empty() { 0.0 } else { negatives as f64 / per.len() as f64 },
        negatives_min: per.iter().copied().min().unwrap_or(0),
        negatives_max: per.iter().copied().max().unwrap_or(0),
        distance_histogram: hist,
        anchor_pairs: anchor,
        intra_pairs: ds.pairs.len() - anchor,
        tool_calls: ds.manifest.tool_calls,
        calls_by_role: by_role,
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "clusters            {} ({} failed)", self.clusters, self.failed_clusters)?;
        writeln!(
            f,
            "negatives           {} (mean {:.2}, min {}, max {}, dropped {})",
            self.negatives, self.negatives_mean, self.negatives_min, self.negatives_max, self.dropped_negatives
        )?;
        writeln!(f, "pairs               {} anchor, {} intra", self.anchor_pairs, self.intra_pairs)?;
        writeln!(f, "distance histogram")?;
        for (d, n) in &self.distance_histogram {
            writeln!(f, "  d={d:<3} {n}")?;
        }
        let t = &self.tool_calls;
        writeln!(f, "tool calls          imggen {} edit {} vqa {} image {}", t.imggen, t.edit, t.vqa, t.image)?;
        for (role, c) in &self.calls_by_role {
            writeln!(f, "  {role:<18} imggen {} edit {} vqa {} image {}", c.imggen, c.edit, c.vqa, c.image)?;
        }
        Ok(())
    }
}
