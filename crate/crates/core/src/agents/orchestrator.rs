use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scene::{edit_distance, satisfies, Prompt, Scene, Vocabulary};
use crate::tools::{mix, ToolBackend};

use super::{
    contrastive_prompt_agent, image_edit_agent, image_gen_agent, AgentBudget, AgentError, AgentStatus, AgentTrace,
    Session, ToolCounters,
};

/// How negative distances are scored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DistanceMode {
    /// Exact edit distance between the stored scenes.
    Exact,
    /// Exact distance shifted by one in a random direction with probability
    /// `flip_prob`, never below 1.
    Noisy { flip_prob: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrchestratorConfig {
    /// Negatives requested per cluster.
    pub k_target: usize,
    pub budget: AgentBudget,
    pub distance_mode: DistanceMode,
    pub seed: u64,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig { k_target: 10, budget: AgentBudget::default(), distance_mode: DistanceMode::Exact, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    ImageGen,
    ImageEdit,
    DistanceEstimator,
    Orchestrator,
}

/// The trace of one agent invocation within a cluster.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub role: Role,
    /// Prompt text the agent worked towards.
    pub target: String,
    pub trace: AgentTrace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Negative {
    pub prompt: Prompt,
    pub image_id: String,
    /// Stored scene of the image, equal to the prompt's scene.
    pub scene: Scene,
    pub distance: u32,
}

/// A verified positive with its negatives sorted by distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub index: usize,
    pub prompt: Prompt,
    pub positive_image: String,
    pub positive_scene: Scene,
    pub negatives: Vec<Negative>,
    /// Negative prompts whose edit did not succeed.
    pub dropped: usize,
    #[serde(skip)]
    pub traces: Vec<TraceRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterFailure {
    pub index: usize,
    pub prompt: String,
    pub reason: String,
    #[serde(skip)]
    pub traces: Vec<TraceRecord>,
}

impl Cluster {
    pub fn counters(&self) -> ToolCounters {
        sum_counters(&self.traces)
    }
}

impl ClusterFailure {
    pub fn counters(&self) -> ToolCounters {
        sum_counters(&self.traces)
    }
}

fn sum_counters(traces: &[TraceRecord]) -> ToolCounters {
    let mut c = ToolCounters::default();
    for t in traces {
        c.add(t.trace.counters());
    }
    c
}

/// Scores a negative against the positive by the edit distance between
/// their stored scenes.
pub fn distance_estimator(
    tools: &dyn ToolBackend,
    positive_image: &str,
    negative_image: &str,
    mode: &DistanceMode,
    noise_seed: u64,
    vocab: &Vocabulary,
) -> (Result<u32, AgentError>, AgentTrace) {
    let mut s = Session::new(tools);
    let r = estimate(&mut s, positive_image, negative_image, mode, noise_seed, vocab);
    (r, s.trace)
}

fn estimate(
    s: &mut Session,
    positive_image: &str,
    negative_image: &str,
    mode: &DistanceMode,
    noise_seed: u64,
    vocab: &Vocabulary,
) -> Result<u32, AgentError> {
    let a = s.image_scene(positive_image)?;
    let b = s.image_scene(negative_image)?;
    let d = edit_distance(&a, &b, vocab)?.distance;
    let d = match mode {
        DistanceMode::Exact => d,
        DistanceMode::Noisy { flip_prob } => {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            if rng.random_bool(flip_prob.clamp(0.0, 1.0)) {
                if rng.random_bool(0.5) {
                    d + 1
                } else {
                    d.saturating_sub(1).max(1)
                }
            } else {
                d
            }
        }
    };
    s.trace.note(format!("distance {d}"));
    Ok(d)
}

/// Whether `negative_scene` can serve as a negative for the member with
/// `positive_prompt`: that member's image satisfies its prompt and the
/// other image fails at least one of the prompt's details.
pub fn pair_filter(positive_prompt: &Scene, positive_scene: &Scene, negative_scene: &Scene) -> bool {
    satisfies(positive_prompt, positive_scene) && !satisfies(positive_prompt, negative_scene)
}

/// Builds one cluster: a verified positive image, negative prompts, an
/// edited and verified image per negative, and the distance of each.
pub fn orchestrate_cluster(
    index: usize,
    prompt: &Prompt,
    tools: &dyn ToolBackend,
    config: &OrchestratorConfig,
    vocab: &Vocabulary,
) -> Result<Cluster, ClusterFailure> {
    let seed = mix(config.seed, index as u64);
    let mut traces = Vec::new();
    let fail = |reason: String, traces: Vec<TraceRecord>| ClusterFailure {
        index,
        prompt: prompt.text.clone(),
        reason,
        traces,
    };
    let gen = image_gen_agent(prompt, tools, &config.budget, vocab, seed);
    traces.push(TraceRecord { role: Role::ImageGen, target: prompt.text.clone(), trace: gen.trace });
    let positive = match gen.status {
        AgentStatus::Success { image_id } => image_id,
        AgentStatus::Failed { reason } => return Err(fail(format!("positive not produced: {reason}"), traces)),
    };

    let mut own = Session::new(tools);
    let positive_scene = match own.image_scene(&positive) {
        Ok(s) => s,
        Err(e) => {
            traces.push(TraceRecord { role: Role::Orchestrator, target: prompt.text.clone(), trace: own.trace });
            return Err(fail(e.to_string(), traces));
        }
    };
    if positive_scene != prompt.scene {
        own.trace.note("accepted positive does not match its prompt");
        traces.push(TraceRecord { role: Role::Orchestrator, target: prompt.text.clone(), trace: own.trace });
        return Err(fail("positive failed the stored-scene check".into(), traces));
    }
    let prompts = match contrastive_prompt_agent(prompt, config.k_target, mix(seed, 1), vocab) {
        Ok(p) => p,
        Err(e) => {
            traces.push(TraceRecord { role: Role::Orchestrator, target: prompt.text.clone(), trace: own.trace });
            return Err(fail(e.to_string(), traces));
        }
    };
    own.trace.note(format!("{} negative prompts", prompts.len()));

    let mut negatives = Vec::new();
    let mut dropped = 0;
    for (k, neg) in prompts.into_iter().enumerate() {
        let run = image_edit_agent(&positive, prompt, &neg, tools, &config.budget, vocab);
        traces.push(TraceRecord { role: Role::ImageEdit, target: neg.text.clone(), trace: run.trace });
        let Some(image_id) = run.status.image_id().map(str::to_string) else {
            dropped += 1;
            continue;
        };
        let scene = match own.image_scene(&image_id) {
            Ok(s) if s == neg.scene => s,
            _ => {
                own.trace.note(format!("dropping `{}`: stored scene differs", neg.text));
                dropped += 1;
                continue;
            }
        };
        let (d, trace) =
            distance_estimator(tools, &positive, &image_id, &config.distance_mode, mix(seed, 2 + k as u64), vocab);
        traces.push(TraceRecord { role: Role::DistanceEstimator, target: neg.text.clone(), trace });
        match d {
            Ok(distance) => negatives.push(Negative { prompt: neg, image_id, scene, distance }),
            Err(_) => dropped += 1,
        }
    }
    traces.push(TraceRecord { role: Role::Orchestrator, target: prompt.text.clone(), trace: own.trace });
    if negatives.is_empty() {
        return Err(fail("no negative survived".into(), traces));
    }
    negatives.sort_by(|a, b| a.distance.cmp(&b.distance).then_with(|| a.prompt.text.cmp(&b.prompt.text)));
    Ok(Cluster { index, prompt: prompt.clone(), positive_image: positive, positive_scene, negatives, dropped, traces })
}

/// All clusters of a run, in prompt order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetRun {
    pub clusters: Vec<Cluster>,
    pub failures: Vec<ClusterFailure>,
}

impl DatasetRun {
    pub fn counters(&self) -> ToolCounters {
        let mut c = ToolCounters::default();
        for x in &self.clusters {
            c.add(&x.counters());
        }
        for x in &self.failures {
            c.add(&x.counters());
        }
        c
    }
}

/// Builds a cluster per prompt on `parallelism` worker threads. Output is
/// in prompt order; it is reproducible only with one worker, since workers
/// share the tool's random streams.
pub fn orchestrate_dataset(
    prompts: &[Prompt],
    tools: &dyn ToolBackend,
    config: &OrchestratorConfig,
    parallelism: usize,
    vocab: &Vocabulary,
) -> DatasetRun {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Cluster, ClusterFailure>>>> = Mutex::new(vec![None; prompts.len()]);
    std::thread::scope(|scope| {
        for _ in 0..parallelism.max(1).min(prompts.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= prompts.len() {
                    break;
                }
                let r = orchestrate_cluster(i, &prompts[i], tools, config, vocab);
                if let Err(f) = &r {
                    log::warn!("cluster {i} failed: {}", f.reason);
                }
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    let mut run = DatasetRun::default();
    for r in results.into_inner().expect("results lock").into_iter().flatten() {
        match r {
            Ok(c) => run.clusters.push(c),
            Err(f) => run.failures.push(f),
        }
    }
    run
}
