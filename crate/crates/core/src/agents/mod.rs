//! Rule-based agents that build contrastive clusters with the tools: image
//! generation with verification, contrastive prompt writing, image editing,
//! distance scoring and pair filtering, plus the coordinator.

mod contrastive;
mod edit;
mod generate;
mod orchestrator;

pub use contrastive::contrastive_prompt_agent;
pub use edit::image_edit_agent;
pub use generate::image_gen_agent;
pub use orchestrator::{
    distance_estimator, orchestrate_cluster, orchestrate_dataset, pair_filter, Cluster, ClusterFailure, DatasetRun,
    DistanceMode, Negative, OrchestratorConfig, Role, TraceRecord,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{best_group_matching, AtomicEdit, EntityGroup, Prompt, Relation, Scene, SceneError, Vocabulary};
use crate::tools::{answer, AttributeKind, GroupRef, ToolBackend, ToolError, VqaAnswer, VqaQuery};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error("invalid budget: {0}")]
    Budget(String),
    #[error("scene admits no edits")]
    NoEdits,
}

/// Call limits for one agent run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentBudget {
    /// Generate plus edit calls.
    pub max_total_attempts: u32,
    pub max_initial_generations: u32,
    pub max_edit_calls: u32,
}

impl Default for AgentBudget {
    fn default() -> Self {
        AgentBudget { max_total_attempts: 10, max_initial_generations: 3, max_edit_calls: 10 }
    }
}

impl AgentBudget {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_total_attempts == 0 || self.max_initial_generations == 0 || self.max_edit_calls == 0 {
            return Err(AgentError::Budget("all limits must be at least 1".into()));
        }
        if self.max_initial_generations > self.max_total_attempts {
            return Err(AgentError::Budget("max_initial_generations exceeds max_total_attempts".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    Imggen,
    Edit,
    Vqa,
    Image,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCounters {
    pub imggen: u64,
    pub edit: u64,
    pub vqa: u64,
    pub image: u64,
}

impl ToolCounters {
    pub fn bump(&mut self, kind: ToolKind) {
        match kind {
            ToolKind::Imggen => self.imggen += 1,
            ToolKind::Edit => self.edit += 1,
            ToolKind::Vqa => self.vqa += 1,
            ToolKind::Image => self.image += 1,
        }
    }

    pub fn add(&mut self, other: &ToolCounters) {
        self.imggen += other.imggen;
        self.edit += other.edit;
        self.vqa += other.vqa;
        self.image += other.image;
    }

    pub fn total(&self) -> u64 {
        self.imggen + self.edit + self.vqa + self.image
    }
}

/// One tool call, or a pure decision when `tool` is `None`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub tool: Option<ToolKind>,
    pub request: String,
    pub response: String,
    pub note: String,
}

/// Append-only record of what an agent asked and decided.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentTrace {
    steps: Vec<TraceStep>,
    counters: ToolCounters,
}

impl AgentTrace {
    pub fn steps(&self) -> &[TraceStep] {
        &self.steps
    }

    pub fn counters(&self) -> &ToolCounters {
        &self.counters
    }

    pub fn push(&mut self, step: TraceStep) {
        if let Some(kind) = step.tool {
            self.counters.bump(kind);
        }
        self.steps.push(step);
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.push(TraceStep { tool: None, request: String::new(), response: String::new(), note: note.into() });
    }

    /// Counters recomputed from the steps.
    pub fn tally(&self) -> ToolCounters {
        let mut c = ToolCounters::default();
        for s in &self.steps {
            if let Some(k) = s.tool {
                c.bump(k);
            }
        }
        c
    }

    pub fn is_consistent(&self) -> bool {
        self.tally() == self.counters
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AgentStatus {
    Success { image_id: String },
    Failed { reason: String },
}

impl AgentStatus {
    pub fn image_id(&self) -> Option<&str> {
        match self {
            AgentStatus::Success { image_id } => Some(image_id),
            AgentStatus::Failed { .. } => None,
        }
    }
}

/// Outcome of one agent run with everything it did.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRun {
    pub status: AgentStatus,
    pub trace: AgentTrace,
}

/// A verifiable detail: a question and the answer a matching image gives.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detail {
    pub query: VqaQuery,
    pub expected: VqaAnswer,
}

/// One query per detail of `scene`: a count per group, the attribute list
/// of its category per specified attribute, and one check per relation.
pub fn details(scene: &Scene) -> Vec<Detail> {
    let mut qs = Vec::with_capacity(scene.detail_count());
    for g in &scene.groups {
        qs.push(VqaQuery::CountOf { category: g.category.clone(), color: g.color.clone(), size: g.size.clone() });
        if g.color.is_some() {
            qs.push(VqaQuery::AttributeOf { category: g.category.clone(), attribute: AttributeKind::Color });
        }
        if g.size.is_some() {
            qs.push(VqaQuery::AttributeOf { category: g.category.clone(), attribute: AttributeKind::Size });
        }
    }
    for r in &scene.relations {
        qs.push(VqaQuery::RelationHolds {
            subject: GroupRef::of(&scene.groups[r.subject]),
            predicate: r.predicate.clone(),
            object: GroupRef::of(&scene.groups[r.object]),
        });
    }
    qs.into_iter().map(|q| Detail { expected: answer(scene, &q), query: q }).collect()
}

fn show_edit(e: &AtomicEdit) -> String {
    serde_json::to_string(e).unwrap_or_default()
}

fn show_query(q: &VqaQuery) -> String {
    serde_json::to_string(q).unwrap_or_default()
}

fn show_answer(a: &VqaAnswer) -> String {
    serde_json::to_string(a).unwrap_or_default()
}

/// Tool access that records every call and retries transport failures once.
pub(crate) struct Session<'a> {
    tools: &'a dyn ToolBackend,
    pub trace: AgentTrace,
}

impl<'a> Session<'a> {
    pub fn new(tools: &'a dyn ToolBackend) -> Session<'a> {
        Session { tools, trace: AgentTrace::default() }
    }

    fn call<T>(
        &mut self,
        kind: ToolKind,
        request: String,
        f: impl Fn(&dyn ToolBackend) -> Result<T, ToolError>,
        show: impl Fn(&T) -> String,
    ) -> Result<T, ToolError> {
        let mut retried = false;
        loop {
            let r = f(self.tools);
            let response = match &r {
                Ok(v) => show(v),
                Err(e) => format!("error {}: {e}", e.code()),
            };
            let transport = matches!(r, Err(ToolError::Transport(_)));
            let note = if transport && !retried { "retrying once".to_string() } else { String::new() };
            self.trace.push(TraceStep { tool: Some(kind), request: request.clone(), response, note });
            if transport && !retried {
                retried = true;
                continue;
            }
            return r;
        }
    }

    pub fn generate(&mut self, prompt: &Prompt, seed: u64) -> Result<String, ToolError> {
        self.call(ToolKind::Imggen, format!("{} (seed {seed})", prompt.text), |t| t.generate(prompt, seed), |id| {
            id.clone()
        })
    }

    pub fn edit(&mut self, image_id: &str, e: &AtomicEdit) -> Result<String, ToolError> {
        self.call(ToolKind::Edit, format!("{image_id} {}", show_edit(e)), |t| t.edit(image_id, e), |id| id.clone())
    }

    pub fn vqa(&mut self, image_id: &str, q: &VqaQuery) -> Result<VqaAnswer, ToolError> {
        self.call(ToolKind::Vqa, format!("{image_id} {}", show_query(q)), |t| t.vqa(image_id, q), show_answer)
    }

    pub fn image_scene(&mut self, image_id: &str) -> Result<Scene, ToolError> {
        self.call(ToolKind::Image, image_id.to_string(), |t| t.image(image_id).map(|r| r.scene), |s| {
            serde_json::to_string(s).unwrap_or_default()
        })
    }

    /// Asks every detail and returns how many answers disagree.
    pub fn verify(&mut self, image_id: &str, details: &[Detail]) -> Result<usize, ToolError> {
        let mut wrong = 0;
        for d in details {
            if self.vqa(image_id, &d.query)? != d.expected {
                wrong += 1;
            }
        }
        Ok(wrong)
    }

    /// Reconstructs the image's scene from questions, assuming its
    /// categories and relation pairs come from the `references`.
    pub fn diagnose(&mut self, image_id: &str, references: &[&Scene], vocab: &Vocabulary) -> Result<Scene, AgentError> {
        let mut cats: Vec<&str> = references.iter().flat_map(|s| s.groups.iter().map(|g| g.category.as_str())).collect();
        cats.sort_by_key(|c| vocab.category_index(c));
        cats.dedup();
        let mut groups: Vec<EntityGroup> = Vec::new();
        for cat in cats {
            let colors = self.attributes(image_id, cat, AttributeKind::Color)?;
            let sizes = self.attributes(image_id, cat, AttributeKind::Size)?;
            for (c, s) in colors.into_iter().zip(sizes) {
                if c.count == 0 || c.count > vocab.max_count {
                    continue;
                }
                let g = EntityGroup { category: cat.to_string(), count: c.count, color: c.value, size: s.value };
                if groups.len() < vocab.max_groups && !groups.iter().any(|h| same_key(h, &g)) {
                    groups.push(g);
                }
            }
        }
        if groups.is_empty() {
            self.trace.note("diagnosis found no groups; assuming the first reference");
            return Ok(references[0].clone());
        }
        let observed = Scene::new(groups, vec![], vocab)?;
        let mut pairs: Vec<(usize, usize, String)> = Vec::new();
        for r in references {
            let m = best_group_matching(r, &observed, vocab)?;
            for rel in &r.relations {
                if let (Some(s), Some(o)) = (m[rel.subject], m[rel.object]) {
                    if !pairs.iter().any(|p| p.0 == s && p.1 == o) {
                        pairs.push((s, o, rel.predicate.clone()));
                    }
                }
            }
        }
        let mut relations = Vec::new();
        for (s, o, expected) in pairs {
            let mut order = vec![expected.clone()];
            order.extend(vocab.predicates.iter().filter(|p| **p != expected).cloned());
            for p in order {
                let q = VqaQuery::RelationHolds {
                    subject: GroupRef::of(&observed.groups[s]),
                    predicate: p.clone(),
                    object: GroupRef::of(&observed.groups[o]),
                };
                if self.vqa(image_id, &q)? == (VqaAnswer::Bool { value: true }) {
                    relations.push(Relation::new(s, &p, o));
                    break;
                }
            }
        }
        Ok(Scene::new(observed.groups, relations, vocab)?)
    }

    fn attributes(
        &mut self,
        image_id: &str,
        category: &str,
        attribute: AttributeKind,
    ) -> Result<Vec<crate::tools::AttributeValue>, ToolError> {
        let q = VqaQuery::AttributeOf { category: category.to_string(), attribute };
        Ok(match self.vqa(image_id, &q)? {
            VqaAnswer::Attributes { values } => values,
            _ => Vec::new(),
        })
    }
}

fn same_key(a: &EntityGroup, b: &EntityGroup) -> bool {
    a.category == b.category && a.color == b.color && a.size == b.size
}
