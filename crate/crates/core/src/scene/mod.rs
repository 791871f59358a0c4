//! Symbolic scenes, canonical prompts, atomic edits, exact edit distance and
//! the continuous scene embedding.

mod codec;
mod diff;
mod distance;
mod edit;
mod generate;
mod model;
mod prompt;
mod vocab;

pub use codec::{Codec, DEFAULT_LATENT_DIM};
pub use diff::{best_group_matching, satisfies, scene_diff, Discrepancy};
pub use distance::{edit_distance, edit_distance_bounded, plan_edits, DistanceResult, EditSearch, PreparedScene};
pub use edit::{apply_edit, enumerate_edits, inverse_edit, AtomicEdit};
pub use generate::{enumerate_scenes, SceneSampler};
pub use model::{EntityGroup, Relation, Scene};
pub use prompt::{parse_prompt, render_prompt, Prompt};
pub use vocab::{plural, Vocabulary};

pub(crate) use edit::{apply_packed, moves, PEdit};
pub(crate) use model::{Dims, Packed};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SceneError {
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),
    #[error("unknown {kind} `{word}`")]
    UnknownWord { kind: &'static str, word: String },
    #[error("count {count} outside 1..={max}")]
    CountRange { count: u32, max: u32 },
    #[error("group index {index} out of range for {len} groups")]
    GroupIndex { index: usize, len: usize },
    #[error("scene must have 1..={max} groups, got {len}")]
    GroupCount { len: usize, max: usize },
    #[error("group {group} repeats the category/color/size of another group")]
    DuplicateGroup { group: usize },
    #[error("relation on group {group} refers to itself")]
    SelfRelation { group: usize },
    #[error("a relation from group {subject} to group {object} already exists")]
    DuplicateRelation { subject: usize, object: usize },
    #[error("no relation from group {subject} to group {object}")]
    MissingRelation { subject: usize, object: usize },
    #[error("cannot remove the last group")]
    LastGroup,
    #[error("group {group} has count {count}; only single entities can be removed")]
    NotSingular { group: usize, count: u32 },
    #[error("group {group} still takes part in relations")]
    GroupHasRelations { group: usize },
    #[error("cannot parse prompt `{text}`: {reason}")]
    Parse { text: String, reason: String },
    #[error("expected a vector of length {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("candidate list is empty")]
    EmptyCandidates,
}
