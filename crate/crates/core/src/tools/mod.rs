//! Simulated generation, editing and question-answering tools, served in
//! process or over HTTP behind one interface.

mod http;
mod service;
mod vqa;

pub use http::{serve, HttpToolClient, ServerHandle};
pub use service::ToolService;
pub(crate) use service::mix;
pub use vqa::{answer, AttributeKind, AttributeValue, GroupRef, VqaAnswer, VqaQuery};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{AtomicEdit, Prompt, Scene};

/// Version tag carried by every wire message.
pub const WIRE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolError {
    #[error("image `{0}` not found")]
    NotFound(String),
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("malformed request: {0}")]
    BadRequest(String),
    #[error("transport failure: {0}")]
    Transport(String),
}

impl ToolError {
    pub fn code(&self) -> &'static str {
        match self {
            ToolError::NotFound(_) => "not_found",
            ToolError::Validation(_) => "validation",
            ToolError::BadRequest(_) => "bad_request",
            ToolError::Transport(_) => "transport",
        }
    }
}

/// Error rates of the simulated tools. Corruptions only change or remove
/// existing content; they never add groups, relations or attributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseProfile {
    /// Probability that each detail of the prompt is corrupted on generation.
    pub gen_detail_error_rate: f64,
    /// Probability that an edit is replaced by a no-op or a wrong edit.
    pub edit_failure_rate: f64,
    /// Probability that an edit also changes something elsewhere.
    pub edit_side_effect_rate: f64,
    /// Probability that a VQA answer is replaced by a wrong one.
    pub vqa_error_rate: f64,
    pub seed: u64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        NoiseProfile {
            gen_detail_error_rate: 0.3,
            edit_failure_rate: 0.1,
            edit_side_effect_rate: 0.05,
            vqa_error_rate: 0.0,
            seed: 0,
        }
    }
}

impl NoiseProfile {
    pub fn perfect(seed: u64) -> NoiseProfile {
        NoiseProfile {
            gen_detail_error_rate: 0.0,
            edit_failure_rate: 0.0,
            edit_side_effect_rate: 0.0,
            vqa_error_rate: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("gen_detail_error_rate", self.gen_detail_error_rate),
            ("edit_failure_rate", self.edit_failure_rate),
            ("edit_side_effect_rate", self.edit_side_effect_rate),
            ("vqa_error_rate", self.vqa_error_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Generated { prompt: String, seed: u64 },
    Edited { from_id: String, edit: AtomicEdit },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub scene: Scene,
    pub provenance: Provenance,
    /// Logical timestamp: position in the append-only store.
    pub created_at: u64,
}

/// Per-endpoint counts of successfully parsed requests.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolStats {
    pub imggen_calls: u64,
    pub edit_calls: u64,
    pub vqa_calls: u64,
    pub image_calls: u64,
    pub images: u64,
}

/// The tool interface used by agents; implemented in process by
/// [`ToolService`] and over HTTP by [`HttpToolClient`].
pub trait ToolBackend: Send + Sync {
    fn generate(&self, prompt: &Prompt, seed: u64) -> Result<String, ToolError>;
    fn edit(&self, image_id: &str, edit: &AtomicEdit) -> Result<String, ToolError>;
    fn vqa(&self, image_id: &str, query: &VqaQuery) -> Result<VqaAnswer, ToolError>;
    fn image(&self, image_id: &str) -> Result<ImageRecord, ToolError>;
    fn stats(&self) -> Result<ToolStats, ToolError>;
}

impl<T: ToolBackend + ?Sized> ToolBackend for std::sync::Arc<T> {
    fn generate(&self, prompt: &Prompt, seed: u64) -> Result<String, ToolError> {
        (**self).generate(prompt, seed)
    }
    fn edit(&self, image_id: &str, edit: &AtomicEdit) -> Result<String, ToolError> {
        (**self).edit(image_id, edit)
    }
    fn vqa(&self, image_id: &str, query: &VqaQuery) -> Result<VqaAnswer, ToolError> {
        (**self).vqa(image_id, query)
    }
    fn image(&self, image_id: &str) -> Result<ImageRecord, ToolError> {
        (**self).image(image_id)
    }
    fn stats(&self) -> Result<ToolStats, ToolError> {
        (**self).stats()
    }
}

/// Request and response bodies of the HTTP protocol.
pub mod wire {
    use super::*;

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct GenerateRequest {
        pub v: u32,
        pub prompt: String,
        pub seed: u64,
    }

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct EditRequest {
        pub v: u32,
        pub image_id: String,
        pub edit: AtomicEdit,
    }

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct VqaRequest {
        pub v: u32,
        pub image_id: String,
        pub query: VqaQuery,
    }

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct ImageIdResponse {
        pub v: u32,
        pub image_id: String,
    }

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct VqaResponse {
        pub v: u32,
        pub answer: VqaAnswer,
    }

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct ImageResponse {
        pub v: u32,
        pub record: ImageRecord,
    }

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct StatsResponse {
        pub v: u32,
        pub stats: ToolStats,
    }

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct ErrorBody {
        pub code: String,
        pub message: String,
    }

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct ErrorResponse {
        pub v: u32,
        pub error: ErrorBody,
    }
}
