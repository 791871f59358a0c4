//! Agentic contrastive preference data over symbolic scenes, and
//! distance-aware preference optimization of a toy conditional denoiser.

pub mod scene;
pub mod tools;
pub mod agents;
pub mod dataset;
pub mod diffusion;
pub mod preference;
pub mod evaluation;
pub mod config;
pub mod pipeline;
pub mod cli;
