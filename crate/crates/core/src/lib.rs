//! Conjecturing-proving loop: a conjecturer model proposes Lean 4 theorem
//! statements, a Lean verifier filters them for validity and novelty, a
//! prover model proves them with verifier feedback, and verified theorems
//! accumulate in a library that is fed back as in-context material.

pub mod conjecture;
pub mod eval;
pub mod events;
pub mod gateway;
pub mod model;
pub mod orchestrator;
pub mod prover;
pub mod verifier;

use serde::{Deserialize, Serialize};

use gateway::{GatewayError, Sampling};
use model::ModelError;

/// Failures that stop an engine mid-way.
#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("cannot build prompt context: {0}")]
    Context(#[from] ModelError),
    #[error("cannot write event log: {0}")]
    Events(#[from] std::io::Error),
}

/// System prompt and sampling for one model role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolePrompt {
    pub system_prompt: String,
    #[serde(default)]
    pub sampling: Sampling,
}

impl RolePrompt {
    pub fn new(system_prompt: &str) -> Self {
        Self {
            system_prompt: system_prompt.to_string(),
            sampling: Sampling::default(),
        }
    }
}
