//! Hazardous task generation and preference-pair construction.
//!
//! Tasks come from role-playing LLM agents over several rounds, kept only
//! when they are dissimilar to everything accepted before. Pairs come from
//! asking the LLM for an unsafe variant of a safe plan and keeping it only
//! when the simulator and the detector agree it executes and is unsafe.

mod client;
mod export;
mod pairs;
mod prompts;
mod tasks;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{
    completion_body, Cassette, CassetteEntry, ChatMessage, ChatRequest, ClientError, LlmClient,
    Transport, UreqTransport,
};
pub use export::{export_dataset, import_dataset, manifest_path, DatasetRecord, Manifest};
pub use pairs::{build_pairs, PairGenConfig, PairSeed, PairStatus, RawPair};
pub use prompts::{render, PromptTemplates};
pub use tasks::{
    generate_tasks, load_seeds, DroppedCandidate, SeedTask, TaskGenConfig, TaskGenOutput,
};

use crate::world::SceneGraph;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("io: {0}")]
    Io(String),
}

/// A persona taking part in task generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentRole {
    pub name: String,
    pub persona_prompt: String,
    #[serde(default)]
    pub focus_categories: Vec<String>,
}

impl AgentRole {
    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.name.trim().is_empty() || self.persona_prompt.trim().is_empty() {
            return Err(DatagenError::InvalidInput(format!(
                "role {:?} needs a name and a persona",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub roles: Vec<String>,
    pub round: usize,
    pub seed_ids: Vec<String>,
}

/// A task with the environment it happens in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedTask {
    pub id: String,
    pub task_text: String,
    pub scene: SceneGraph,
    pub hazard_tags: Vec<String>,
    pub provenance: Provenance,
}

/// Text between the first `{` and the last `}`, which tolerates code fences
/// and chatter around a JSON reply.
pub(crate) fn json_object(reply: &str) -> Option<&str> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    (end > start).then(|| &reply[start..=end])
}
