//! Run configuration shared by the CLI and library entry points.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::align::AlignConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for corpus commands.
    pub parallelism: usize,
    pub paths: PathsConfig,
    pub align: AlignSettings,
    pub datagen: DatagenSettings,
    pub llm: LlmSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            parallelism: 4,
            paths: PathsConfig::default(),
            align: AlignSettings::default(),
            datagen: DatagenSettings::default(),
            llm: LlmSettings::default(),
        }
    }
}

impl RunConfig {
    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn header(&self) -> RunHeader {
        RunHeader {
            tool: "safeplan".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: self.hash(),
        }
    }
}

/// Stamped onto every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunHeader {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub scene: Option<PathBuf>,
    pub ruleset: Option<PathBuf>,
    pub semantics: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub prompts_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignSettings {
    pub beta: f64,
    pub mu: f64,
    /// γ is given relative to β, as γ/β.
    pub gamma_beta_ratio: f64,
}

impl Default for AlignSettings {
    fn default() -> Self {
        Self {
            beta: 2.0,
            mu: 0.75,
            gamma_beta_ratio: 0.5,
        }
    }
}

impl AlignSettings {
    pub fn to_config(&self) -> AlignConfig {
        AlignConfig::from_ratio(self.beta, self.mu, self.gamma_beta_ratio)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatagenSettings {
    pub rounds: usize,
    pub dedup_tau: f64,
    /// Total generation attempts per pair.
    pub max_attempts: usize,
    pub min_unsafe_len: usize,
    /// Extra tries when a generated scene does not parse.
    pub schema_retries: usize,
}

impl Default for DatagenSettings {
    fn default() -> Self {
        Self {
            rounds: 2,
            dedup_tau: 0.7,
            max_attempts: 3,
            min_unsafe_len: 3,
            schema_retries: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmMode {
    Live,
    Replay,
    Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub mode: LlmMode,
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub retries: u32,
    pub temperature: f64,
    pub cassette: Option<PathBuf>,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            mode: LlmMode::Replay,
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60,
            retries: 2,
            temperature: 0.7,
            cassette: None,
        }
    }
}
