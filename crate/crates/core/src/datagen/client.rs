//! Chat-completions client with a request-hash cassette.
//!
//! REPLAY answers only from the cassette and fails on a miss, so a replayed
//! run can never reach the network. RECORD forwards to the transport and
//! stores every exchange.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{LlmMode, LlmSettings};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("no cassette entry for request {hash}")]
    CassetteMiss { hash: String },
    #[error("replay mode needs a cassette path")]
    NoCassette,
    #[error("cassette {path}: {message}")]
    Cassette { path: PathBuf, message: String },
    #[error("request failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("unexpected response shape: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    /// Hex SHA-256 of the request JSON; the cassette key.
    pub fn hash(&self) -> String {
        let body = serde_json::to_string(self).expect("request serializes");
        hex::encode(Sha256::digest(body.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub request: ChatRequest,
    pub response: Value,
}

/// Recorded exchanges keyed by request hash.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cassette {
    pub entries: BTreeMap<String, CassetteEntry>,
}

impl Cassette {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClientError> {
        let path = path.as_ref();
        let err = |message: String| ClientError::Cassette {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClientError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("cassette serializes");
        std::fs::write(path, text + "\n").map_err(|e| ClientError::Cassette {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Sends one JSON body and returns the JSON reply.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        token: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<Value, String>;
}

/// HTTPS transport.
#[derive(Debug, Default)]
pub struct UreqTransport;

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        token: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<Value, String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        let mut req = agent.post(url);
        if let Some(t) = token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| e.to_string())
    }
}

pub struct LlmClient {
    settings: LlmSettings,
    transport: Option<Box<dyn Transport>>,
    cassette: Mutex<Cassette>,
    network_calls: AtomicUsize,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("mode", &self.settings.mode)
            .field("model", &self.settings.model)
            .finish()
    }
}

impl LlmClient {
    /// A client that only answers from `cassette`.
    pub fn replay(settings: LlmSettings, cassette: Cassette) -> Self {
        let settings = LlmSettings {
            mode: LlmMode::Replay,
            ..settings
        };
        Self {
            settings,
            transport: None,
            cassette: Mutex::new(cassette),
            network_calls: AtomicUsize::new(0),
        }
    }

    /// A LIVE or RECORD client over an explicit transport. A REPLAY mode in
    /// `settings` ignores the transport.
    pub fn with_transport(
        settings: LlmSettings,
        transport: Box<dyn Transport>,
        cassette: Cassette,
    ) -> Self {
        let transport = (settings.mode != LlmMode::Replay).then_some(transport);
        Self {
            settings,
            transport,
            cassette: Mutex::new(cassette),
            network_calls: AtomicUsize::new(0),
        }
    }

    /// Builds the client described by `settings`, loading its cassette.
    pub fn from_settings(settings: LlmSettings) -> Result<Self, ClientError> {
        let cassette = match (&settings.cassette, settings.mode) {
            (None, LlmMode::Replay) => return Err(ClientError::NoCassette),
            (Some(p), LlmMode::Replay) => Cassette::load(p)?,
            (Some(p), LlmMode::Record) if p.exists() => Cassette::load(p)?,
            _ => Cassette::default(),
        };
        Ok(match settings.mode {
            LlmMode::Replay => Self::replay(settings, cassette),
            _ => Self::with_transport(settings, Box::new(UreqTransport), cassette),
        })
    }

    pub fn settings(&self) -> &LlmSettings {
        &self.settings
    }

    /// Requests that went to the transport.
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn cassette(&self) -> Cassette {
        self.cassette.lock().expect("cassette lock").clone()
    }

    /// Writes the cassette to the configured path.
    pub fn save_cassette(&self) -> Result<(), ClientError> {
        let path = self
            .settings
            .cassette
            .as_ref()
            .ok_or(ClientError::NoCassette)?;
        self.cassette().save(path)
    }

    pub fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            model: self.settings.model.clone(),
            messages,
            temperature: self.settings.temperature,
        }
    }

    /// The assistant text for `messages`.
    pub fn complete(&self, messages: Vec<ChatMessage>) -> Result<String, ClientError> {
        let request = self.request(messages);
        let hash = request.hash();
        let cached = self
            .cassette
            .lock()
            .expect("cassette lock")
            .entries
            .get(&hash)
            .map(|e| e.response.clone());
        let response = match (self.settings.mode, cached) {
            (LlmMode::Replay | LlmMode::Record, Some(r)) => r,
            (LlmMode::Replay, None) => return Err(ClientError::CassetteMiss { hash }),
            (mode, _) => {
                let r = self.send(&request)?;
                if mode == LlmMode::Record {
                    let entry = CassetteEntry {
                        request,
                        response: r.clone(),
                    };
                    self.cassette
                        .lock()
                        .expect("cassette lock")
                        .entries
                        .insert(hash, entry);
                }
                r
            }
        };
        response["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                ClientError::Format(format!("no choices[0].message.content in {response}"))
            })
    }

    fn send(&self, request: &ChatRequest) -> Result<Value, ClientError> {
        let transport = self.transport.as_ref().ok_or(ClientError::Transport {
            attempts: 0,
            message: "no transport configured".into(),
        })?;
        let token = std::env::var(&self.settings.api_key_env).ok();
        if token.is_none() {
            log::warn!(
                "{} is not set; sending without credentials",
                self.settings.api_key_env
            );
        }
        let url = format!(
            "{}/chat/completions",
            self.settings.base_url.trim_end_matches('/')
        );
        let body = serde_json::to_value(request).expect("request serializes");
        let timeout = Duration::from_secs(self.settings.timeout_secs);
        let attempts = self.settings.retries + 1;
        let mut last = String::new();
        for i in 0..attempts {
            if i > 0 {
                std::thread::sleep(Duration::from_millis(500 << i.min(6)));
            }
            self.network_calls.fetch_add(1, Ordering::SeqCst);
            match transport.post_json(&url, token.as_deref(), &body, timeout) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::warn!("llm request attempt {} failed: {e}", i + 1);
                    last = e;
                }
            }
        }
        Err(ClientError::Transport {
            attempts,
            message: last,
        })
    }
}

/// A response body in chat-completions shape.
pub fn completion_body(content: &str) -> Value {
    serde_json::json!({ "choices": [ { "message": { "role": "assistant", "content": content } } ] })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo;

    impl Transport for Echo {
        fn post_json(
            &self,
            _: &str,
            _: Option<&str>,
            body: &Value,
            _: Duration,
        ) -> Result<Value, String> {
            let last = body["messages"].as_array().unwrap().last().unwrap()["content"]
                .as_str()
                .unwrap();
            Ok(completion_body(&format!("echo: {last}")))
        }
    }

    #[test]
    fn record_then_replay() {
        let settings = LlmSettings {
            mode: LlmMode::Record,
            ..LlmSettings::default()
        };
        let rec = LlmClient::with_transport(settings.clone(), Box::new(Echo), Cassette::default());
        assert_eq!(
            rec.complete(vec![ChatMessage::user("hi")]).unwrap(),
            "echo: hi"
        );
        assert_eq!(rec.network_calls(), 1);
        let replay = LlmClient::replay(settings, rec.cassette());
        assert_eq!(
            replay.complete(vec![ChatMessage::user("hi")]).unwrap(),
            "echo: hi"
        );
        assert!(matches!(
            replay.complete(vec![ChatMessage::user("other")]),
            Err(ClientError::CassetteMiss { .. })
        ));
        assert_eq!(replay.network_calls(), 0);
    }

    #[test]
    fn replay_ignores_a_transport() {
        let c =
            LlmClient::with_transport(LlmSettings::default(), Box::new(Echo), Cassette::default());
        assert!(c.complete(vec![ChatMessage::user("hi")]).is_err());
        assert_eq!(c.network_calls(), 0);
    }

    #[test]
    fn replay_requires_a_cassette_path() {
        assert!(matches!(
            LlmClient::from_settings(LlmSettings::default()),
            Err(ClientError::NoCassette)
        ));
    }
}
