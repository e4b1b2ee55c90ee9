//! Language-model access for the agent phases.
//!
//! Two backends implement [`ChatBackend`]: [`HttpBackend`] talks to an
//! OpenAI-style chat-completions endpoint and [`ReplayBackend`] plays a
//! scripted conversation back for deterministic runs.

mod http;
mod ledger;
pub mod parse;
mod prompt;
mod replay;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpBackend;
pub use ledger::{PhaseTokens, TokenLedger};
pub use parse::{parse_assessment, parse_evaluation, parse_thought_action, ParseError};
pub use prompt::{current_agent_block, PromptBuilder, PromptTemplates};
pub use replay::{ReplayBackend, ScriptEntry};

/// Which step of an agent's pipeline a model call serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    ThoughtAction,
    Validation,
    Assessment,
    Evaluation,
}

impl Phase {
    pub const ALL: [Phase; 4] = [
        Phase::ThoughtAction,
        Phase::Validation,
        Phase::Assessment,
        Phase::Evaluation,
    ];
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub phase: Phase,
}

impl ChatRequest {
    /// All message contents joined by newlines.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl ChatResponse {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// Rough token count: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// Sampling temperature per phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTemperatures {
    pub thought_action: f64,
    pub validation: f64,
    pub assessment: f64,
    pub evaluation: f64,
}

impl Default for PhaseTemperatures {
    fn default() -> Self {
        Self {
            thought_action: 0.6,
            validation: 0.0,
            assessment: 0.0,
            evaluation: 0.0,
        }
    }
}

impl PhaseTemperatures {
    pub fn for_phase(&self, phase: Phase) -> f64 {
        match phase {
            Phase::ThoughtAction => self.thought_action,
            Phase::Validation => self.validation,
            Phase::Assessment => self.assessment,
            Phase::Evaluation => self.evaluation,
        }
    }

    pub fn is_default(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub request_timeout_secs: f64,
    pub max_retries: u32,
    /// First retry delay; doubles on every further attempt.
    pub retry_base_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            request_timeout_secs: 60.0,
            max_retries: 3,
            retry_base_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Http(HttpConfig),
    Replay { script_path: PathBuf },
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion payload: {0}")]
    Payload(String),
    #[error("replay error: {0}")]
    Replay(String),
    #[error("backend contract violation: {0}")]
    Contract(String),
    #[error("backend configuration error: {0}")]
    Config(String),
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;

    /// Whether concurrent `complete` calls are allowed.
    fn supports_concurrency(&self) -> bool {
        true
    }
}

/// Opens the backend described by `config`. The seed is forwarded to HTTP
/// endpoints that support seeded sampling.
pub fn connect(config: &BackendConfig, seed: Option<u64>) -> Result<Box<dyn ChatBackend>, GatewayError> {
    Ok(match config {
        BackendConfig::Http(http) => Box::new(HttpBackend::new(http.clone())?.with_seed(seed)),
        BackendConfig::Replay { script_path } => Box::new(ReplayBackend::from_file(script_path)?),
    })
}

/// One-shot completion against a freshly opened backend.
pub fn complete(request: &ChatRequest, backend: &BackendConfig) -> Result<ChatResponse, GatewayError> {
    connect(backend, None)?.complete(request)
}
