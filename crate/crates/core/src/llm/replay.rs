use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{estimate_tokens, ChatBackend, ChatRequest, ChatResponse, GatewayError, Phase};

/// One scripted completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub phase: Phase,
    /// Substring the prompt must contain for this entry to apply.
    #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
    pub match_text: Option<String>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
}

impl ScriptEntry {
    pub fn new(phase: Phase, text: impl Into<String>) -> Self {
        Self {
            phase,
            match_text: None,
            text: text.into(),
            prompt_tokens: None,
            completion_tokens: None,
        }
    }
}

/// Plays back a script entry by entry. Strictly sequential: overlapping
/// calls are rejected.
#[derive(Debug)]
pub struct ReplayBackend {
    entries: Vec<ScriptEntry>,
    cursor: Mutex<usize>,
    busy: AtomicBool,
}

impl ReplayBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self {
            entries,
            cursor: Mutex::new(0),
            busy: AtomicBool::new(false),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("cannot read replay script {}: {e}", path.display())))?;
        Self::from_json(&raw)
    }

    pub fn from_json(raw: &str) -> Result<Self, GatewayError> {
        let entries: Vec<ScriptEntry> = serde_json::from_str(raw)
            .map_err(|e| GatewayError::Config(format!("malformed replay script: {e}")))?;
        Ok(Self::new(entries))
    }

    /// Number of entries consumed so far.
    pub fn cursor(&self) -> usize {
        *self.cursor.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn remaining(&self) -> usize {
        self.entries.len() - self.cursor()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn next(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let mut cursor = self.cursor.lock().unwrap_or_else(|e| e.into_inner());
        let Some(entry) = self.entries.get(*cursor) else {
            return Err(GatewayError::Replay(format!(
                "script exhausted after {} entries; expected phase {}",
                self.entries.len(),
                request.phase
            )));
        };
        if entry.phase != request.phase {
            return Err(GatewayError::Replay(format!(
                "entry {} is scripted for phase {} but the request expected phase {}",
                *cursor, entry.phase, request.phase
            )));
        }
        let prompt = request.prompt_text();
        if let Some(needle) = &entry.match_text {
            if !prompt.contains(needle.as_str()) {
                return Err(GatewayError::Replay(format!(
                    "entry {} (phase {}) requires the prompt to contain {needle:?}",
                    *cursor, request.phase
                )));
            }
        }
        *cursor += 1;
        Ok(ChatResponse {
            text: entry.text.clone(),
            prompt_tokens: entry.prompt_tokens.unwrap_or_else(|| estimate_tokens(&prompt)),
            completion_tokens: entry
                .completion_tokens
                .unwrap_or_else(|| estimate_tokens(&entry.text)),
        })
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        if self
            .busy
            .compare_exchange(false, true, Ordering::Acquire, Ordering::Relaxed)
            .is_err()
        {
            return Err(GatewayError::Contract(
                "replay backend used from more than one task at once".into(),
            ));
        }
        let result = self.next(request);
        self.busy.store(false, Ordering::Release);
        result
    }

    fn supports_concurrency(&self) -> bool {
        false
    }
}
