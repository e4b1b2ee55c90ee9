use std::time::Duration;

use log::warn;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::json;

use super::{estimate_tokens, ChatBackend, ChatRequest, ChatResponse, GatewayError, HttpConfig};

/// Longest delay honoured from a `Retry-After` header.
const MAX_RETRY_AFTER: Duration = Duration::from_secs(30);

/// Client for `POST {endpoint}/chat/completions`.
#[derive(Debug)]
pub struct HttpBackend {
    config: HttpConfig,
    client: Client,
    api_key: Option<String>,
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

enum Attempt {
    Done(ChatResponse),
    Retry { message: String, wait: Option<Duration> },
    Fatal(GatewayError),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, GatewayError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GatewayError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        if config.request_timeout_secs.is_nan() || config.request_timeout_secs <= 0.0 {
            return Err(GatewayError::Config("request timeout must be positive".into()));
        }
        let client = Client::builder()
            .timeout(Duration::from_secs_f64(config.request_timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self {
            config,
            client,
            api_key,
            seed: None,
        })
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'))
    }

    fn body(&self, request: &ChatRequest) -> serde_json::Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = self.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn attempt(&self, request: &ChatRequest, body: &serde_json::Value) -> Attempt {
        let mut builder = self.client.post(self.url()).json(body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = match builder.send() {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retry {
                    message: e.to_string(),
                    wait: None,
                }
            }
        };
        let status = response.status();
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            let wait = response
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(|secs| Duration::from_secs(secs).min(MAX_RETRY_AFTER));
            return Attempt::Retry {
                message: format!("HTTP {}", status.as_u16()),
                wait,
            };
        }
        let text = match response.text() {
            Ok(t) => t,
            Err(e) => {
                return Attempt::Retry {
                    message: e.to_string(),
                    wait: None,
                }
            }
        };
        if !status.is_success() {
            return Attempt::Fatal(GatewayError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        let parsed: CompletionBody = match serde_json::from_str(&text) {
            Ok(p) => p,
            Err(e) => return Attempt::Fatal(GatewayError::Payload(e.to_string())),
        };
        let Some(content) = parsed.choices.into_iter().next().and_then(|c| c.message.content) else {
            return Attempt::Fatal(GatewayError::Payload("response has no message content".into()));
        };
        let (prompt_tokens, completion_tokens) = match parsed.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens),
            None => (estimate_tokens(&request.prompt_text()), estimate_tokens(&content)),
        };
        Attempt::Done(ChatResponse {
            text: content,
            prompt_tokens,
            completion_tokens,
        })
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let body = self.body(request);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(request, &body) {
                Attempt::Done(response) => return Ok(response),
                Attempt::Fatal(err) => return Err(err),
                Attempt::Retry { message, wait } => {
                    if attempts > self.config.max_retries {
                        return Err(GatewayError::Transport { attempts, message });
                    }
                    let backoff = Duration::from_millis(
                        self.config.retry_base_ms.saturating_mul(1 << (attempts - 1).min(16)),
                    );
                    let delay = wait.unwrap_or(backoff);
                    warn!("completion attempt {attempts} failed ({message}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                }
            }
        }
    }
}
