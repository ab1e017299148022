//! OpenAI-compatible chat-completion backend over blocking HTTP.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{BackendKind, BackendReply, ChatBackend, ChatRequest};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuthStyle {
    /// `Authorization: Bearer <key>`
    Bearer,
    /// `api-key: <key>` (Azure OpenAI)
    ApiKey,
}

/// Bounded exponential backoff. `max_attempts` counts the first try.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(16),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt.saturating_sub(1));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub auth: AuthStyle,
    pub request_timeout: Duration,
    pub retry: RetryPolicy,
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .finish_non_exhaustive()
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

enum Attempt {
    Done(BackendReply),
    Retry { reason: String, after: Option<Duration> },
    Fatal(String),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.request_timeout))
            .build()
            .into();
        HttpBackend { config, agent }
    }

    fn attempt(&self, request: &ChatRequest) -> Attempt {
        let mut messages = Vec::new();
        if !request.system.is_empty() {
            messages.push(json!({"role": "system", "content": request.system}));
        }
        messages.push(json!({"role": "user", "content": request.user}));
        let body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut builder = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            builder = match self.config.auth {
                AuthStyle::Bearer => builder.header("Authorization", format!("Bearer {key}")),
                AuthStyle::ApiKey => builder.header("api-key", key),
            };
        }
        let mut response = match builder.send_json(&body) {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retry {
                    reason: format!("transport: {e}"),
                    after: None,
                }
            }
        };
        let status = response.status().as_u16();
        if status == 200 {
            return match response.body_mut().read_json::<CompletionResponse>() {
                Ok(parsed) => match parsed.choices.into_iter().next().and_then(|c| c.message.content) {
                    Some(text) => Attempt::Done(BackendReply {
                        text,
                        usage: parsed.usage.map(|u| (u.prompt_tokens, u.completion_tokens)),
                    }),
                    None => Attempt::Fatal("response has no message content".into()),
                },
                Err(e) => Attempt::Fatal(format!("malformed completion body: {e}")),
            };
        }
        let after = response
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let detail = response.body_mut().read_to_string().unwrap_or_default();
        let reason = format!("HTTP {status}: {}", detail.chars().take(200).collect::<String>());
        if status == 408 || status == 429 || status >= 500 {
            Attempt::Retry { reason, after }
        } else {
            Attempt::Fatal(reason)
        }
    }
}

impl ChatBackend for HttpBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Http
    }

    fn send(&self, request: &ChatRequest) -> Result<BackendReply> {
        let policy = self.config.retry;
        let mut last = String::new();
        for attempt in 1..=policy.max_attempts.max(1) {
            match self.attempt(request) {
                Attempt::Done(reply) => return Ok(reply),
                Attempt::Fatal(reason) => return Err(Error::Gateway(reason)),
                Attempt::Retry { reason, after } => {
                    tracing::warn!(attempt, %reason, "chat completion failed");
                    last = reason;
                    if attempt < policy.max_attempts {
                        let delay = after.map_or_else(|| policy.delay(attempt), |d| d.min(policy.max_delay));
                        std::thread::sleep(delay);
                    }
                }
            }
        }
        Err(Error::Gateway(format!(
            "giving up after {} attempts: {last}",
            policy.max_attempts
        )))
    }
}
