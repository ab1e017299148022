//! Chat-completion gateway used by the three agents.
//!
//! [`Gateway`] wraps a [`ChatBackend`] (live HTTP or a scripted mock),
//! applies per-role generation settings, and records every call as a
//! [`ChatExchange`].

mod extract;
mod http;
mod mock;
mod prompt;

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use extract::{extract_code, BEGIN_MARKER, END_MARKER};
pub use http::{AuthStyle, HttpBackend, HttpConfig, RetryPolicy};
pub use mock::{MockBackend, MockScript};
pub use prompt::{required_fields, PromptContext, PromptLibrary, RenderedPrompt, TEMPLATE_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Detection,
    Repair,
    Review,
}

impl AgentRole {
    pub const ALL: [AgentRole; 3] = [AgentRole::Detection, AgentRole::Repair, AgentRole::Review];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Detection => "detection",
            AgentRole::Repair => "repair",
            AgentRole::Review => "review",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role: AgentRole,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

/// Raw backend answer. `usage` is `(input, output)` tokens when reported.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendReply {
    pub text: String,
    pub usage: Option<(u64, u64)>,
}

/// One recorded call: prompts, verbatim response, settings, token counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub role: AgentRole,
    pub system_prompt: String,
    pub user_prompt: String,
    pub response: String,
    pub backend: BackendKind,
    pub temperature: f64,
    pub max_tokens: u32,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

pub trait ChatBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn send(&self, request: &ChatRequest) -> Result<BackendReply>;

    /// Fails if a scripted backend still holds unconsumed responses.
    fn finish(&self) -> Result<()> {
        Ok(())
    }
}

/// Whitespace-token approximation used when a backend reports no usage.
pub fn approximate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleSettings {
    pub temperature: f64,
    pub max_tokens: u32,
}

/// Generation settings per agent role. Detection samples at temperature 1
/// for diverse candidates; repair and review are greedy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSettings {
    pub detection: RoleSettings,
    pub repair: RoleSettings,
    pub review: RoleSettings,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        GenerationSettings {
            detection: RoleSettings {
                temperature: 1.0,
                max_tokens: 4096,
            },
            repair: RoleSettings {
                temperature: 0.0,
                max_tokens: 4096,
            },
            review: RoleSettings {
                temperature: 0.0,
                max_tokens: 4096,
            },
        }
    }
}

impl GenerationSettings {
    pub fn for_role(&self, role: AgentRole) -> RoleSettings {
        match role {
            AgentRole::Detection => self.detection,
            AgentRole::Repair => self.repair,
            AgentRole::Review => self.review,
        }
    }
}

#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    settings: GenerationSettings,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.kind())
            .field("settings", &self.settings)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Gateway {
            backend,
            settings: GenerationSettings::default(),
        }
    }

    pub fn with_settings(mut self, settings: GenerationSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind()
    }

    pub fn complete(&self, role: AgentRole, prompt: &RenderedPrompt) -> Result<ChatExchange> {
        let settings = self.settings.for_role(role);
        let request = ChatRequest {
            role,
            system: prompt.system.clone(),
            user: prompt.user.clone(),
            temperature: settings.temperature,
            max_tokens: settings.max_tokens,
        };
        let reply = self.backend.send(&request)?;
        let (input_tokens, output_tokens) = reply.usage.unwrap_or_else(|| {
            (
                approximate_tokens(&request.system) + approximate_tokens(&request.user),
                approximate_tokens(&reply.text),
            )
        });
        tracing::debug!(%role, input_tokens, output_tokens, "chat completion");
        Ok(ChatExchange {
            role,
            system_prompt: request.system,
            user_prompt: request.user,
            response: reply.text,
            backend: self.backend.kind(),
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            input_tokens,
            output_tokens,
        })
    }

    pub fn finish(&self) -> Result<()> {
        self.backend.finish()
    }
}

/// Appends exchanges to a JSON-lines transcript file.
pub fn append_transcript(path: &Path, exchanges: &[ChatExchange]) -> Result<()> {
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut buf = String::new();
    for exchange in exchanges {
        buf.push_str(&serde_json::to_string(exchange)?);
        buf.push('\n');
    }
    file.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_transcript(path: &Path) -> Result<Vec<ChatExchange>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
