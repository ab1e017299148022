use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{AgentRole, BackendKind, BackendReply, ChatBackend, ChatRequest};
use crate::error::{Error, Result};

/// Canned responses per agent role, consumed in call order.
///
/// File form: `{"detection": ["...", ...], "repair": [...], "review": [...]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub detection: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub repair: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub review: Vec<String>,
}

impl MockScript {
    pub fn new() -> Self {
        MockScript::default()
    }

    pub fn push(mut self, role: AgentRole, response: impl Into<String>) -> Self {
        self.responses_mut(role).push(response.into());
        self
    }

    pub fn responses(&self, role: AgentRole) -> &[String] {
        match role {
            AgentRole::Detection => &self.detection,
            AgentRole::Repair => &self.repair,
            AgentRole::Review => &self.review,
        }
    }

    pub fn responses_mut(&mut self, role: AgentRole) -> &mut Vec<String> {
        match role {
            AgentRole::Detection => &mut self.detection,
            AgentRole::Repair => &mut self.repair,
            AgentRole::Review => &mut self.review,
        }
    }

    pub fn load(path: &Path) -> Result<MockScript> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Replays a [`MockScript`]. Calls for a role beyond its scripted responses
/// fail with [`Error::MockUnderrun`]; [`ChatBackend::finish`] fails while any
/// response is left unconsumed.
#[derive(Debug)]
pub struct MockBackend {
    script: MockScript,
    cursors: Mutex<BTreeMap<AgentRole, usize>>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        MockBackend {
            script,
            cursors: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn calls(&self, role: AgentRole) -> usize {
        self.cursors.lock().expect("mock lock").get(&role).copied().unwrap_or(0)
    }
}

impl ChatBackend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn send(&self, request: &ChatRequest) -> Result<BackendReply> {
        let mut cursors = self.cursors.lock().expect("mock lock");
        let cursor = cursors.entry(request.role).or_insert(0);
        let index = *cursor;
        let text = self
            .script
            .responses(request.role)
            .get(index)
            .ok_or(Error::MockUnderrun {
                role: request.role,
                index,
            })?
            .clone();
        *cursor += 1;
        Ok(BackendReply { text, usage: None })
    }

    fn finish(&self) -> Result<()> {
        let cursors = self.cursors.lock().expect("mock lock");
        for role in AgentRole::ALL {
            let used = cursors.get(&role).copied().unwrap_or(0);
            let remaining = self.script.responses(role).len().saturating_sub(used);
            if remaining > 0 {
                return Err(Error::MockUnconsumed { role, remaining });
            }
        }
        Ok(())
    }
}
