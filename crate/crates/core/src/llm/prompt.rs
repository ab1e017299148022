//! Agent prompt templates.
//!
//! Templates are plain files under `templates/<version>/`, embedded at build
//! time and overridable from a directory. Each agent has a system part and a
//! user part; each dialect has a code template shown to the agents.

use std::collections::BTreeMap;
use std::path::Path;

use minijinja::{Environment, UndefinedBehavior};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AgentRole, BEGIN_MARKER, END_MARKER};
use crate::error::{Error, Result};
use crate::rule::Dialect;

pub const TEMPLATE_VERSION: &str = "v1";

const EMBEDDED: [(&str, &str); 8] = [
    ("detection.system.txt", include_str!("../../templates/v1/detection.system.txt")),
    ("detection.user.txt", include_str!("../../templates/v1/detection.user.txt")),
    ("repair.system.txt", include_str!("../../templates/v1/repair.system.txt")),
    ("repair.user.txt", include_str!("../../templates/v1/repair.user.txt")),
    ("review.system.txt", include_str!("../../templates/v1/review.system.txt")),
    ("review.user.txt", include_str!("../../templates/v1/review.user.txt")),
    ("code_template.script.txt", include_str!("../../templates/v1/code_template.script.txt")),
    (
        "code_template.threshold-dsl.txt",
        include_str!("../../templates/v1/code_template.threshold-dsl.txt"),
    ),
];

/// Named values interpolated into a template.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptContext(BTreeMap<String, Value>);

impl PromptContext {
    pub fn new() -> Self {
        PromptContext::default()
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.0.insert(key.to_string(), value.into());
        self
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.0.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.0.get(key).filter(|v| !v.is_null())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

impl RenderedPrompt {
    /// System and user parts joined by a blank line.
    pub fn text(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }
}

/// Fields each agent's template needs.
pub fn required_fields(role: AgentRole, context: &PromptContext) -> Vec<&'static str> {
    match role {
        AgentRole::Detection => vec!["data"],
        AgentRole::Repair => vec!["data", "source", "diagnostic"],
        AgentRole::Review => {
            let mut fields = vec!["data", "source", "metrics", "incorrect_examples"];
            if context.get("previous_source").is_some() {
                fields.push("diff");
            }
            fields
        }
    }
}

#[derive(Debug)]
pub struct PromptLibrary {
    env: Environment<'static>,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        PromptLibrary::embedded()
    }
}

impl PromptLibrary {
    pub fn embedded() -> Self {
        let mut env = new_env();
        for (name, source) in EMBEDDED {
            env.add_template(name, source).expect("embedded templates parse");
        }
        PromptLibrary { env }
    }

    /// Embedded templates, with any same-named file in `dir` taking precedence.
    pub fn with_overrides(dir: &Path) -> Result<Self> {
        let mut env = new_env();
        for (name, source) in EMBEDDED {
            let path = dir.join(name);
            let text = if path.is_file() {
                std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?
            } else {
                source.to_string()
            };
            env.add_template_owned(name, text).map_err(|e| Error::Template {
                template: name.to_string(),
                message: e.to_string(),
            })?;
        }
        Ok(PromptLibrary { env })
    }

    pub fn code_template(&self, dialect: Dialect) -> Result<String> {
        let name = format!("code_template.{}.txt", dialect.as_str());
        self.source_of(&name).map(|s| s.trim_end().to_string())
    }

    fn source_of(&self, name: &str) -> Result<String> {
        self.env
            .get_template(name)
            .map(|t| t.source().to_string())
            .map_err(|e| Error::Template {
                template: name.to_string(),
                message: e.to_string(),
            })
    }

    pub fn render(&self, role: AgentRole, dialect: Dialect, context: &PromptContext) -> Result<RenderedPrompt> {
        let user_name = format!("{}.user.txt", role.as_str());
        for field in required_fields(role, context) {
            if context.get(field).is_none() {
                return Err(Error::MissingField {
                    template: user_name,
                    field: field.to_string(),
                });
            }
        }
        let mut values: BTreeMap<String, Value> = context.0.clone();
        values.insert("dialect".into(), dialect.as_str().into());
        values.insert("code_template".into(), self.code_template(dialect)?.into());
        values.insert("begin_marker".into(), BEGIN_MARKER.into());
        values.insert("end_marker".into(), END_MARKER.into());
        Ok(RenderedPrompt {
            system: self.render_one(&format!("{}.system.txt", role.as_str()), &values)?,
            user: self.render_one(&user_name, &values)?,
        })
    }

    fn render_one(&self, name: &str, values: &BTreeMap<String, Value>) -> Result<String> {
        let to_err = |e: minijinja::Error| Error::Template {
            template: name.to_string(),
            message: e.to_string(),
        };
        let text = self.env.get_template(name).map_err(to_err)?.render(values).map_err(to_err)?;
        Ok(text.trim_end().to_string())
    }
}

fn new_env() -> Environment<'static> {
    let mut env = Environment::new();
    env.set_undefined_behavior(UndefinedBehavior::SemiStrict);
    env.set_trim_blocks(true);
    env.set_keep_trailing_newline(true);
    env
}
