//! Detection rules: artifacts, execution, and persistence.
//!
//! Two dialects are supported. `threshold-dsl` rules are declarative and are
//! interpreted in-process by [`dsl`]. `script` rules are untrusted programs
//! run out of process through the wire protocol in [`sandbox`].

pub mod dsl;
pub mod registry;
pub mod runtime;
pub mod sandbox;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::data::LabelSequence;
use crate::error::Error;
use crate::eval::EvaluationReport;

pub use registry::{list_rules, load_rule, save_rule, validate_rule_id};
pub use runtime::{RuleRuntime, DEFAULT_TIMEOUT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dialect {
    Script,
    ThresholdDsl,
}

impl Dialect {
    pub fn as_str(self) -> &'static str {
        match self {
            Dialect::Script => "script",
            Dialect::ThresholdDsl => "threshold-dsl",
        }
    }
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dialect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "script" => Ok(Dialect::Script),
            "threshold-dsl" => Ok(Dialect::ThresholdDsl),
            other => Err(Error::Validation(format!("unknown rule dialect `{other}`"))),
        }
    }
}

/// How a rule version came to exist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "rule_id", rename_all = "kebab-case")]
pub enum Provenance {
    Fresh,
    RepairOf(String),
    ReviewOf(String),
}

/// One rule version. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleArtifact {
    pub rule_id: String,
    pub dialect: Dialect,
    pub source: String,
    pub created_from: Provenance,
    pub trial: u32,
    pub iteration: u32,
    pub validation_scores: Option<EvaluationReport>,
    /// `Abnormal Rule N` / `Normal Rule N` comment lines found in the source.
    pub comments_extracted: Vec<String>,
}

impl RuleArtifact {
    pub fn new(
        rule_id: impl Into<String>,
        dialect: Dialect,
        source: impl Into<String>,
        created_from: Provenance,
        trial: u32,
        iteration: u32,
    ) -> Result<RuleArtifact, Error> {
        let source = source.into();
        if source.trim().is_empty() {
            return Err(Error::Validation("rule source is empty".into()));
        }
        let rule_id = rule_id.into();
        validate_rule_id(&rule_id)?;
        let comments_extracted = extract_rule_comments(&source);
        Ok(RuleArtifact {
            rule_id,
            dialect,
            source,
            created_from,
            trial,
            iteration,
            validation_scores: None,
            comments_extracted,
        })
    }

    pub fn with_scores(mut self, report: EvaluationReport) -> RuleArtifact {
        self.validation_scores = Some(report);
        self
    }
}

/// Collects comment lines that state abnormal or normal rules, for example
/// `# Abnormal Rule 1: sudden spikes` or `// Normal Rule 2 ...`.
pub fn extract_rule_comments(source: &str) -> Vec<String> {
    source
        .lines()
        .filter_map(|line| {
            let body = line
                .trim()
                .trim_start_matches('#')
                .trim_start_matches("//")
                .trim();
            let rest = body
                .strip_prefix("Abnormal Rule")
                .or_else(|| body.strip_prefix("Normal Rule"))?;
            rest.trim_start()
                .starts_with(|c: char| c.is_ascii_digit())
                .then(|| body.to_string())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    SyntaxError,
    RuntimeError,
    Timeout,
    ProtocolError,
}

/// Result of running a rule once. `labels` is present iff `status` is `Ok`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionOutcome {
    pub status: ExecStatus,
    pub labels: Option<LabelSequence>,
    pub diagnostic: String,
    pub wall_time: Duration,
}

impl ExecutionOutcome {
    pub fn ok(labels: LabelSequence, wall_time: Duration) -> Self {
        ExecutionOutcome {
            status: ExecStatus::Ok,
            labels: Some(labels),
            diagnostic: String::new(),
            wall_time,
        }
    }

    pub fn failed(status: ExecStatus, diagnostic: impl Into<String>, wall_time: Duration) -> Self {
        debug_assert!(status != ExecStatus::Ok);
        ExecutionOutcome {
            status,
            labels: None,
            diagnostic: diagnostic.into(),
            wall_time,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }
}
