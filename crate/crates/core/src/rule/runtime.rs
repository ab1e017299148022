use std::time::{Duration, Instant};

use super::dsl::ThresholdProgram;
use super::sandbox::{self, SandboxConfig};
use super::{Dialect, ExecStatus, ExecutionOutcome, RuleArtifact};
use crate::data::LabelSequence;
use crate::error::{Error, Result};
use crate::preprocess::Chunk;

/// Per-chunk execution budget when none is configured.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

/// Length of the constant-zero chunk used for syntax checks.
pub const SYNTAX_CHECK_LEN: usize = 16;

/// Dispatches rule execution by dialect.
#[derive(Debug, Clone)]
pub struct RuleRuntime {
    sandbox: Option<SandboxConfig>,
    timeout: Duration,
}

impl Default for RuleRuntime {
    fn default() -> Self {
        RuleRuntime::native()
    }
}

impl RuleRuntime {
    /// Runtime that only runs `threshold-dsl` rules.
    pub fn native() -> Self {
        RuleRuntime {
            sandbox: None,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn with_sandbox(mut self, sandbox: SandboxConfig) -> Self {
        self.sandbox = Some(sandbox);
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    /// Runs the rule on a constant chunk shaped like real input.
    pub fn syntax_check(&self, rule: &RuleArtifact) -> Result<ExecutionOutcome> {
        self.execute_rule(rule, &Chunk::dummy(SYNTAX_CHECK_LEN, 0.0), self.timeout)
    }

    /// Runs the rule on `chunk`. `Err` means the runtime environment is
    /// unusable; rule failures are reported in the outcome.
    pub fn execute_rule(&self, rule: &RuleArtifact, chunk: &Chunk, timeout: Duration) -> Result<ExecutionOutcome> {
        if chunk.is_empty() {
            return Err(Error::Validation("cannot execute a rule on an empty chunk".into()));
        }
        let outcome = match rule.dialect {
            Dialect::ThresholdDsl => run_native(&rule.source, chunk),
            Dialect::Script => {
                let sandbox = self.sandbox.as_ref().ok_or_else(|| {
                    Error::Sandbox("script rules need a sandbox command; none configured".into())
                })?;
                sandbox::run(sandbox, &rule.source, chunk, timeout)?
            }
        };
        debug_assert_eq!(
            outcome.is_ok(),
            outcome.labels.as_ref().is_some_and(|l| l.len() == chunk.len())
        );
        Ok(outcome)
    }

    /// Runs the rule over consecutive chunks and concatenates the labels.
    /// Stops at the first failing chunk.
    pub fn execute_all(&self, rule: &RuleArtifact, chunks: &[Chunk]) -> Result<std::result::Result<LabelSequence, ExecutionOutcome>> {
        let mut parts = Vec::with_capacity(chunks.len());
        for chunk in chunks {
            let outcome = self.execute_rule(rule, chunk, self.timeout)?;
            match outcome.labels {
                Some(labels) if outcome.status == ExecStatus::Ok => parts.push(labels),
                _ => return Ok(Err(outcome)),
            }
        }
        Ok(Ok(LabelSequence::concat(&parts)))
    }
}

fn run_native(source: &str, chunk: &Chunk) -> ExecutionOutcome {
    let started = Instant::now();
    match ThresholdProgram::parse(source) {
        Ok(program) => ExecutionOutcome::ok(program.apply(&chunk.values), started.elapsed()),
        Err(diagnostic) => ExecutionOutcome::failed(ExecStatus::SyntaxError, diagnostic, started.elapsed()),
    }
}
