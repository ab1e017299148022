//! Iterative rule training: propose, repair, review, select.

mod calibrate;
mod engine;
mod pipeline;
mod validation;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvaluationReport;
use crate::llm::ChatExchange;
use crate::rule::{Dialect, RuleArtifact};

pub use calibrate::{calibrate_chunk_size, CalibrationResult, SizeScore, DEFAULT_PROPOSALS_PER_SIZE};
pub use engine::{render_samples, select_top_k, Trainer, TrialError, TrialInput, TrialOutcome};
pub use pipeline::{run_training, RuleSetSummary, RunLayout, RunSettings, RunSummary, TestScore, UnitSummary, VALIDATION_FRACTION};
pub use validation::{ValidationRun, ValidationSeries, ValidationSet, ValidationTarget, MAX_INCORRECT_SAMPLES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub n_candidates: usize,
    pub top_k: usize,
    pub max_iterations: u32,
    pub max_repair_rounds: u32,
    pub max_review_rounds: u32,
    pub seed: u64,
    pub trial: u32,
    pub dialect: Dialect,
    /// Run the candidates of an iteration concurrently. Ignored with a
    /// scripted backend, whose replay order must stay fixed.
    pub parallel: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            n_candidates: 5,
            top_k: 1,
            max_iterations: 20,
            max_repair_rounds: 3,
            max_review_rounds: 3,
            seed: 0,
            trial: 0,
            dialect: Dialect::Script,
            parallel: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bounds = [
            ("n_candidates", self.n_candidates as u64),
            ("top_k", self.top_k as u64),
            ("max_iterations", u64::from(self.max_iterations)),
            ("max_repair_rounds", u64::from(self.max_repair_rounds)),
            ("max_review_rounds", u64::from(self.max_review_rounds)),
        ];
        if let Some((name, _)) = bounds.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Validation(format!("{name} must be at least 1")));
        }
        if self.top_k > self.n_candidates {
            return Err(Error::Validation(format!(
                "top_k ({}) must not exceed n_candidates ({})",
                self.top_k, self.n_candidates
            )));
        }
        Ok(())
    }

    /// Upper bound on gateway calls in one iteration.
    pub fn call_budget(&self) -> u64 {
        let r = u64::from(self.max_repair_rounds);
        let v = u64::from(self.max_review_rounds);
        self.n_candidates as u64 * (1 + r + v * (1 + r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateStatus {
    /// Scored at least as well as the reference on first try.
    Accepted,
    /// A review version reached the reference score.
    Improved,
    /// Review never caught up; the previous best stands in.
    Reverted,
    /// First iteration with no prior rule: best version seen is kept.
    BestSeen,
    Unextractable,
    RepairFailed,
    ValidationFailed,
}

impl CandidateStatus {
    pub fn survived(self) -> bool {
        matches!(
            self,
            CandidateStatus::Accepted | CandidateStatus::Improved | CandidateStatus::Reverted | CandidateStatus::BestSeen
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub index: usize,
    pub status: CandidateStatus,
    /// Every version produced for this candidate, in creation order.
    pub versions: Vec<RuleArtifact>,
    /// Rule that leaves the candidate pipeline, if any.
    pub final_rule_id: Option<String>,
    pub validation: Option<EvaluationReport>,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub trial: u32,
    pub iteration: u32,
    pub candidates: Vec<CandidateRecord>,
    pub selected: Vec<String>,
    pub best_rule_id: Option<String>,
    pub best_validation: Option<EvaluationReport>,
    pub transcripts: Vec<ChatExchange>,
}

impl IterationRecord {
    pub fn best_f1(&self) -> Option<f64> {
        self.best_validation.as_ref().map(EvaluationReport::primary_f1)
    }

    pub fn gateway_calls(&self) -> usize {
        self.transcripts.len()
    }
}
