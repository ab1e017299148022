use serde::{Deserialize, Serialize};

use crate::data::LabelSequence;
use crate::error::{ensure_same_len, Error, Result};
use crate::eval::{evaluate, EvaluationReport};
use crate::fusion::{aggregate, RuleSetKind};
use crate::preprocess::Chunk;
use crate::rule::{ExecutionOutcome, RuleArtifact, RuleRuntime};

/// Cap on incorrect samples quoted in a review prompt.
pub const MAX_INCORRECT_SAMPLES: usize = 8;

/// How rule labels turn into predictions before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationTarget {
    /// Rule labels are the prediction.
    RulesOnly,
    /// Rule labels are aggregated with the base detector as this rule set.
    Fusion(RuleSetKind),
}

/// Held-out part of one metric's training split.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSeries {
    pub metric_id: String,
    pub chunks: Vec<Chunk>,
    pub values: Vec<f64>,
    pub gt: LabelSequence,
    pub base: Option<LabelSequence>,
}

impl ValidationSeries {
    /// `chunks` must be consecutive and labelled; `base` covers them all.
    pub fn new(chunks: Vec<Chunk>, base: Option<LabelSequence>) -> Result<Self> {
        let first = chunks
            .first()
            .ok_or_else(|| Error::Validation("validation series has no chunks".into()))?;
        let metric_id = first.metric_id.clone();
        let mut parts = Vec::with_capacity(chunks.len());
        for c in &chunks {
            parts.push(
                c.labels
                    .clone()
                    .ok_or_else(|| Error::Validation(format!("{metric_id}: validation chunk has no labels")))?,
            );
        }
        let gt = LabelSequence::concat(&parts);
        let values: Vec<f64> = chunks.iter().flat_map(|c| c.values.iter().copied()).collect();
        if let Some(b) = &base {
            ensure_same_len(gt.len(), b.len())?;
        }
        Ok(ValidationSeries {
            metric_id,
            chunks,
            values,
            gt,
            base,
        })
    }
}

/// Summed scores and per-series predictions of one rule on a validation set.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRun {
    pub report: EvaluationReport,
    pub predictions: Vec<LabelSequence>,
}

impl ValidationRun {
    pub fn f1(&self) -> f64 {
        self.report.primary_f1()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSet {
    pub series: Vec<ValidationSeries>,
    pub target: ValidationTarget,
}

impl ValidationSet {
    pub fn new(series: Vec<ValidationSeries>, target: ValidationTarget) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::Validation("validation set is empty".into()));
        }
        if let ValidationTarget::Fusion(_) = target {
            if let Some(s) = series.iter().find(|s| s.base.is_none()) {
                return Err(Error::Validation(format!(
                    "{}: fusion validation needs base detector labels",
                    s.metric_id
                )));
            }
        }
        Ok(ValidationSet { series, target })
    }

    fn fuse(&self, series: &ValidationSeries, rule_labels: &LabelSequence) -> Result<LabelSequence> {
        let base = || series.base.as_ref().expect("checked at construction");
        match self.target {
            ValidationTarget::RulesOnly => Ok(rule_labels.clone()),
            ValidationTarget::Fusion(RuleSetKind::Fn) => {
                aggregate(base(), &LabelSequence::ones(rule_labels.len()), rule_labels)
            }
            ValidationTarget::Fusion(RuleSetKind::Fp) => {
                aggregate(base(), rule_labels, &LabelSequence::zeros(rule_labels.len()))
            }
        }
    }

    fn run_from(&self, predictions: Vec<LabelSequence>) -> Result<ValidationRun> {
        let mut report: Option<EvaluationReport> = None;
        for (s, pred) in self.series.iter().zip(&predictions) {
            let r = evaluate(&s.gt, pred)?;
            report = Some(match report {
                Some(acc) => acc.merge(&r),
                None => r,
            });
        }
        Ok(ValidationRun {
            report: report.expect("validation set is nonempty"),
            predictions,
        })
    }

    /// Score of the base detector alone; `None` without fusion.
    pub fn baseline(&self) -> Result<Option<ValidationRun>> {
        match self.target {
            ValidationTarget::RulesOnly => Ok(None),
            ValidationTarget::Fusion(_) => {
                let preds = self.series.iter().map(|s| s.base.clone().expect("checked")).collect();
                self.run_from(preds).map(Some)
            }
        }
    }

    /// Scores `rule`. The inner `Err` carries the first failing execution.
    pub fn score(
        &self,
        runtime: &RuleRuntime,
        rule: &RuleArtifact,
    ) -> Result<std::result::Result<ValidationRun, ExecutionOutcome>> {
        let mut preds = Vec::with_capacity(self.series.len());
        for s in &self.series {
            match runtime.execute_all(rule, &s.chunks)? {
                Ok(labels) => preds.push(self.fuse(s, &labels)?),
                Err(outcome) => return Ok(Err(outcome)),
            }
        }
        self.run_from(preds).map(Ok)
    }

    /// Points the reference predicts correctly and `current` does not, as
    /// `metric index value expected current reference` lines.
    pub fn incorrect_samples(&self, current: &ValidationRun, reference: &ValidationRun) -> Vec<String> {
        let mut out = Vec::new();
        for ((s, cur), refp) in self.series.iter().zip(&current.predictions).zip(&reference.predictions) {
            for i in 0..s.gt.len() {
                let (g, c, r) = (s.gt.get(i), cur.get(i), refp.get(i));
                if r == g && c != g {
                    out.push(format!(
                        "{} {} {} {} {} {}",
                        s.metric_id,
                        i,
                        s.values[i],
                        u8::from(g == Some(true)),
                        u8::from(c == Some(true)),
                        u8::from(r == Some(true)),
                    ));
                    if out.len() == MAX_INCORRECT_SAMPLES {
                        return out;
                    }
                }
            }
        }
        out
    }
}
