use std::fmt::Write as _;

use similar::TextDiff;

use super::validation::{ValidationRun, ValidationSet};
use super::{CandidateRecord, CandidateStatus, IterationRecord, TrainingConfig};
use crate::error::{Error, Result};
use crate::eval::{extract_segments, EvaluationReport, MetricKind};
use crate::llm::{extract_code, AgentRole, BackendKind, ChatExchange, Gateway, PromptContext, PromptLibrary};
use crate::preprocess::{render_chunk_text, Chunk, PreprocessConfig};
use crate::rule::{Provenance, RuleArtifact, RuleRuntime};

/// Everything one trial trains on.
#[derive(Debug, Clone)]
pub struct TrialInput {
    /// Prefix of every rule id the trial creates.
    pub rule_prefix: String,
    /// Chunks holding the behaviour the rules must flag.
    pub targets: Vec<Chunk>,
    /// Contrast chunks shown beside the targets.
    pub contrast: Vec<Chunk>,
    pub validation: ValidationSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    /// Top-k rules after the last iteration, best first.
    pub best_rules: Vec<RuleArtifact>,
    pub records: Vec<IterationRecord>,
}

/// A trial stopped early. `records` holds every completed iteration.
#[derive(Debug, thiserror::Error)]
#[error("trial aborted after {} iteration(s): {error}", records.len())]
pub struct TrialError {
    #[source]
    pub error: Error,
    pub records: Vec<IterationRecord>,
}

/// Indices of the `k` highest scores, best first. Ties go to the lower index.
pub fn select_top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Renders chunks as the numbered, labelled sample blocks used in prompts.
pub fn render_samples(chunks: &[&Chunk], render: &PreprocessConfig) -> String {
    let mut out = String::new();
    for (n, chunk) in chunks.iter().enumerate() {
        let segments = chunk.labels.as_ref().map(extract_segments).unwrap_or_default();
        let kind = if segments.is_empty() { "normal" } else { "abnormal" };
        let _ = writeln!(out, "### Sample {} ({kind}, {} points)", n + 1, chunk.len());
        out.push_str(&render_chunk_text(chunk, render));
        let ranges = if segments.is_empty() {
            "none".to_string()
        } else {
            segments
                .iter()
                .map(|s| format!("{}-{}", s.start, s.end))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let _ = writeln!(out, "Abnormal index ranges: {ranges}");
        if n + 1 < chunks.len() {
            out.push('\n');
        }
    }
    out
}

fn metrics_text(current: &EvaluationReport, reference: Option<(&str, &EvaluationReport)>) -> String {
    let mut out = String::new();
    for kind in MetricKind::ALL {
        let c = current.get(kind);
        let _ = write!(
            out,
            "{}: current precision {:.3} recall {:.3} f1 {:.3}",
            kind.label(),
            c.precision,
            c.recall,
            c.f1
        );
        if let Some((name, r)) = reference {
            let r = r.get(kind);
            let _ = write!(out, "; {name} precision {:.3} recall {:.3} f1 {:.3}", r.precision, r.recall, r.f1);
        }
        out.push('\n');
    }
    out.trim_end().to_string()
}

fn unified_diff(old: &str, new: &str) -> String {
    TextDiff::from_lines(old, new)
        .unified_diff()
        .context_radius(3)
        .header("previous", "current")
        .to_string()
}

#[derive(Debug, Clone)]
struct Scored {
    rule: RuleArtifact,
    run: ValidationRun,
}

impl Scored {
    fn f1(&self) -> f64 {
        self.run.f1()
    }
}

enum Reference<'r> {
    Rule(&'r Scored),
    Baseline(&'r ValidationRun),
}

impl Reference<'_> {
    fn run(&self) -> &ValidationRun {
        match self {
            Reference::Rule(s) => &s.run,
            Reference::Baseline(r) => r,
        }
    }
}

/// Per-candidate bookkeeping threaded through repair and review.
struct CandidateLog {
    versions: Vec<RuleArtifact>,
    exchanges: Vec<ChatExchange>,
}

struct CandidateResult {
    record: CandidateRecord,
    exchanges: Vec<ChatExchange>,
    survivor: Option<Scored>,
}

/// Drives trials against one gateway and runtime.
#[derive(Debug, Clone, Copy)]
pub struct Trainer<'a> {
    pub config: &'a TrainingConfig,
    pub gateway: &'a Gateway,
    pub runtime: &'a RuleRuntime,
    pub prompts: &'a PromptLibrary,
    /// Rendering settings for data shown in prompts.
    pub render: &'a PreprocessConfig,
}

impl<'a> Trainer<'a> {
    fn ask(&self, role: AgentRole, context: &PromptContext, log: &mut CandidateLog) -> Result<String> {
        let prompt = self.prompts.render(role, self.config.dialect, context)?;
        let exchange = self.gateway.complete(role, &prompt)?;
        let text = exchange.response.clone();
        log.exchanges.push(exchange);
        Ok(text)
    }

    fn artifact(&self, id: String, source: String, from: Provenance, iteration: u32) -> Result<RuleArtifact> {
        RuleArtifact::new(id, self.config.dialect, source, from, self.config.trial, iteration)
    }

    /// Returns the first version that passes the syntax check, or `None`
    /// after `max_repair_rounds` failed rounds. A valid input costs no calls.
    fn repair_loop(&self, candidate: RuleArtifact, data: &str, log: &mut CandidateLog) -> Result<Option<RuleArtifact>> {
        let mut outcome = self.runtime.syntax_check(&candidate)?;
        if outcome.is_ok() {
            return Ok(Some(candidate));
        }
        let base_id = candidate.rule_id.clone();
        let mut current = candidate;
        for round in 1..=self.config.max_repair_rounds {
            let context = PromptContext::new()
                .with("data", data)
                .with("source", current.source.as_str())
                .with("diagnostic", outcome.diagnostic.as_str());
            let response = self.ask(AgentRole::Repair, &context, log)?;
            let Ok(source) = extract_code(&response) else {
                continue;
            };
            let fixed = self.artifact(
                format!("{base_id}-r{round}"),
                source,
                Provenance::RepairOf(current.rule_id.clone()),
                current.iteration,
            )?;
            log.versions.push(fixed.clone());
            outcome = self.runtime.syntax_check(&fixed)?;
            if outcome.is_ok() {
                return Ok(Some(fixed));
            }
            current = fixed;
        }
        Ok(None)
    }

    fn score(&self, rule: RuleArtifact, validation: &ValidationSet) -> Result<std::result::Result<Scored, String>> {
        Ok(match validation.score(self.runtime, &rule)? {
            Ok(run) => Ok(Scored {
                rule: rule.with_scores(run.report),
                run,
            }),
            Err(outcome) => Err(outcome.diagnostic),
        })
    }

    /// Review until a version reaches the reference score. Without a
    /// reference the candidate is accepted as is.
    fn review_loop(
        &self,
        candidate: Scored,
        reference: Option<Reference<'_>>,
        validation: &ValidationSet,
        data: &str,
        log: &mut CandidateLog,
    ) -> Result<(CandidateStatus, Scored)> {
        let Some(reference) = reference else {
            return Ok((CandidateStatus::Accepted, candidate));
        };
        let target = reference.run().f1();
        if candidate.f1() >= target {
            return Ok((CandidateStatus::Accepted, candidate));
        }
        let base_id = candidate.rule.rule_id.clone();
        let mut best_seen = candidate.clone();
        let mut current = candidate;
        for round in 1..=self.config.max_review_rounds {
            let incorrect = validation.incorrect_samples(&current.run, reference.run());
            let incorrect = if incorrect.is_empty() { "none".to_string() } else { incorrect.join("\n") };
            let mut context = PromptContext::new()
                .with("data", data)
                .with("source", current.rule.source.as_str())
                .with("incorrect_examples", incorrect);
            match &reference {
                Reference::Rule(prev) => {
                    context.set("metrics", metrics_text(&current.run.report, Some(("previous", &prev.run.report))));
                    context.set("previous_source", prev.rule.source.as_str());
                    context.set("diff", unified_diff(&prev.rule.source, &current.rule.source));
                }
                Reference::Baseline(run) => {
                    context.set("metrics", metrics_text(&current.run.report, Some(("baseline", &run.report))));
                }
            }
            let response = self.ask(AgentRole::Review, &context, log)?;
            let Ok(source) = extract_code(&response) else {
                continue;
            };
            let revised = self.artifact(
                format!("{base_id}-v{round}"),
                source,
                Provenance::ReviewOf(current.rule.rule_id.clone()),
                current.rule.iteration,
            )?;
            log.versions.push(revised.clone());
            let Some(revised) = self.repair_loop(revised, data, log)? else {
                continue;
            };
            let Ok(scored) = self.score(revised, validation)? else {
                continue;
            };
            if scored.f1() >= target {
                return Ok((CandidateStatus::Improved, scored));
            }
            if scored.f1() > best_seen.f1() {
                best_seen = scored.clone();
            }
            current = scored;
        }
        Ok(match reference {
            Reference::Rule(prev) => (CandidateStatus::Reverted, prev.clone()),
            Reference::Baseline(_) => (CandidateStatus::BestSeen, best_seen),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn run_candidate(
        &self,
        iteration: u32,
        index: usize,
        prefix: &str,
        data: &str,
        previous_best: Option<&Scored>,
        baseline: Option<&ValidationRun>,
        validation: &ValidationSet,
    ) -> Result<CandidateResult> {
        let mut log = CandidateLog {
            versions: Vec::new(),
            exchanges: Vec::new(),
        };
        let mut context = PromptContext::new().with("data", data);
        if let Some(best) = previous_best {
            context.set("previous_source", best.rule.source.as_str());
        }
        let response = self.ask(AgentRole::Detection, &context, &mut log)?;
        let finish = |status, log: CandidateLog, survivor: Option<Scored>, diagnostic: Option<String>| CandidateResult {
            record: CandidateRecord {
                index,
                status,
                versions: log.versions,
                final_rule_id: survivor.as_ref().map(|s| s.rule.rule_id.clone()),
                validation: survivor.as_ref().map(|s| s.run.report),
                diagnostic,
            },
            exchanges: log.exchanges,
            survivor,
        };
        let source = match extract_code(&response) {
            Ok(s) => s,
            Err(e) => return Ok(finish(CandidateStatus::Unextractable, log, None, Some(e.to_string()))),
        };
        let fresh = self.artifact(format!("{prefix}-i{iteration:02}-c{index}"), source, Provenance::Fresh, iteration)?;
        log.versions.push(fresh.clone());
        let Some(valid) = self.repair_loop(fresh, data, &mut log)? else {
            return Ok(finish(CandidateStatus::RepairFailed, log, None, None));
        };
        let scored = match self.score(valid, validation)? {
            Ok(s) => s,
            Err(diag) => return Ok(finish(CandidateStatus::ValidationFailed, log, None, Some(diag))),
        };
        let reference = match (previous_best, baseline) {
            (Some(best), _) => Some(Reference::Rule(best)),
            (None, Some(run)) => Some(Reference::Baseline(run)),
            (None, None) => None,
        };
        let (status, survivor) = self.review_loop(scored, reference, validation, data, &mut log)?;
        if let Some(v) = log.versions.iter_mut().find(|v| v.rule_id == survivor.rule.rule_id) {
            *v = survivor.rule.clone();
        }
        Ok(finish(status, log, Some(survivor), None))
    }

    fn iteration_data(&self, input: &TrialInput, iteration: u32) -> String {
        let i = (iteration - 1) as usize;
        let mut shown = vec![&input.targets[i % input.targets.len()]];
        if !input.contrast.is_empty() {
            shown.push(&input.contrast[i % input.contrast.len()]);
        }
        render_samples(&shown, self.render)
    }

    /// Runs a full trial. `sink` sees each completed iteration record.
    pub fn train_trial(
        &self,
        input: &TrialInput,
        sink: &mut dyn FnMut(&IterationRecord) -> Result<()>,
    ) -> std::result::Result<TrialOutcome, TrialError> {
        let mut records = Vec::new();
        match self.train_inner(input, sink, &mut records) {
            Ok(best_rules) => Ok(TrialOutcome { best_rules, records }),
            Err(error) => Err(TrialError { error, records }),
        }
    }

    fn train_inner(
        &self,
        input: &TrialInput,
        sink: &mut dyn FnMut(&IterationRecord) -> Result<()>,
        records: &mut Vec<IterationRecord>,
    ) -> Result<Vec<RuleArtifact>> {
        self.config.validate()?;
        if input.targets.is_empty() {
            return Err(Error::Validation("trial has no training chunks".into()));
        }
        let baseline = input.validation.baseline()?;
        let mut elite: Vec<Scored> = Vec::new();
        let parallel = self.config.parallel && self.gateway.backend_kind() != BackendKind::Mock;
        for iteration in 1..=self.config.max_iterations {
            let data = self.iteration_data(input, iteration);
            let previous = elite.first();
            let run = |index: usize| {
                self.run_candidate(
                    iteration,
                    index,
                    &input.rule_prefix,
                    &data,
                    previous,
                    baseline.as_ref(),
                    &input.validation,
                )
            };
            let results: Vec<Result<CandidateResult>> = if parallel {
                std::thread::scope(|scope| {
                    let handles: Vec<_> = (0..self.config.n_candidates).map(|c| scope.spawn(move || run(c))).collect();
                    handles.into_iter().map(|h| h.join().expect("candidate thread panicked")).collect()
                })
            } else {
                (0..self.config.n_candidates).map(run).collect()
            };

            let mut candidates = Vec::with_capacity(results.len());
            let mut transcripts = Vec::new();
            let mut pool: Vec<Scored> = elite.clone();
            for result in results {
                let result = result?;
                transcripts.extend(result.exchanges);
                candidates.push(result.record);
                if let Some(s) = result.survivor {
                    if !pool.iter().any(|p| p.rule.rule_id == s.rule.rule_id) {
                        pool.push(s);
                    }
                }
            }
            let scores: Vec<f64> = pool.iter().map(Scored::f1).collect();
            elite = select_top_k(&scores, self.config.top_k)
                .into_iter()
                .map(|i| pool[i].clone())
                .collect();
            if candidates.iter().all(|c| c.status == CandidateStatus::Unextractable) {
                tracing::warn!(iteration, "no candidate produced extractable code");
            }
            let record = IterationRecord {
                trial: self.config.trial,
                iteration,
                candidates,
                selected: elite.iter().map(|s| s.rule.rule_id.clone()).collect(),
                best_rule_id: elite.first().map(|s| s.rule.rule_id.clone()),
                best_validation: elite.first().map(|s| s.run.report),
                transcripts,
            };
            tracing::info!(
                iteration,
                best = record.best_f1().unwrap_or(f64::NAN),
                calls = record.gateway_calls(),
                "iteration done"
            );
            sink(&record)?;
            records.push(record);
        }
        Ok(elite.into_iter().map(|s| s.rule).collect())
    }
}
