use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::engine::{Trainer, TrialInput};
use super::validation::{ValidationSeries, ValidationSet, ValidationTarget};
use super::IterationRecord;
use crate::data::{split_train_test, DatasetMode, LabelSequence, MetricSeries};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvaluationReport};
use crate::fusion::{align_base, detect, partition_error_chunks, save_bundle, BaseDetectorLabels, FusionBundle, RuleSetKind};
use crate::llm::append_transcript;
use crate::preprocess::{prepare, Chunk};
use crate::rule::{save_rule, RuleArtifact};
use crate::selector::{plan_units, retrieve_contrastive, SelectionPlan, TrainingUnit};

/// Share of each training split held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub split_ratio: f64,
    pub mode: DatasetMode,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            split_ratio: 0.7,
            mode: DatasetMode::Auto,
        }
    }
}

/// Where a training run writes its outputs.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub out_dir: PathBuf,
    pub registry: PathBuf,
}

impl RunLayout {
    pub fn new(out_dir: impl Into<PathBuf>, registry: impl Into<PathBuf>) -> Self {
        RunLayout {
            out_dir: out_dir.into(),
            registry: registry.into(),
        }
    }

    pub fn records_dir(&self, trial_name: &str) -> PathBuf {
        self.out_dir.join("records").join(trial_name)
    }

    pub fn transcript_path(&self) -> PathBuf {
        self.out_dir.join("transcripts.jsonl")
    }

    pub fn summary_path(&self) -> PathBuf {
        self.out_dir.join("summary.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSetSummary {
    /// `rules`, `fn` or `fp`.
    pub kind: String,
    pub rules: Vec<String>,
    pub iterations: usize,
    pub best_validation: Option<EvaluationReport>,
    pub baseline_validation: Option<EvaluationReport>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestScore {
    pub metric_id: String,
    pub bundle: EvaluationReport,
    pub base: Option<EvaluationReport>,
    pub fallback_chunks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSummary {
    pub unit: TrainingUnit,
    pub bundle_id: String,
    pub rule_sets: Vec<RuleSetSummary>,
    pub test: Vec<TestScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub plan: SelectionPlan,
    pub units: Vec<UnitSummary>,
}

/// Replaces characters not allowed in rule ids.
fn sanitize_id(name: &str) -> String {
    let mut id: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '.' | '_') { c } else { '_' })
        .collect();
    if id.is_empty() || id.starts_with(['.', '_']) {
        id.insert(0, 'u');
    }
    id
}

struct Member<'s> {
    series: &'s MetricSeries,
    fit_chunks: Vec<Chunk>,
    val_chunks: Vec<Chunk>,
    /// Base labels split the same way as the series: fit, validation, test.
    base: Option<(LabelSequence, LabelSequence, BaseDetectorLabels)>,
    test: MetricSeries,
}

fn prepare_member<'s>(
    series: &'s MetricSeries,
    base: Option<&BaseDetectorLabels>,
    split_ratio: f64,
    trainer: &Trainer<'_>,
) -> Result<Member<'s>> {
    series.require_labels()?;
    let n = series.len();
    let (train, test) = split_train_test(series, split_ratio)?;
    let (fit, val) = split_train_test(&train, 1.0 - VALIDATION_FRACTION)?;
    let base = match base {
        Some(b) => {
            b.check_aligned(series)?;
            let (f, t) = (fit.len(), train.len());
            Some((b.labels.slice(0, f), b.labels.slice(f, t), b.slice(t, n)))
        }
        None => None,
    };
    Ok(Member {
        series,
        fit_chunks: prepare(&fit, trainer.render)?,
        val_chunks: prepare(&val, trainer.render)?,
        base,
        test,
    })
}

fn validation_set(members: &[Member<'_>], target: ValidationTarget) -> Result<ValidationSet> {
    let series = members
        .iter()
        .map(|m| ValidationSeries::new(m.val_chunks.clone(), m.base.as_ref().map(|b| b.1.clone())))
        .collect::<Result<Vec<_>>>()?;
    ValidationSet::new(series, target)
}

fn write_record(layout: &RunLayout, trial_name: &str, record: &IterationRecord) -> Result<()> {
    let dir = layout.records_dir(trial_name);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(format!("iter-{:02}.json", record.iteration));
    let mut json = serde_json::to_string_pretty(record)?;
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    append_transcript(&layout.transcript_path(), &record.transcripts)
}

/// Runs one trial and returns the rules worth keeping plus its summary.
fn run_rule_set(
    trainer: &Trainer<'_>,
    layout: &RunLayout,
    trial_name: String,
    targets: Vec<Chunk>,
    contrast: Vec<Chunk>,
    validation: ValidationSet,
) -> Result<(Vec<RuleArtifact>, RuleSetSummary)> {
    let kind = trial_name.rsplit('-').next().unwrap_or("rules").to_string();
    let baseline = validation.baseline()?.map(|r| r.report);
    let input = TrialInput {
        rule_prefix: trial_name.clone(),
        targets,
        contrast,
        validation,
    };
    let mut sink = |record: &IterationRecord| write_record(layout, &trial_name, record);
    let outcome = trainer.train_trial(&input, &mut sink).map_err(|e| {
        tracing::error!(trial = %trial_name, completed = e.records.len(), "trial aborted");
        e.error
    })?;
    let best_validation = outcome.records.last().and_then(|r| r.best_validation);
    let (kept, dropped): (Vec<_>, Vec<_>) = outcome.best_rules.into_iter().partition(|rule| {
        match (baseline, rule.validation_scores) {
            (Some(b), Some(s)) => s.primary_f1() >= b.primary_f1(),
            _ => true,
        }
    });
    let note = (!dropped.is_empty()).then(|| {
        format!("{} rule(s) scored below the base detector on validation and were left out", dropped.len())
    });
    Ok((
        kept.clone(),
        RuleSetSummary {
            kind,
            rules: kept.iter().map(|r| r.rule_id.clone()).collect(),
            iterations: outcome.records.len(),
            best_validation,
            baseline_validation: baseline,
            note,
        },
    ))
}

fn skipped(kind: &str, note: &str) -> RuleSetSummary {
    RuleSetSummary {
        kind: kind.to_string(),
        rules: Vec::new(),
        iterations: 0,
        best_validation: None,
        baseline_validation: None,
        note: Some(note.to_string()),
    }
}

/// Trains every unit of the dataset and writes records, transcripts, rules
/// and bundles. Fusion is used when `bases` is nonempty; it must then hold
/// labels for every metric.
pub fn run_training(
    series: &[MetricSeries],
    bases: &BTreeMap<String, BaseDetectorLabels>,
    settings: &RunSettings,
    trainer: &Trainer<'_>,
    layout: &RunLayout,
) -> Result<RunSummary> {
    std::fs::create_dir_all(&layout.out_dir).map_err(|e| Error::io(&layout.out_dir, e))?;
    let fusion = !bases.is_empty();
    let train_len = |s: &MetricSeries| (settings.split_ratio * s.len() as f64).floor() as usize;
    let plan = plan_units(series, trainer.render.chunk_size, settings.mode, train_len);
    let by_id: BTreeMap<&str, &MetricSeries> = series.iter().map(|s| (s.metric_id(), s)).collect();
    let seed = trainer.config.seed;
    let mut units = Vec::with_capacity(plan.units.len());
    for unit in &plan.units {
        let unit_id = sanitize_id(&unit.name);
        let mut members = Vec::with_capacity(unit.metric_ids.len());
        for id in &unit.metric_ids {
            let base = if fusion {
                Some(bases.get(id).ok_or_else(|| {
                    Error::Validation(format!("{id}: no base detector labels given"))
                })?)
            } else {
                None
            };
            members.push(prepare_member(by_id[id.as_str()], base, settings.split_ratio, trainer)?);
        }
        let mut rule_sets = Vec::new();
        let mut bundle = FusionBundle {
            bundle_id: unit_id.clone(),
            base_source: None,
            preprocess: trainer.render.clone(),
            fn_rules: Vec::new(),
            fp_rules: Vec::new(),
        };
        if fusion {
            bundle.base_source = Some(
                members
                    .iter()
                    .filter_map(|m| m.base.as_ref().map(|b| b.2.source.clone()))
                    .next()
                    .unwrap_or_default(),
            );
            let mut paired = Vec::new();
            for m in &members {
                let fit_base = &m.base.as_ref().expect("fusion members carry base labels").0;
                paired.extend(align_base(&m.fit_chunks, fit_base)?);
            }
            for kind in [RuleSetKind::Fn, RuleSetKind::Fp] {
                let samples = partition_error_chunks(&paired, kind, unit.mode, None, seed)?;
                if samples.is_empty() {
                    rule_sets.push(skipped(kind.as_str(), "base detector makes no errors of this kind"));
                    continue;
                }
                let (rules, summary) = run_rule_set(
                    trainer,
                    layout,
                    format!("{unit_id}-{}", kind.as_str()),
                    samples.error_chunks,
                    samples.contrast_chunks,
                    validation_set(&members, ValidationTarget::Fusion(kind))?,
                )?;
                match kind {
                    RuleSetKind::Fn => bundle.fn_rules = rules,
                    RuleSetKind::Fp => bundle.fp_rules = rules,
                }
                rule_sets.push(summary);
            }
        } else {
            let (targets, pool): (Vec<Chunk>, Vec<Chunk>) = members
                .iter()
                .flat_map(|m| m.fit_chunks.iter().cloned())
                .partition(|c| c.labels.as_ref().is_some_and(|l| l.count_abnormal() > 0));
            if targets.is_empty() {
                rule_sets.push(skipped("rules", "no labelled anomalies in the training split"));
            } else {
                let contrast = if pool.is_empty() {
                    Vec::new()
                } else {
                    retrieve_contrastive(&targets, &pool, unit.mode, targets.len(), seed)?
                };
                let (rules, summary) = run_rule_set(
                    trainer,
                    layout,
                    format!("{unit_id}-rules"),
                    targets,
                    contrast,
                    validation_set(&members, ValidationTarget::RulesOnly)?,
                )?;
                bundle.fn_rules = rules;
                rule_sets.push(summary);
            }
        }
        for rule in bundle.fn_rules.iter().chain(&bundle.fp_rules) {
            save_rule(&layout.registry, rule)?;
        }
        save_bundle(&layout.registry, &bundle.manifest())?;

        let mut test = Vec::with_capacity(members.len());
        for m in &members {
            let gt = m.test.require_labels()?;
            let base_test = m.base.as_ref().map(|b| &b.2);
            let detection = detect(&m.test, &bundle, base_test, trainer.runtime)?;
            test.push(TestScore {
                metric_id: m.series.metric_id().to_string(),
                bundle: evaluate(gt, &detection.labels)?,
                base: base_test.map(|b| evaluate(gt, &b.labels)).transpose()?,
                fallback_chunks: detection.fallbacks.len(),
            });
        }
        units.push(UnitSummary {
            unit: unit.clone(),
            bundle_id: unit_id,
            rule_sets,
            test,
        });
    }
    let summary = RunSummary { plan, units };
    write_json(&layout.summary_path(), &summary)?;
    Ok(summary)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}
