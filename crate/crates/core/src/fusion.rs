//! Fusion of rule outputs with an external base detector.
//!
//! FN rules are trained on points the base detector missed, FP rules on its
//! false alarms. At detection time [`aggregate`] lets FN rules raise points
//! the base left normal, and FP rules clear points the base flagged.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{read_labels_csv, DatasetMode, LabelSequence, MetricSeries};
use crate::error::{ensure_same_len, Error, Result};
use crate::preprocess::{chunk_series, prepare, Chunk, PreprocessConfig};
use crate::rule::{load_rule, validate_rule_id, RuleArtifact, RuleRuntime};
use crate::selector::retrieve_contrastive;

/// Labels produced by an external detector for one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseDetectorLabels {
    pub metric_id: String,
    pub labels: LabelSequence,
    pub source: String,
}

impl BaseDetectorLabels {
    pub fn new(metric_id: impl Into<String>, labels: LabelSequence, source: impl Into<String>) -> Self {
        BaseDetectorLabels {
            metric_id: metric_id.into(),
            labels,
            source: source.into(),
        }
    }

    /// Reads a `timestamp,label` file. The source name is the file path.
    pub fn load(path: &Path, metric_id: impl Into<String>) -> Result<Self> {
        let (_, labels) = read_labels_csv(path)?;
        Ok(BaseDetectorLabels::new(metric_id, labels, path.display().to_string()))
    }

    /// Loads `<dir>/<metric_id>.csv`.
    pub fn load_for(dir: &Path, metric_id: &str) -> Result<Self> {
        BaseDetectorLabels::load(&dir.join(format!("{metric_id}.csv")), metric_id)
    }

    pub fn check_aligned(&self, series: &MetricSeries) -> Result<()> {
        if self.metric_id != series.metric_id() {
            return Err(Error::Validation(format!(
                "base labels for {} applied to {}",
                self.metric_id,
                series.metric_id()
            )));
        }
        ensure_same_len(series.len(), self.labels.len())
    }

    pub fn slice(&self, start: usize, end: usize) -> BaseDetectorLabels {
        BaseDetectorLabels {
            metric_id: self.metric_id.clone(),
            labels: self.labels.slice(start, end),
            source: self.source.clone(),
        }
    }
}

/// Which kind of base-detector error a rule set corrects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleSetKind {
    Fn,
    Fp,
}

impl RuleSetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleSetKind::Fn => "fn",
            RuleSetKind::Fp => "fp",
        }
    }
}

/// `gt ∧ ¬base` for FN, `¬gt ∧ base` for FP.
pub fn error_points(gt: &LabelSequence, base: &LabelSequence, kind: RuleSetKind) -> Result<LabelSequence> {
    ensure_same_len(gt.len(), base.len())?;
    Ok(gt
        .iter()
        .zip(base.iter())
        .map(|(g, b)| match kind {
            RuleSetKind::Fn => g && !b,
            RuleSetKind::Fp => !g && b,
        })
        .collect())
}

/// Chunks containing error points, and the contrast chunks shown beside them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorSamples {
    pub error_chunks: Vec<Chunk>,
    pub contrast_chunks: Vec<Chunk>,
}

impl ErrorSamples {
    pub fn is_empty(&self) -> bool {
        self.error_chunks.is_empty()
    }
}

/// Pairs each chunk with its slice of `base` (aligned to the chunk's parent).
pub fn align_base(chunks: &[Chunk], base: &LabelSequence) -> Result<Vec<(Chunk, LabelSequence)>> {
    chunks
        .iter()
        .map(|c| {
            let end = c.start_offset + c.len();
            if end > base.len() {
                return Err(Error::LengthMismatch {
                    expected: end,
                    actual: base.len(),
                });
            }
            Ok((c.clone(), base.slice(c.start_offset, end)))
        })
        .collect()
}

/// Splits labelled chunks, each paired with its base labels, into error
/// chunks and a contrast set.
///
/// The contrast pool is every chunk free of error points. For FP, chunks
/// holding true positives are preferred when there are any. Contrast chunks
/// are retrieved with `mode`; their count defaults to the number of error
/// chunks.
pub fn partition_error_chunks(
    chunks: &[(Chunk, LabelSequence)],
    kind: RuleSetKind,
    mode: DatasetMode,
    count: Option<usize>,
    seed: u64,
) -> Result<ErrorSamples> {
    let mut error_chunks = Vec::new();
    let mut pool = Vec::new();
    let mut preferred = Vec::new();
    for (chunk, chunk_base) in chunks {
        let gt = chunk
            .labels
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("{}: chunk has no labels", chunk.metric_id)))?;
        if error_points(gt, chunk_base, kind)?.count_abnormal() > 0 {
            error_chunks.push(chunk.clone());
        } else {
            let has_tp = gt.iter().zip(chunk_base.iter()).any(|(g, b)| g && b);
            if kind == RuleSetKind::Fp && has_tp {
                preferred.push(chunk.clone());
            }
            pool.push(chunk.clone());
        }
    }
    if error_chunks.is_empty() {
        return Ok(ErrorSamples::default());
    }
    let pool = if preferred.is_empty() { pool } else { preferred };
    let contrast_chunks = if pool.is_empty() {
        Vec::new()
    } else {
        retrieve_contrastive(&error_chunks, &pool, mode, count.unwrap_or(error_chunks.len()), seed)?
    };
    Ok(ErrorSamples {
        error_chunks,
        contrast_chunks,
    })
}

/// Chunks a labelled series and collects its error samples of `kind`.
pub fn collect_error_samples(
    series: &MetricSeries,
    base: &BaseDetectorLabels,
    kind: RuleSetKind,
    chunk_size: usize,
    mode: DatasetMode,
    seed: u64,
) -> Result<ErrorSamples> {
    base.check_aligned(series)?;
    series.require_labels()?;
    let chunks = chunk_series(series, chunk_size)?;
    partition_error_chunks(&align_base(&chunks, &base.labels)?, kind, mode, None, seed)
}

/// Anomaly prediction aggregation.
///
/// Starts from `base`; a point the base calls normal becomes abnormal when
/// `fn_labels` flags it, and a point the base calls abnormal becomes normal
/// when `fp_labels` does not flag it.
pub fn aggregate(base: &LabelSequence, fp_labels: &LabelSequence, fn_labels: &LabelSequence) -> Result<LabelSequence> {
    ensure_same_len(base.len(), fp_labels.len())?;
    ensure_same_len(base.len(), fn_labels.len())?;
    Ok(base
        .iter()
        .zip(fp_labels.iter())
        .zip(fn_labels.iter())
        .map(|((b, fp), fn_)| if b { fp } else { fn_ })
        .collect())
}

/// Trained rule sets plus the preprocessing they were trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionBundle {
    pub bundle_id: String,
    /// Name of the base detector; `None` means rules-only.
    pub base_source: Option<String>,
    pub preprocess: PreprocessConfig,
    pub fn_rules: Vec<RuleArtifact>,
    pub fp_rules: Vec<RuleArtifact>,
}

impl FusionBundle {
    pub fn rules_only(&self) -> bool {
        self.base_source.is_none()
    }

    pub fn manifest(&self) -> BundleManifest {
        BundleManifest {
            bundle_id: self.bundle_id.clone(),
            base_source: self.base_source.clone(),
            preprocess: self.preprocess.clone(),
            fn_rules: self.fn_rules.iter().map(|r| r.rule_id.clone()).collect(),
            fp_rules: self.fp_rules.iter().map(|r| r.rule_id.clone()).collect(),
        }
    }
}

/// On-disk form of a bundle: rule ids resolved against the registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub bundle_id: String,
    pub base_source: Option<String>,
    pub preprocess: PreprocessConfig,
    pub fn_rules: Vec<String>,
    pub fp_rules: Vec<String>,
}

pub const BUNDLE_DIR: &str = "_bundles";

pub fn bundle_path(registry: &Path, bundle_id: &str) -> PathBuf {
    registry.join(BUNDLE_DIR).join(format!("{bundle_id}.json"))
}

pub fn save_bundle(registry: &Path, manifest: &BundleManifest) -> Result<()> {
    validate_rule_id(&manifest.bundle_id)?;
    let path = bundle_path(registry, &manifest.bundle_id);
    let dir = registry.join(BUNDLE_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut json = serde_json::to_string_pretty(manifest)?;
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn load_bundle(registry: &Path, bundle_id: &str) -> Result<FusionBundle> {
    validate_rule_id(bundle_id)?;
    let path = bundle_path(registry, bundle_id);
    if !path.is_file() {
        return Err(Error::RuleNotFound(format!("bundle {bundle_id}")));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: BundleManifest = serde_json::from_str(&text)?;
    let load_all = |ids: &[String]| ids.iter().map(|id| load_rule(registry, id)).collect::<Result<Vec<_>>>();
    Ok(FusionBundle {
        bundle_id: manifest.bundle_id.clone(),
        base_source: manifest.base_source.clone(),
        preprocess: manifest.preprocess.clone(),
        fn_rules: load_all(&manifest.fn_rules)?,
        fp_rules: load_all(&manifest.fp_rules)?,
    })
}

/// A chunk whose rules failed and fell back to base labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkFallback {
    pub start_offset: usize,
    pub len: usize,
    pub rule_id: String,
    pub diagnostic: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub labels: LabelSequence,
    pub fallbacks: Vec<ChunkFallback>,
}

/// Pointwise OR of every rule's labels on `chunk`. `Ok(None)` for an empty set.
fn run_rule_set(
    rules: &[RuleArtifact],
    chunk: &Chunk,
    runtime: &RuleRuntime,
) -> Result<std::result::Result<Option<LabelSequence>, (String, String)>> {
    let mut combined: Option<LabelSequence> = None;
    for rule in rules {
        let outcome = runtime.execute_rule(rule, chunk, runtime.timeout())?;
        let labels = match outcome.labels {
            Some(l) if outcome.is_ok() => l,
            _ => return Ok(Err((rule.rule_id.clone(), outcome.diagnostic))),
        };
        combined = Some(match combined {
            Some(acc) => acc.or(&labels)?,
            None => labels,
        });
    }
    Ok(Ok(combined))
}

/// Labels `series` with the bundle.
///
/// With a base detector, rule sets run per chunk and are merged with
/// [`aggregate`]; a chunk where any rule fails keeps its base labels. In
/// rules-only mode the FN rule labels are returned directly and a failing
/// chunk is labelled normal.
pub fn detect(
    series: &MetricSeries,
    bundle: &FusionBundle,
    base: Option<&BaseDetectorLabels>,
    runtime: &RuleRuntime,
) -> Result<Detection> {
    let base_labels = match (bundle.rules_only(), base) {
        (true, _) => None,
        (false, Some(b)) => {
            ensure_same_len(series.len(), b.labels.len())?;
            Some(&b.labels)
        }
        (false, None) => {
            return Err(Error::Validation(format!(
                "bundle {} needs base detector labels for {}",
                bundle.bundle_id,
                series.metric_id()
            )))
        }
    };
    let unlabelled = series.clone().with_labels(None)?;
    let chunks = prepare(&unlabelled, &bundle.preprocess)?;
    let mut parts = Vec::with_capacity(chunks.len());
    let mut fallbacks = Vec::new();
    for chunk in &chunks {
        let (start, end) = (chunk.start_offset, chunk.start_offset + chunk.len());
        let fallback_labels = match base_labels {
            Some(b) => b.slice(start, end),
            None => LabelSequence::zeros(chunk.len()),
        };
        let fn_out = run_rule_set(&bundle.fn_rules, chunk, runtime)?;
        let fp_out = if bundle.rules_only() {
            Ok(None)
        } else {
            run_rule_set(&bundle.fp_rules, chunk, runtime)?
        };
        match (fn_out, fp_out) {
            (Ok(fn_labels), Ok(fp_labels)) => {
                let fn_labels = fn_labels.unwrap_or_else(|| LabelSequence::zeros(chunk.len()));
                parts.push(match base_labels {
                    None => fn_labels,
                    Some(_) => {
                        let fp_labels = fp_labels.unwrap_or_else(|| LabelSequence::ones(chunk.len()));
                        aggregate(&fallback_labels, &fp_labels, &fn_labels)?
                    }
                });
            }
            (Err((rule_id, diagnostic)), _) | (_, Err((rule_id, diagnostic))) => {
                tracing::warn!(metric = series.metric_id(), start, %rule_id, "rule failed on chunk; using fallback labels");
                fallbacks.push(ChunkFallback {
                    start_offset: start,
                    len: chunk.len(),
                    rule_id,
                    diagnostic,
                });
                parts.push(fallback_labels);
            }
        }
    }
    Ok(Detection {
        labels: LabelSequence::concat(&parts),
        fallbacks,
    })
}
