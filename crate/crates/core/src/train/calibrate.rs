use serde::{Deserialize, Serialize};

use super::engine::{render_samples, Trainer};
use crate::data::MetricSeries;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::llm::{extract_code, AgentRole, PromptContext};
use crate::preprocess::{prepare, PreprocessConfig};
use crate::rule::{Provenance, RuleArtifact};

pub const DEFAULT_PROPOSALS_PER_SIZE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeScore {
    pub chunk_size: usize,
    /// Best training Event-F1 PA among the proposals; `None` if all failed.
    pub best_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub chosen: usize,
    pub scores: Vec<SizeScore>,
}

/// Picks the chunk size whose best detection-only proposal scores highest
/// on `series` (a labelled training split). Sizes are tried in ascending
/// order; ties go to the smaller size. Proposals get no repair or review.
pub fn calibrate_chunk_size(
    series: &MetricSeries,
    sizes: &[usize],
    proposals: usize,
    trainer: &Trainer<'_>,
) -> Result<CalibrationResult> {
    if sizes.is_empty() {
        return Err(Error::Validation("no candidate chunk sizes given".into()));
    }
    let gt = series.require_labels()?.clone();
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut scores = Vec::with_capacity(sorted.len());
    let mut chosen: Option<(usize, f64)> = None;
    for size in sorted {
        let config = PreprocessConfig {
            chunk_size: size,
            ..trainer.render.clone()
        };
        let chunks = prepare(series, &config)?;
        let abnormal: Vec<_> = chunks
            .iter()
            .filter(|c| c.labels.as_ref().is_some_and(|l| l.count_abnormal() > 0))
            .collect();
        let shown = if abnormal.is_empty() { chunks.iter().collect() } else { abnormal };
        let mut best: Option<f64> = None;
        for p in 0..proposals {
            let data = render_samples(&[shown[p % shown.len()]], &config);
            let prompt = trainer
                .prompts
                .render(AgentRole::Detection, trainer.config.dialect, &PromptContext::new().with("data", data))?;
            let response = trainer.gateway.complete(AgentRole::Detection, &prompt)?.response;
            let Ok(source) = extract_code(&response) else {
                continue;
            };
            let rule = RuleArtifact::new(
                format!("calibrate-s{size}-p{p}"),
                trainer.config.dialect,
                source,
                Provenance::Fresh,
                trainer.config.trial,
                0,
            )?;
            if !trainer.runtime.syntax_check(&rule)?.is_ok() {
                continue;
            }
            let Ok(labels) = trainer.runtime.execute_all(&rule, &chunks)? else {
                continue;
            };
            let f1 = evaluate(&gt, &labels)?.primary_f1();
            best = Some(best.map_or(f1, |b: f64| b.max(f1)));
        }
        tracing::info!(size, best = best.unwrap_or(f64::NAN), "calibration size scored");
        if let Some(f1) = best {
            if chosen.is_none_or(|(_, c)| f1 > c) {
                chosen = Some((size, f1));
            }
        }
        scores.push(SizeScore {
            chunk_size: size,
            best_f1: best,
        });
    }
    let (chosen, _) =
        chosen.ok_or_else(|| Error::Calibration("every proposal failed for every chunk size".into()))?;
    Ok(CalibrationResult { chosen, scores })
}
