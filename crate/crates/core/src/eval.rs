//! Segment extraction and the four F1 definitions used to score detectors.
//!
//! A segment (incident) is a maximal run of abnormal points. The four scores
//! differ in what counts as an instance:
//!
//! | definition     | TP / FN unit      | FP unit                          |
//! |----------------|-------------------|----------------------------------|
//! | Point-F1       | point             | point                            |
//! | Point-F1 PA    | point, after PA   | point                            |
//! | Overlap-F1     | GT segment        | never counted                    |
//! | Event-F1 PA    | GT segment        | predicted point outside every GT segment |
//!
//! PA (point adjustment) marks a whole ground-truth segment as predicted when
//! any of its points is predicted. Event-F1 PA is the default single score.
//!
//! Ratios with an empty denominator: when TP = FP = FN = 0 every ratio is 1.
//! Otherwise recall with TP + FN = 0 is 1 (nothing to recall), and any other
//! empty denominator gives 0.

use serde::{Deserialize, Serialize};

use crate::data::LabelSequence;
use crate::error::{ensure_same_len, Result};

/// Inclusive index range of consecutive abnormal points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index <= self.end
    }
}

pub fn extract_segments(labels: &LabelSequence) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut open: Option<usize> = None;
    for (i, abnormal) in labels.iter().enumerate() {
        match (abnormal, open) {
            (true, None) => open = Some(i),
            (false, Some(start)) => {
                segments.push(Segment { start, end: i - 1 });
                open = None;
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        segments.push(Segment {
            start,
            end: labels.len() - 1,
        });
    }
    segments
}

/// Confusion counts with derived ratios for one metric definition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricScore {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> MetricScore {
        if tp == 0 && fp == 0 && fn_ == 0 {
            return MetricScore {
                tp,
                fp,
                fn_,
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            };
        }
        let precision = ratio(tp, tp + fp, 0.0);
        let recall = ratio(tp, tp + fn_, 1.0);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        MetricScore {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }

    /// Sums the counts of two scores and recomputes the ratios.
    pub fn merge(&self, other: &MetricScore) -> MetricScore {
        MetricScore::from_counts(self.tp + other.tp, self.fp + other.fp, self.fn_ + other.fn_)
    }
}

fn ratio(num: u64, den: u64, if_empty: f64) -> f64 {
    if den == 0 {
        if_empty
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Point,
    PointPa,
    Overlap,
    EventPa,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::Point,
        MetricKind::PointPa,
        MetricKind::Overlap,
        MetricKind::EventPa,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MetricKind::Point => "Point-F1",
            MetricKind::PointPa => "Point-F1 PA",
            MetricKind::Overlap => "Overlap-F1",
            MetricKind::EventPa => "Event-F1 PA",
        }
    }
}

/// All four scores for one (ground truth, prediction) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub point: MetricScore,
    pub point_pa: MetricScore,
    pub overlap: MetricScore,
    pub event_pa: MetricScore,
}

impl EvaluationReport {
    pub fn get(&self, kind: MetricKind) -> &MetricScore {
        match kind {
            MetricKind::Point => &self.point,
            MetricKind::PointPa => &self.point_pa,
            MetricKind::Overlap => &self.overlap,
            MetricKind::EventPa => &self.event_pa,
        }
    }

    /// The framework's default scalar score (Event-F1 PA).
    pub fn primary_f1(&self) -> f64 {
        self.event_pa.f1
    }

    pub fn merge(&self, other: &EvaluationReport) -> EvaluationReport {
        EvaluationReport {
            point: self.point.merge(&other.point),
            point_pa: self.point_pa.merge(&other.point_pa),
            overlap: self.overlap.merge(&other.overlap),
            event_pa: self.event_pa.merge(&other.event_pa),
        }
    }
}

pub fn evaluate(gt: &LabelSequence, pred: &LabelSequence) -> Result<EvaluationReport> {
    Ok(EvaluationReport {
        point: point_f1(gt, pred)?,
        point_pa: point_f1_pa(gt, pred)?,
        overlap: overlap_f1(gt, pred)?,
        event_pa: event_f1_pa(gt, pred)?,
    })
}

pub fn point_f1(gt: &LabelSequence, pred: &LabelSequence) -> Result<MetricScore> {
    ensure_same_len(gt.len(), pred.len())?;
    Ok(pointwise(gt.as_slice(), pred.as_slice()))
}

fn pointwise(gt: &[bool], pred: &[bool]) -> MetricScore {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&g, &p) in gt.iter().zip(pred) {
        match (g, p) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    MetricScore::from_counts(tp, fp, fn_)
}

/// Prediction after point adjustment against `gt`.
pub fn point_adjust(gt: &LabelSequence, pred: &LabelSequence) -> Result<LabelSequence> {
    ensure_same_len(gt.len(), pred.len())?;
    let mut adjusted = pred.as_slice().to_vec();
    for seg in extract_segments(gt) {
        if pred.as_slice()[seg.start..=seg.end].iter().any(|&p| p) {
            adjusted[seg.start..=seg.end].fill(true);
        }
    }
    Ok(LabelSequence::new(adjusted))
}

pub fn point_f1_pa(gt: &LabelSequence, pred: &LabelSequence) -> Result<MetricScore> {
    let adjusted = point_adjust(gt, pred)?;
    Ok(pointwise(gt.as_slice(), adjusted.as_slice()))
}

fn detected_segments(gt: &LabelSequence, pred: &LabelSequence) -> (u64, u64) {
    let mut detected = 0;
    let mut missed = 0;
    for seg in extract_segments(gt) {
        if pred.as_slice()[seg.start..=seg.end].iter().any(|&p| p) {
            detected += 1;
        } else {
            missed += 1;
        }
    }
    (detected, missed)
}

pub fn overlap_f1(gt: &LabelSequence, pred: &LabelSequence) -> Result<MetricScore> {
    ensure_same_len(gt.len(), pred.len())?;
    let (tp, fn_) = detected_segments(gt, pred);
    Ok(MetricScore::from_counts(tp, 0, fn_))
}

pub fn event_f1_pa(gt: &LabelSequence, pred: &LabelSequence) -> Result<MetricScore> {
    ensure_same_len(gt.len(), pred.len())?;
    let (tp, fn_) = detected_segments(gt, pred);
    // Points outside every GT segment are exactly the points with gt = 0.
    let fp = gt.iter().zip(pred.iter()).filter(|&(g, p)| !g && p).count() as u64;
    Ok(MetricScore::from_counts(tp, fp, fn_))
}

/// Unweighted mean of precision, recall, and F1 across metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroAverage {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn macro_average<'a>(scores: impl IntoIterator<Item = &'a MetricScore>) -> Option<MacroAverage> {
    let mut n = 0usize;
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for s in scores {
        n += 1;
        p += s.precision;
        r += s.recall;
        f += s.f1;
    }
    (n > 0).then(|| MacroAverage {
        precision: p / n as f64,
        recall: r / n as f64,
        f1: f / n as f64,
    })
}
