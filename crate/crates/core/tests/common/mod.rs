#![allow(dead_code)]

//! Independent oracles and fixtures shared by the integration tests.

pub mod scenarios;

use std::path::PathBuf;
use std::sync::Arc;

use tsrule::data::LabelSequence;
use tsrule::llm::{AgentRole, Gateway, MockBackend, MockScript, BEGIN_MARKER, END_MARKER};
use tsrule::preprocess::Chunk;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

pub fn ls(bits: &[u8]) -> LabelSequence {
    LabelSequence::from_ints(bits).unwrap()
}

/// Bits of `mask` as a length-`len` sequence, least significant first.
pub fn bits(mask: u32, len: usize) -> Vec<u8> {
    (0..len).map(|i| ((mask >> i) & 1) as u8).collect()
}

/// Confusion counts and ratios, computed without the library.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Oracle {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Oracle {
    /// Everything is 1 when there is nothing to find and nothing was
    /// flagged. Otherwise recall with no positives is 1 and any other empty
    /// denominator gives 0.
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Oracle {
        if tp + fp + fn_ == 0 {
            return Oracle { tp, fp, fn_, precision: 1.0, recall: 1.0, f1: 1.0 };
        }
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Oracle { tp, fp, fn_, precision, recall, f1 }
    }
}

/// Runs of ones as inclusive `(start, end)` pairs, found by scanning.
pub fn runs(labels: &[u8]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        if labels[i] == 1 {
            let start = i;
            while i + 1 < labels.len() && labels[i + 1] == 1 {
                i += 1;
            }
            out.push((start, i));
        }
        i += 1;
    }
    out
}

pub fn oracle_point(gt: &[u8], pred: &[u8]) -> Oracle {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for (&g, &p) in gt.iter().zip(pred) {
        match (g, p) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (1, 0) => fn_ += 1,
            _ => {}
        }
    }
    Oracle::from_counts(tp, fp, fn_)
}

pub fn oracle_point_pa(gt: &[u8], pred: &[u8]) -> Oracle {
    let mut adjusted = pred.to_vec();
    for (s, e) in runs(gt) {
        if pred[s..=e].contains(&1) {
            adjusted[s..=e].fill(1);
        }
    }
    oracle_point(gt, &adjusted)
}

pub fn oracle_overlap(gt: &[u8], pred: &[u8]) -> Oracle {
    let segs = runs(gt);
    let hit = segs.iter().filter(|&&(s, e)| pred[s..=e].contains(&1)).count() as u64;
    Oracle::from_counts(hit, 0, segs.len() as u64 - hit)
}

pub fn oracle_event_pa(gt: &[u8], pred: &[u8]) -> Oracle {
    let segs = runs(gt);
    let hit = segs.iter().filter(|&&(s, e)| pred[s..=e].contains(&1)).count() as u64;
    let fp = gt.iter().zip(pred).filter(|&(&g, &p)| g == 0 && p == 1).count() as u64;
    Oracle::from_counts(hit, fp, segs.len() as u64 - hit)
}

/// The aggregation algorithm, one branch per line.
pub fn oracle_aggregate(base: &[u8], fp: &[u8], fn_: &[u8]) -> Vec<u8> {
    let mut out = base.to_vec();
    for i in 0..base.len() {
        if base[i] == 0 && fn_[i] == 1 {
            out[i] = 1;
        } else if base[i] == 1 && fp[i] == 0 {
            out[i] = 0;
        }
    }
    out
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Sort-all retrieval: rank every pool chunk, keep the first `count`.
pub fn oracle_retrieve(errors: &[Chunk], pool: &[Chunk], count: usize) -> Vec<usize> {
    let all: Vec<f64> = errors.iter().flat_map(|c| c.values.clone()).collect();
    let (mu, sigma) = mean_std(&all);
    let mut ranked: Vec<(f64, usize)> = pool
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let (m, s) = mean_std(&c.values);
            (((m - mu).powi(2) + (s - sigma).powi(2)).sqrt(), i)
        })
        .collect();
    ranked.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out: Vec<usize> = ranked.into_iter().take(count).map(|(_, i)| i).collect();
    out.sort();
    out
}

pub fn chunk(metric: &str, start: usize, values: &[f64], labels: Option<&[u8]>) -> Chunk {
    Chunk {
        metric_id: metric.into(),
        start_offset: start,
        values: values.to_vec(),
        labels: labels.map(ls),
    }
}

/// An agent reply wrapping `source` in the code markers.
pub fn reply(source: &str) -> String {
    format!("Here is the rule.\n{BEGIN_MARKER}\n{source}\n{END_MARKER}\n")
}

/// Threshold rule flagging every value above `high`.
pub fn above(high: f64) -> String {
    format!("# Abnormal Rule 1: value above {high}\n{{\"rules\": [{{\"kind\": \"range-run\", \"high\": {high}, \"min_run\": 1}}]}}")
}

pub const BROKEN_DSL: &str = "{\"rules\": [{\"kind\": \"zscore\", \"threshold\": 3}";

pub fn mock_gateway(script: MockScript) -> (Arc<MockBackend>, Gateway) {
    let backend = Arc::new(MockBackend::new(script));
    let gateway = Gateway::new(backend.clone());
    (backend, gateway)
}

pub fn script_from(detection: Vec<String>, repair: Vec<String>, review: Vec<String>) -> MockScript {
    let mut s = MockScript::new();
    *s.responses_mut(AgentRole::Detection) = detection;
    *s.responses_mut(AgentRole::Repair) = repair;
    *s.responses_mut(AgentRole::Review) = review;
    s
}

/// Validation data where `above(h)` for integer `h` in `0..=20` yields
/// exactly `20 - h` false positives and detects the one true anomaly, so
/// its Event-F1 PA is `2 / (22 - h)`. `above(100.0)` or higher detects
/// nothing and scores 0.
pub fn ladder_values() -> (Vec<f64>, Vec<u8>) {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for h in 1..=20 {
        values.extend([0.0, f64::from(h)]);
        labels.extend([0, 0]);
    }
    values.extend([0.0, 99.0, 0.0, 0.0]);
    labels.extend([0, 1, 0, 0]);
    (values, labels)
}

pub fn ladder_score(h: u32) -> f64 {
    if h >= 99 {
        0.0
    } else {
        2.0 / (22.0 - f64::from(h.min(20)))
    }
}
