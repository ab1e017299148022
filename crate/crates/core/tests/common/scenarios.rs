//! Training scenarios shared by the training tests and the acceptance run.

use std::collections::BTreeMap;
use std::path::Path;

use tsrule::data::{LabelSequence, MetricSeries};
use tsrule::llm::{Gateway, MockScript, PromptLibrary};
use tsrule::preprocess::{Chunk, PreprocessConfig};
use tsrule::rule::{Dialect, RuleRuntime};
use tsrule::train::{
    run_training, RunLayout, RunSettings, RunSummary, Trainer, TrainingConfig, TrialError, TrialInput, TrialOutcome,
    ValidationSeries, ValidationSet, ValidationTarget,
};

use super::*;

pub fn config(n: usize, k: usize, iterations: u32) -> TrainingConfig {
    TrainingConfig {
        n_candidates: n,
        top_k: k,
        max_iterations: iterations,
        max_repair_rounds: 3,
        max_review_rounds: 3,
        dialect: Dialect::ThresholdDsl,
        ..TrainingConfig::default()
    }
}

pub fn ladder_chunk() -> Chunk {
    let (values, labels) = ladder_values();
    chunk("ladder", 0, &values, Some(&labels))
}

pub fn ladder_set(target: ValidationTarget) -> ValidationSet {
    let c = ladder_chunk();
    let base = match target {
        ValidationTarget::RulesOnly => None,
        ValidationTarget::Fusion(_) => c.labels.clone(),
    };
    ValidationSet::new(vec![ValidationSeries::new(vec![c], base).unwrap()], target).unwrap()
}

pub fn input(target: ValidationTarget) -> TrialInput {
    TrialInput {
        rule_prefix: "t-rules".into(),
        targets: vec![ladder_chunk()],
        contrast: vec![chunk("ladder", 0, &[1.0, 2.0, 1.0], Some(&[0, 0, 0]))],
        validation: ladder_set(target),
    }
}

pub fn train(config: &TrainingConfig, gateway: &Gateway, input: &TrialInput) -> Result<TrialOutcome, TrialError> {
    let runtime = RuleRuntime::native();
    let prompts = PromptLibrary::embedded();
    let render = PreprocessConfig::default();
    let trainer = Trainer { config, gateway, runtime: &runtime, prompts: &prompts, render: &render };
    trainer.train_trial(input, &mut |_| Ok(()))
}

pub fn heights(hs: &[u32]) -> Vec<String> {
    hs.iter().map(|&h| reply(&above(f64::from(h)))).collect()
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

/// Rank-counting selection oracle: index `i` is kept iff fewer than `k`
/// indices beat it, where a lower index wins a tie.
pub fn top_k_oracle(scores: &[f64], k: usize) -> Vec<usize> {
    let mut kept: Vec<(usize, usize)> = (0..scores.len())
        .filter_map(|i| {
            let rank = (0..scores.len()).filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i)).count();
            (rank < k).then_some((rank, i))
        })
        .collect();
    kept.sort();
    kept.into_iter().map(|(_, i)| i).collect()
}

/// Expected review calls and best score per iteration, simulated from the
/// candidate heights. Every review reply is `above(0)`, which never reaches
/// a best of at least `ladder_score(2)`.
pub fn simulate(plan: &[Vec<u32>], review_rounds: usize) -> (usize, Vec<f64>) {
    let mut best: Option<f64> = None;
    let mut reviews = 0;
    let mut trace = Vec::new();
    for hs in plan {
        let scores: Vec<f64> = hs.iter().map(|&h| ladder_score(h)).collect();
        if let Some(b) = best {
            reviews += scores.iter().filter(|&&s| s < b).count() * review_rounds;
        }
        let top = scores.iter().copied().fold(f64::MIN, f64::max);
        best = Some(best.map_or(top, |b: f64| b.max(top)));
        trace.push(best.unwrap());
    }
    (reviews, trace)
}

pub fn pipeline_series() -> MetricSeries {
    let mut values: Vec<f64> = (0..200).map(|i| f64::from(i % 10)).collect();
    let mut labels = vec![0u8; 200];
    for &i in &[30usize, 75, 120, 170] {
        values[i] = 99.0;
        labels[i] = 1;
    }
    values[60] = 40.0;
    MetricSeries::from_values("cpu.util", &values, Some(LabelSequence::from_ints(&labels).unwrap())).unwrap()
}

pub fn pipeline_script() -> MockScript {
    let mut detection = heights(&[50, 8, 30]);
    detection.push(reply(BROKEN_DSL));
    detection.extend(heights(&[20, 45, 9, 60, 35, 9, 10, 8]));
    let repair = vec![reply(BROKEN_DSL); 3];
    let review = heights(&[1; 30]);
    script_from(detection, repair, review)
}

pub fn run_pipeline(dir: &Path, cfg: &TrainingConfig) -> RunSummary {
    let (_, gateway) = mock_gateway(pipeline_script());
    let runtime = RuleRuntime::native();
    let prompts = PromptLibrary::embedded();
    let render = PreprocessConfig { chunk_size: 20, ..PreprocessConfig::default() };
    let trainer = Trainer { config: cfg, gateway: &gateway, runtime: &runtime, prompts: &prompts, render: &render };
    let layout = RunLayout::new(dir.join("out"), dir.join("registry"));
    run_training(&[pipeline_series()], &BTreeMap::new(), &RunSettings::default(), &trainer, &layout).unwrap()
}

pub fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

