//! Dataset-mode selection and contrastive example retrieval.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetMode, MetricSeries};
use crate::error::{Error, Result};
use crate::preprocess::{chunk_count, Chunk};

/// Train-split chunks a metric needs to get a rule set of its own.
pub const ONE_FOR_ONE_MIN_CHUNKS: usize = 10;

/// Unit name for one-for-all metrics that carry no group id.
pub const DEFAULT_GROUP: &str = "all";

/// Resolves `requested`; `Auto` becomes one-for-one when the training split
/// of `series` yields at least [`ONE_FOR_ONE_MIN_CHUNKS`] chunks.
pub fn choose_mode(series: &MetricSeries, chunk_size: usize, requested: DatasetMode) -> DatasetMode {
    choose_mode_for_len(series.len(), chunk_size, requested)
}

pub fn choose_mode_for_len(len: usize, chunk_size: usize, requested: DatasetMode) -> DatasetMode {
    match requested {
        DatasetMode::Auto if chunk_count(len, chunk_size) >= ONE_FOR_ONE_MIN_CHUNKS => DatasetMode::OneForOne,
        DatasetMode::Auto => DatasetMode::OneForAll,
        explicit => explicit,
    }
}

/// One training unit: one metric, or one group of metrics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingUnit {
    pub name: String,
    pub mode: DatasetMode,
    pub metric_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionPlan {
    pub units: Vec<TrainingUnit>,
}

impl SelectionPlan {
    pub fn unit_of(&self, metric_id: &str) -> Option<&TrainingUnit> {
        self.units.iter().find(|u| u.metric_ids.iter().any(|m| m == metric_id))
    }
}

/// Assigns every metric to exactly one unit. `train_len` gives the length
/// of each metric's training split. One-for-all metrics are grouped by
/// group id, ungrouped ones under [`DEFAULT_GROUP`]. Units come out sorted
/// by name.
pub fn plan_units(
    series: &[MetricSeries],
    chunk_size: usize,
    requested: DatasetMode,
    train_len: impl Fn(&MetricSeries) -> usize,
) -> SelectionPlan {
    let mut units: BTreeMap<String, TrainingUnit> = BTreeMap::new();
    for s in series {
        let mode = choose_mode_for_len(train_len(s), chunk_size, requested);
        let name = match mode {
            DatasetMode::OneForOne => s.metric_id().to_string(),
            _ => format!("group-{}", s.group_id().unwrap_or(DEFAULT_GROUP)),
        };
        units
            .entry(name.clone())
            .or_insert_with(|| TrainingUnit {
                name,
                mode,
                metric_ids: Vec::new(),
            })
            .metric_ids
            .push(s.metric_id().to_string());
    }
    SelectionPlan {
        units: units.into_values().collect(),
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Indices into `pool` of the contrastive examples, ascending.
///
/// One-for-one draws `count` distinct chunks uniformly with a seeded
/// generator. One-for-all ranks pool chunks by the Euclidean distance
/// between their (mean, std) and that of all error-chunk values combined,
/// ties by pool order. `count` is clamped to the pool size.
pub fn retrieve_contrastive_indices(
    error_chunks: &[Chunk],
    pool: &[Chunk],
    mode: DatasetMode,
    count: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if pool.is_empty() {
        return Err(Error::Validation("contrastive pool is empty".into()));
    }
    let count = count.min(pool.len());
    let mut picked = match mode {
        DatasetMode::OneForAll => {
            let all: Vec<f64> = error_chunks.iter().flat_map(|c| c.values.iter().copied()).collect();
            let (mu, sigma) = mean_std(&all);
            let mut scored: Vec<(f64, usize)> = pool
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let (m, s) = mean_std(&c.values);
                    (((m - mu).powi(2) + (s - sigma).powi(2)).sqrt(), i)
                })
                .collect();
            scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            scored.into_iter().take(count).map(|(_, i)| i).collect::<Vec<_>>()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::index::sample(&mut rng, pool.len(), count).into_vec()
        }
    };
    picked.sort_unstable();
    Ok(picked)
}

pub fn retrieve_contrastive(
    error_chunks: &[Chunk],
    pool: &[Chunk],
    mode: DatasetMode,
    count: usize,
    seed: u64,
) -> Result<Vec<Chunk>> {
    Ok(retrieve_contrastive_indices(error_chunks, pool, mode, count, seed)?
        .into_iter()
        .map(|i| pool[i].clone())
        .collect())
}
