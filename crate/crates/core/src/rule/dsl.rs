//! The `threshold-dsl` dialect: a declarative rule list interpreted natively.
//!
//! Source is a JSON document. Lines whose first non-blank character is `#`
//! are comments and may carry `Abnormal Rule N` / `Normal Rule N` notes.
//!
//! ```text
//! # Abnormal Rule 1: values far from the chunk mean
//! {"rules": [
//!   {"kind": "zscore", "threshold": 3.0},
//!   {"kind": "diff-spike", "threshold": 4000.0},
//!   {"kind": "range-run", "low": 2000.0, "high": 15000.0, "min_run": 10}
//! ]}
//! ```
//!
//! A point is abnormal if any listed condition flags it.

use serde::{Deserialize, Serialize};

use crate::data::LabelSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdProgram {
    pub rules: Vec<Condition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Condition {
    /// `|v - mean| > threshold * std` over the chunk (population std).
    /// A zero std flags nothing.
    Zscore { threshold: f64 },
    /// `|v[i] - v[i-1]| > threshold` flags point `i`.
    DiffSpike { threshold: f64 },
    /// A window of `min_run` consecutive points that all lie below `low` or
    /// above `high` is flagged entirely. Window starts range over
    /// `0..len - min_run`, exclusive of the last start, matching the
    /// shipped script fixture.
    RangeRun {
        #[serde(default)]
        low: Option<f64>,
        #[serde(default)]
        high: Option<f64>,
        min_run: usize,
    },
}

impl ThresholdProgram {
    /// Parses DSL source. Errors are human-readable diagnostics.
    pub fn parse(source: &str) -> Result<ThresholdProgram, String> {
        let json: String = source
            .lines()
            .map(|line| if line.trim_start().starts_with('#') { "" } else { line })
            .collect::<Vec<_>>()
            .join("\n");
        let program: ThresholdProgram =
            serde_json::from_str(&json).map_err(|e| format!("threshold-dsl parse error: {e}"))?;
        program.check()?;
        Ok(program)
    }

    fn check(&self) -> Result<(), String> {
        for (i, c) in self.rules.iter().enumerate() {
            let bad = |m: &str| Err(format!("threshold-dsl rule #{i}: {m}"));
            match c {
                Condition::Zscore { threshold } | Condition::DiffSpike { threshold } => {
                    if !threshold.is_finite() || *threshold < 0.0 {
                        return bad("threshold must be a finite non-negative number");
                    }
                }
                Condition::RangeRun { low, high, min_run } => {
                    if *min_run == 0 {
                        return bad("min_run must be at least 1");
                    }
                    if low.is_none() && high.is_none() {
                        return bad("range-run needs `low`, `high`, or both");
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_source(&self) -> String {
        serde_json::to_string_pretty(self).expect("serialisable program")
    }

    pub fn apply(&self, values: &[f64]) -> LabelSequence {
        let mut labels = vec![false; values.len()];
        for c in &self.rules {
            c.apply(values, &mut labels);
        }
        LabelSequence::new(labels)
    }
}

impl Condition {
    fn apply(&self, values: &[f64], labels: &mut [bool]) {
        let n = values.len();
        match *self {
            Condition::Zscore { threshold } => {
                if n == 0 {
                    return;
                }
                let mean = values.iter().sum::<f64>() / n as f64;
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                let std = var.sqrt();
                if std == 0.0 {
                    return;
                }
                for (l, v) in labels.iter_mut().zip(values) {
                    if (v - mean).abs() > threshold * std {
                        *l = true;
                    }
                }
            }
            Condition::DiffSpike { threshold } => {
                for i in 1..n {
                    if (values[i] - values[i - 1]).abs() > threshold {
                        labels[i] = true;
                    }
                }
            }
            Condition::RangeRun { low, high, min_run } => {
                let extreme: Vec<bool> = values
                    .iter()
                    .map(|&v| low.is_some_and(|lo| v < lo) || high.is_some_and(|hi| v > hi))
                    .collect();
                for start in 0..n.saturating_sub(min_run) {
                    let window = start..start + min_run;
                    if extreme[window.clone()].iter().all(|&e| e) {
                        labels[window].fill(true);
                    }
                }
            }
        }
    }
}
