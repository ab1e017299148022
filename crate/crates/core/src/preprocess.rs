//! Scaling, re-indexing, chunking and text rendering of series.
//!
//! Series are re-indexed (timestamps dropped), scaled to a fixed number of
//! significant figures, and cut into consecutive non-overlapping chunks. A
//! chunk is what the agents see in prompts and what rules execute on.

use serde::{Deserialize, Serialize};

use crate::data::{LabelSequence, MetricSeries, Point};
use crate::error::{Error, Result};

/// Chunk size used for the KPI benchmark.
pub const CHUNK_PRESET_KPI: usize = 2500;
/// Chunk size used for the Yahoo benchmark.
pub const CHUNK_PRESET_YAHOO: usize = 500;
/// Chunk size used for the internal hardware-metrics dataset.
pub const CHUNK_PRESET_INTERNAL: usize = 1000;

/// Named chunk-size presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChunkPreset {
    Kpi,
    Yahoo,
    Internal,
}

impl ChunkPreset {
    pub fn chunk_size(self) -> usize {
        match self {
            ChunkPreset::Kpi => CHUNK_PRESET_KPI,
            ChunkPreset::Yahoo => CHUNK_PRESET_YAHOO,
            ChunkPreset::Internal => CHUNK_PRESET_INTERNAL,
        }
    }

    pub fn parse(name: &str) -> Option<ChunkPreset> {
        match name.to_ascii_lowercase().as_str() {
            "kpi" => Some(ChunkPreset::Kpi),
            "yahoo" => Some(ChunkPreset::Yahoo),
            "internal" => Some(ChunkPreset::Internal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub significant_figures: u32,
    pub chunk_size: usize,
    /// Put a space after every value digit when rendering prompts.
    pub digit_spacing: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            significant_figures: 4,
            chunk_size: CHUNK_PRESET_YAHOO,
            digit_spacing: true,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_size < 2 {
            return Err(Error::Validation(format!(
                "chunk_size must be at least 2, got {}",
                self.chunk_size
            )));
        }
        if self.significant_figures < 1 {
            return Err(Error::Validation(
                "significant_figures must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// A contiguous window of a series with chunk-local indices `0..len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub metric_id: String,
    /// Position of the first row in the parent series.
    pub start_offset: usize,
    pub values: Vec<f64>,
    pub labels: Option<LabelSequence>,
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(value, index)` rows, the shape rules receive.
    pub fn rows(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.values.iter().copied().zip(0..)
    }

    /// Constant-valued chunk shaped like real input.
    pub fn dummy(len: usize, value: f64) -> Chunk {
        Chunk {
            metric_id: "dummy".into(),
            start_offset: 0,
            values: vec![value; len],
            labels: None,
        }
    }
}

/// Rounds every value to `figures` significant digits, half away from zero.
///
/// Rounding works on the shortest decimal representation of each value, so
/// the result is the `f64` closest to the rounded decimal and the operation
/// is idempotent.
pub fn scale_to_sig_figs(values: &[f64], figures: u32) -> Result<Vec<f64>> {
    if figures == 0 {
        return Err(Error::Validation("significant figures must be >= 1".into()));
    }
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "value at position {i} is not finite ({v})"
                )));
            }
            Ok(round_sig(v, figures as usize))
        })
        .collect()
}

fn round_sig(value: f64, figures: usize) -> f64 {
    if value == 0.0 {
        return 0.0;
    }
    // `{:e}` yields the shortest round-trip digits, e.g. "-1.23456e-1".
    let repr = format!("{:e}", value.abs());
    let (mantissa, exp) = repr.split_once('e').expect("exponent form");
    let mut exp: i32 = exp.parse().expect("integer exponent");
    let mut digits: Vec<u8> = mantissa
        .bytes()
        .filter(u8::is_ascii_digit)
        .map(|b| b - b'0')
        .collect();
    if digits.len() <= figures {
        return value;
    }
    let round_up = digits[figures] >= 5;
    digits.truncate(figures);
    if round_up {
        let mut i = figures;
        loop {
            if i == 0 {
                digits.insert(0, 1);
                digits.truncate(figures);
                exp += 1;
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let mut text = String::with_capacity(figures + 8);
    if value < 0.0 {
        text.push('-');
    }
    text.push((b'0' + digits[0]) as char);
    if digits.len() > 1 {
        text.push('.');
        text.extend(digits[1..].iter().map(|d| (b'0' + d) as char));
    }
    text.push('e');
    text.push_str(&exp.to_string());
    text.parse().expect("well-formed float literal")
}

/// Drops timestamps; positions become the index.
pub fn reindex(series: &MetricSeries) -> MetricSeries {
    let points = series
        .points()
        .iter()
        .map(|p| Point {
            timestamp: None,
            value: p.value,
        })
        .collect();
    MetricSeries::new(series.metric_id(), points, series.labels().cloned())
        .expect("invariants carried over from a valid series")
        .with_group(series.group_id().map(str::to_string))
}

/// Number of chunks `chunk_series` produces for a series of `len` points.
pub fn chunk_count(len: usize, size: usize) -> usize {
    if len < size {
        return usize::from(len > 0);
    }
    let full = len / size;
    if len % size >= 2 {
        full + 1
    } else {
        full
    }
}

/// Cuts a series into consecutive windows of `size` rows. A trailing
/// remainder of at least two rows is its own chunk; a single leftover row
/// is merged into the previous chunk.
pub fn chunk_series(series: &MetricSeries, size: usize) -> Result<Vec<Chunk>> {
    if size < 2 {
        return Err(Error::Validation(format!(
            "chunk size must be at least 2, got {size}"
        )));
    }
    let n = series.len();
    if n < 2 {
        return Err(Error::Validation(format!(
            "{}: series of {n} point(s) is too short to chunk",
            series.metric_id()
        )));
    }
    let values = series.values();
    let count = chunk_count(n, size);
    let mut chunks = Vec::with_capacity(count);
    for c in 0..count {
        let start = c * size;
        let end = if c + 1 == count { n } else { start + size };
        chunks.push(Chunk {
            metric_id: series.metric_id().to_string(),
            start_offset: start,
            values: values[start..end].to_vec(),
            labels: series.labels().map(|l| l.slice(start, end)),
        });
    }
    Ok(chunks)
}

/// Re-indexes, scales, and chunks a series with `config`.
pub fn prepare(series: &MetricSeries, config: &PreprocessConfig) -> Result<Vec<Chunk>> {
    config.validate()?;
    let reindexed = reindex(series);
    let scaled = scale_to_sig_figs(&reindexed.values(), config.significant_figures)?;
    let scaled = MetricSeries::from_values(series.metric_id(), &scaled, reindexed.labels().cloned())?;
    chunk_series(&scaled, config.chunk_size)
}

/// Renders `index<TAB>value` lines.
pub fn render_chunk_text(chunk: &Chunk, config: &PreprocessConfig) -> String {
    let mut out = String::with_capacity(chunk.len() * 12);
    for (value, index) in chunk.rows() {
        out.push_str(&index.to_string());
        out.push('\t');
        let text = value.to_string();
        if config.digit_spacing {
            out.push_str(&space_digits(&text));
        } else {
            out.push_str(&text);
        }
        out.push('\n');
    }
    out
}

/// Separates the characters of a number with single spaces, keeping a
/// leading sign attached to the first digit: `-0.5` becomes `-0 . 5`.
pub fn space_digits(number: &str) -> String {
    let mut out = String::with_capacity(number.len() * 2);
    let mut chars = number.chars().peekable();
    if let Some(&c) = chars.peek() {
        if c == '-' || c == '+' {
            out.push(c);
            chars.next();
        }
    }
    let mut first = true;
    for c in chars {
        if !first {
            out.push(' ');
        }
        out.push(c);
        first = false;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(n: usize) -> MetricSeries {
        let values: Vec<f64> = (0..n).map(|i| i as f64).collect();
        MetricSeries::from_values("m", &values, Some(LabelSequence::zeros(n))).unwrap()
    }

    #[test]
    fn sig_fig_examples() {
        assert_eq!(scale_to_sig_figs(&[0.123456], 3).unwrap(), vec![0.123]);
        assert_eq!(scale_to_sig_figs(&[12345.6], 3).unwrap(), vec![12300.0]);
        assert_eq!(scale_to_sig_figs(&[0.0], 1).unwrap(), vec![0.0]);
        assert_eq!(scale_to_sig_figs(&[0.0], 7).unwrap(), vec![0.0]);
    }

    #[test]
    fn sig_fig_half_away_from_zero() {
        assert_eq!(scale_to_sig_figs(&[0.125, -0.125], 2).unwrap(), vec![0.13, -0.13]);
        assert_eq!(scale_to_sig_figs(&[2.5, -2.5], 1).unwrap(), vec![3.0, -3.0]);
        assert_eq!(scale_to_sig_figs(&[9.96], 2).unwrap(), vec![10.0]);
        assert_eq!(scale_to_sig_figs(&[-999.5], 3).unwrap(), vec![-1000.0]);
    }

    #[test]
    fn sig_fig_rejects_non_finite() {
        assert!(scale_to_sig_figs(&[f64::INFINITY], 3).is_err());
        assert!(scale_to_sig_figs(&[1.0], 0).is_err());
    }

    #[test]
    fn reindex_drops_timestamps() {
        let s = MetricSeries::new(
            "m",
            vec![
                Point { timestamp: Some(1_700_000_000), value: 1.0 },
                Point { timestamp: Some(1_700_000_060), value: 2.0 },
            ],
            None,
        )
        .unwrap();
        let r = reindex(&s);
        assert_eq!(r.timestamps(), vec![None, None]);
        assert_eq!(r.values(), vec![1.0, 2.0]);
        assert_eq!(reindex(&r), r);
        let empty = MetricSeries::from_values("e", &[], None).unwrap();
        assert!(reindex(&empty).is_empty());
    }

    #[test]
    fn chunk_lengths() {
        let lens = |n, size| -> Vec<usize> {
            chunk_series(&series(n), size).unwrap().iter().map(Chunk::len).collect()
        };
        assert_eq!(lens(5000, CHUNK_PRESET_KPI), vec![2500, 2500]);
        assert_eq!(lens(7, 3), vec![3, 4]);
        assert_eq!(lens(3, 5), vec![3]);
        assert_eq!(lens(8, 3), vec![3, 3, 2]);
        assert_eq!(lens(6, 3), vec![3, 3]);
    }

    #[test]
    fn chunk_offsets_and_labels() {
        let chunks = chunk_series(&series(7), 3).unwrap();
        assert_eq!(chunks[1].start_offset, 3);
        assert_eq!(chunks[1].values, vec![3.0, 4.0, 5.0, 6.0]);
        assert_eq!(chunks[1].labels.as_ref().unwrap().len(), 4);
        assert_eq!(chunks[1].rows().map(|r| r.1).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn chunk_rejects_short_input() {
        assert!(chunk_series(&series(1), 3).is_err());
        assert!(chunk_series(&series(10), 1).is_err());
    }

    #[test]
    fn chunk_count_matches_chunking() {
        for n in 2..60 {
            for size in 2..12 {
                assert_eq!(chunk_count(n, size), chunk_series(&series(n), size).unwrap().len());
            }
        }
    }

    #[test]
    fn renders_rows() {
        let chunk = Chunk {
            metric_id: "m".into(),
            start_offset: 40,
            values: vec![1234.0, -0.5],
            labels: None,
        };
        let spaced = PreprocessConfig { digit_spacing: true, ..Default::default() };
        let plain = PreprocessConfig { digit_spacing: false, ..Default::default() };
        assert_eq!(render_chunk_text(&chunk, &spaced), "0\t1 2 3 4\n1\t-0 . 5\n");
        assert_eq!(render_chunk_text(&chunk, &plain), "0\t1234\n1\t-0.5\n");
    }

    #[test]
    fn presets() {
        assert_eq!(ChunkPreset::parse("KPI").unwrap().chunk_size(), 2500);
        assert_eq!(ChunkPreset::parse("yahoo").unwrap().chunk_size(), 500);
        assert_eq!(ChunkPreset::parse("internal").unwrap().chunk_size(), 1000);
        assert!(ChunkPreset::parse("other").is_none());
    }
}
