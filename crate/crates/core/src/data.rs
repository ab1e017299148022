//! Series and label types, dataset ingestion, and train/test splitting.
//!
//! A dataset is a directory of CSV files, one per metric, each with the header
//! `timestamp,value,label`. The file stem is the metric id. An optional
//! `groups.csv` maps metric ids to group ids for one-for-all training.
//! The `label` column may be omitted for detection-time input.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_len, Error, Result};

/// Binary anomaly labels, one per point. `true` is abnormal.
///
/// Serialises as a list of `0`/`1` integers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct LabelSequence(Vec<bool>);

impl LabelSequence {
    pub fn new(labels: Vec<bool>) -> Self {
        LabelSequence(labels)
    }

    /// Builds from integer labels, rejecting anything but 0 and 1.
    pub fn from_ints<T: Copy + Into<i64>>(values: &[T]) -> Result<Self> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| match v.into() {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Validation(format!(
                    "label at position {i} is {other}, expected 0 or 1"
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .map(LabelSequence)
    }

    pub fn zeros(len: usize) -> Self {
        LabelSequence(vec![false; len])
    }

    pub fn ones(len: usize) -> Self {
        LabelSequence(vec![true; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<bool> {
        self.0.get(index).copied()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.0.iter().copied()
    }

    pub fn count_abnormal(&self) -> usize {
        self.0.iter().filter(|&&l| l).count()
    }

    pub fn slice(&self, start: usize, end: usize) -> LabelSequence {
        LabelSequence(self.0[start..end].to_vec())
    }

    pub fn to_ints(&self) -> Vec<u8> {
        self.0.iter().map(|&l| u8::from(l)).collect()
    }

    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a LabelSequence>) -> LabelSequence {
        LabelSequence(parts.into_iter().flat_map(|p| p.0.iter().copied()).collect())
    }

    /// Pointwise OR. Both sequences must have the same length.
    pub fn or(&self, other: &LabelSequence) -> Result<LabelSequence> {
        ensure_same_len(self.len(), other.len())?;
        Ok(LabelSequence(
            self.0.iter().zip(&other.0).map(|(a, b)| *a || *b).collect(),
        ))
    }
}

impl TryFrom<Vec<u8>> for LabelSequence {
    type Error = Error;

    fn try_from(value: Vec<u8>) -> Result<Self> {
        LabelSequence::from_ints(&value)
    }
}

impl From<LabelSequence> for Vec<u8> {
    fn from(value: LabelSequence) -> Self {
        value.to_ints()
    }
}

impl From<Vec<bool>> for LabelSequence {
    fn from(value: Vec<bool>) -> Self {
        LabelSequence(value)
    }
}

impl FromIterator<bool> for LabelSequence {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        LabelSequence(iter.into_iter().collect())
    }
}

impl fmt::Display for LabelSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", u8::from(*l))?;
        }
        write!(f, "]")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub timestamp: Option<i64>,
    pub value: f64,
}

/// One univariate metric. Labels are required for training and optional
/// for detection-time input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    metric_id: String,
    group_id: Option<String>,
    points: Vec<Point>,
    labels: Option<LabelSequence>,
}

impl MetricSeries {
    pub fn new(
        metric_id: impl Into<String>,
        points: Vec<Point>,
        labels: Option<LabelSequence>,
    ) -> Result<Self> {
        let metric_id = metric_id.into();
        if let Some(labels) = &labels {
            ensure_same_len(points.len(), labels.len())?;
        }
        if let Some((i, p)) = points.iter().enumerate().find(|(_, p)| !p.value.is_finite()) {
            return Err(Error::Validation(format!(
                "{metric_id}: value at position {i} is not finite ({})",
                p.value
            )));
        }
        Ok(MetricSeries {
            metric_id,
            group_id: None,
            points,
            labels,
        })
    }

    /// Index-only series from raw values.
    pub fn from_values(
        metric_id: impl Into<String>,
        values: &[f64],
        labels: Option<LabelSequence>,
    ) -> Result<Self> {
        let points = values
            .iter()
            .map(|&value| Point {
                timestamp: None,
                value,
            })
            .collect();
        MetricSeries::new(metric_id, points, labels)
    }

    pub fn with_group(mut self, group_id: Option<String>) -> Self {
        self.group_id = group_id;
        self
    }

    pub fn with_labels(self, labels: Option<LabelSequence>) -> Result<Self> {
        let MetricSeries {
            metric_id,
            group_id,
            points,
            ..
        } = self;
        Ok(MetricSeries::new(metric_id, points, labels)?.with_group(group_id))
    }

    pub fn metric_id(&self) -> &str {
        &self.metric_id
    }

    pub fn group_id(&self) -> Option<&str> {
        self.group_id.as_deref()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    pub fn timestamps(&self) -> Vec<Option<i64>> {
        self.points.iter().map(|p| p.timestamp).collect()
    }

    pub fn labels(&self) -> Option<&LabelSequence> {
        self.labels.as_ref()
    }

    /// Labels, or a validation error naming the metric when absent.
    pub fn require_labels(&self) -> Result<&LabelSequence> {
        self.labels.as_ref().ok_or_else(|| {
            Error::Validation(format!("{}: ground-truth labels are required", self.metric_id))
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Contiguous sub-series `[start, end)`. Keeps metric and group ids.
    pub fn slice(&self, start: usize, end: usize) -> MetricSeries {
        MetricSeries {
            metric_id: self.metric_id.clone(),
            group_id: self.group_id.clone(),
            points: self.points[start..end].to_vec(),
            labels: self.labels.as_ref().map(|l| l.slice(start, end)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetMode {
    OneForOne,
    OneForAll,
    Auto,
}

impl fmt::Display for DatasetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetMode::OneForOne => "one-for-one",
            DatasetMode::OneForAll => "one-for-all",
            DatasetMode::Auto => "auto",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: PathBuf,
    #[serde(default = "default_split_ratio")]
    pub split_ratio: f64,
    #[serde(default = "default_mode")]
    pub mode: DatasetMode,
    /// Column of `groups.csv` holding the group id.
    #[serde(default = "default_group_key")]
    pub group_key: String,
}

fn default_split_ratio() -> f64 {
    0.7
}

fn default_mode() -> DatasetMode {
    DatasetMode::Auto
}

fn default_group_key() -> String {
    "group_id".to_string()
}

impl DatasetSpec {
    pub fn new(source: impl Into<PathBuf>) -> Self {
        DatasetSpec {
            source: source.into(),
            split_ratio: default_split_ratio(),
            mode: default_mode(),
            group_key: default_group_key(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_ratio(self.split_ratio)
    }
}

fn validate_ratio(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio < 1.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )))
    }
}

pub const GROUPS_FILE: &str = "groups.csv";

/// Loads every metric CSV under `path` (or the single file `path`), sorted by
/// metric id. Group ids come from `groups.csv` when present.
pub fn load_dataset(path: &Path, spec: &DatasetSpec) -> Result<Vec<MetricSeries>> {
    spec.validate()?;
    let files = if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        let mut files = Vec::new();
        let entries = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(path, e))?;
            let p = entry.path();
            let is_csv = p.extension().is_some_and(|ext| ext == "csv");
            let is_groups = p.file_name().is_some_and(|n| n == GROUPS_FILE);
            if p.is_file() && is_csv && !is_groups {
                files.push(p);
            }
        }
        files
    };
    if files.is_empty() {
        return Err(Error::Validation(format!(
            "{}: no metric CSV files found",
            path.display()
        )));
    }

    let groups = if path.is_dir() && path.join(GROUPS_FILE).is_file() {
        load_groups(&path.join(GROUPS_FILE), &spec.group_key)?
    } else {
        BTreeMap::new()
    };

    let mut series = files
        .iter()
        .map(|file| {
            let s = read_series_csv(file)?;
            let group = groups.get(s.metric_id()).cloned();
            Ok(s.with_group(group))
        })
        .collect::<Result<Vec<_>>>()?;
    series.sort_by(|a, b| a.metric_id.cmp(&b.metric_id));
    Ok(series)
}

fn load_groups(path: &Path, group_key: &str) -> Result<BTreeMap<String, String>> {
    let mut reader = csv_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| csv_error(path, &e))?
        .clone();
    let id_col = column(&headers, "metric_id", path)?;
    let group_col = column(&headers, group_key, path)?;
    let mut groups = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, &e))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |col: usize| {
            record.get(col).map(str::trim).ok_or_else(|| Error::Parse {
                file: path.to_path_buf(),
                line,
                message: "missing column".into(),
            })
        };
        groups.insert(field(id_col)?.to_string(), field(group_col)?.to_string());
    }
    Ok(groups)
}

/// Reads one metric file. The metric id is the file stem.
pub fn read_series_csv(path: &Path) -> Result<MetricSeries> {
    let metric_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Validation(format!("{}: unusable file name", path.display())))?
        .to_string();
    let mut reader = csv_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| csv_error(path, &e))?
        .clone();
    let ts_col = column(&headers, "timestamp", path)?;
    let value_col = column(&headers, "value", path)?;
    let label_col = headers.iter().position(|h| h.trim() == "label");

    let mut points = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, &e))?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse {
            file: path.to_path_buf(),
            line,
            message,
        };
        let ts_raw = record.get(ts_col).unwrap_or("").trim();
        let timestamp = if ts_raw.is_empty() {
            None
        } else {
            Some(
                ts_raw
                    .parse::<i64>()
                    .map_err(|e| parse_err(format!("bad timestamp {ts_raw:?}: {e}")))?,
            )
        };
        let v_raw = record
            .get(value_col)
            .ok_or_else(|| parse_err("missing value column".into()))?
            .trim();
        let value = v_raw
            .parse::<f64>()
            .map_err(|e| parse_err(format!("bad value {v_raw:?}: {e}")))?;
        if !value.is_finite() {
            return Err(parse_err(format!("value {v_raw:?} is not finite")));
        }
        points.push(Point { timestamp, value });
        if let Some(col) = label_col {
            let l_raw = record
                .get(col)
                .ok_or_else(|| parse_err("missing label column".into()))?
                .trim();
            labels.push(parse_label(l_raw).map_err(|m| match m {
                LabelParse::Malformed(m) => parse_err(m),
                LabelParse::OutOfRange(v) => Error::Validation(format!(
                    "{}:{line}: label {v} outside {{0,1}}",
                    path.display()
                )),
            })?);
        }
    }
    if points.is_empty() {
        return Err(Error::NoData(path.to_path_buf()));
    }
    let labels = label_col.map(|_| LabelSequence(labels));
    MetricSeries::new(metric_id, points, labels)
}

enum LabelParse {
    Malformed(String),
    OutOfRange(i64),
}

fn parse_label(raw: &str) -> std::result::Result<bool, LabelParse> {
    match raw.parse::<i64>() {
        Ok(0) => Ok(false),
        Ok(1) => Ok(true),
        Ok(v) => Err(LabelParse::OutOfRange(v)),
        Err(e) => Err(LabelParse::Malformed(format!("bad label {raw:?}: {e}"))),
    }
}

/// Writes `timestamp,value[,label]`. Values use the shortest decimal form
/// that parses back to the same `f64`.
pub fn write_series_csv(path: &Path, series: &MetricSeries) -> Result<()> {
    let mut out = String::new();
    out.push_str(if series.labels.is_some() {
        "timestamp,value,label\n"
    } else {
        "timestamp,value\n"
    });
    for (i, p) in series.points.iter().enumerate() {
        if let Some(ts) = p.timestamp {
            out.push_str(&ts.to_string());
        }
        out.push(',');
        out.push_str(&p.value.to_string());
        if let Some(labels) = &series.labels {
            out.push(',');
            out.push(if labels.0[i] { '1' } else { '0' });
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a `timestamp,label` file (base detector output or predictions).
pub fn read_labels_csv(path: &Path) -> Result<(Vec<Option<i64>>, LabelSequence)> {
    let mut reader = csv_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| csv_error(path, &e))?
        .clone();
    let ts_col = column(&headers, "timestamp", path)?;
    let label_col = column(&headers, "label", path)?;
    let mut timestamps = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, &e))?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse {
            file: path.to_path_buf(),
            line,
            message,
        };
        let ts_raw = record.get(ts_col).unwrap_or("").trim();
        timestamps.push(if ts_raw.is_empty() {
            None
        } else {
            Some(
                ts_raw
                    .parse::<i64>()
                    .map_err(|e| parse_err(format!("bad timestamp {ts_raw:?}: {e}")))?,
            )
        });
        let l_raw = record.get(label_col).unwrap_or("").trim();
        labels.push(parse_label(l_raw).map_err(|m| match m {
            LabelParse::Malformed(m) => parse_err(m),
            LabelParse::OutOfRange(v) => Error::Validation(format!(
                "{}:{line}: label {v} outside {{0,1}}",
                path.display()
            )),
        })?);
    }
    if labels.is_empty() {
        return Err(Error::NoData(path.to_path_buf()));
    }
    Ok((timestamps, LabelSequence(labels)))
}

/// Writes `timestamp,label`. Missing timestamps are written as the point index.
pub fn write_labels_csv(path: &Path, timestamps: &[Option<i64>], labels: &LabelSequence) -> Result<()> {
    ensure_same_len(timestamps.len(), labels.len())?;
    let mut out = String::from("timestamp,label\n");
    for (i, (ts, l)) in timestamps.iter().zip(labels.iter()).enumerate() {
        out.push_str(&ts.unwrap_or(i as i64).to_string());
        out.push(',');
        out.push(if l { '1' } else { '0' });
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// First `floor(ratio * N)` points go to train, the rest to test.
pub fn split_train_test(series: &MetricSeries, ratio: f64) -> Result<(MetricSeries, MetricSeries)> {
    validate_ratio(ratio)?;
    let n = series.len();
    let cut = (ratio * n as f64).floor() as usize;
    if cut == 0 || cut == n {
        return Err(Error::EmptyPartition {
            train: cut,
            test: n - cut,
        });
    }
    Ok((series.slice(0, cut), series.slice(cut, n)))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_error(path: &Path, e: &csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        file: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Parse {
            file: path.to_path_buf(),
            line: 1,
            message: format!("missing `{name}` column in header"),
        })
}
