use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use tsrule::data::{LabelSequence, MetricSeries};
use tsrule::eval::{extract_segments, macro_average, EvaluationReport, MacroAverage, MetricKind, Segment};
use tsrule::fusion::ChunkFallback;
use tsrule::train::RunSummary;

#[derive(Debug, Clone, Serialize)]
pub struct SeriesEvaluation {
    pub metric_id: String,
    pub points: usize,
    pub report: EvaluationReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationOutput {
    pub series: Vec<SeriesEvaluation>,
    /// Unweighted mean over series, keyed by metric definition.
    pub macro_average: BTreeMap<&'static str, MacroAverage>,
}

fn kind_key(kind: MetricKind) -> &'static str {
    match kind {
        MetricKind::Point => "point",
        MetricKind::PointPa => "point_pa",
        MetricKind::Overlap => "overlap",
        MetricKind::EventPa => "event_pa",
    }
}

impl EvaluationOutput {
    pub fn new(series: Vec<SeriesEvaluation>) -> Self {
        let macro_average = MetricKind::ALL
            .iter()
            .filter_map(|&kind| {
                macro_average(series.iter().map(|s| s.report.get(kind))).map(|m| (kind_key(kind), m))
            })
            .collect();
        EvaluationOutput { series, macro_average }
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        for s in &self.series {
            let _ = writeln!(out, "{} ({} points)", s.metric_id, s.points);
            out.push_str(&report_table(&s.report));
            out.push('\n');
        }
        if self.series.len() > 1 {
            let _ = writeln!(out, "macro average over {} series", self.series.len());
            let _ = writeln!(out, "{:<12} {:>9} {:>9} {:>9}", "metric", "precision", "recall", "f1");
            for kind in MetricKind::ALL {
                if let Some(m) = self.macro_average.get(kind_key(kind)) {
                    let _ = writeln!(
                        out,
                        "{:<12} {:>9.4} {:>9.4} {:>9.4}",
                        kind.label(),
                        m.precision,
                        m.recall,
                        m.f1
                    );
                }
            }
        }
        out
    }
}

pub fn report_table(report: &EvaluationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}",
        "metric", "tp", "fp", "fn", "precision", "recall", "f1"
    );
    for kind in MetricKind::ALL {
        let s = report.get(kind);
        let _ = writeln!(
            out,
            "{:<12} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>9.4}",
            kind.label(),
            s.tp,
            s.fp,
            s.fn_,
            s.precision,
            s.recall,
            s.f1
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Incident {
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    pub start_timestamp: Option<i64>,
    pub end_timestamp: Option<i64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IncidentReport {
    pub metric_id: String,
    pub bundle_id: String,
    pub points: usize,
    pub abnormal_points: usize,
    pub incidents: Vec<Incident>,
    pub fallbacks: Vec<ChunkFallback>,
    /// Present when the input series carries ground-truth labels.
    pub evaluation: Option<EvaluationReport>,
}

impl IncidentReport {
    pub fn new(
        series: &MetricSeries,
        bundle_id: &str,
        labels: &LabelSequence,
        fallbacks: Vec<ChunkFallback>,
        evaluation: Option<EvaluationReport>,
    ) -> Self {
        let timestamps = series.timestamps();
        let incidents = extract_segments(labels)
            .into_iter()
            .map(|Segment { start, end }| Incident {
                start,
                end,
                start_timestamp: timestamps[start],
                end_timestamp: timestamps[end],
            })
            .collect();
        IncidentReport {
            metric_id: series.metric_id().to_string(),
            bundle_id: bundle_id.to_string(),
            points: labels.len(),
            abnormal_points: labels.count_abnormal(),
            incidents,
            fallbacks,
            evaluation,
        }
    }
}

pub fn run_table(summary: &RunSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:<8} {:>5} {:>10} {:>10}",
        "unit", "set", "rules", "val f1", "base f1"
    );
    for unit in &summary.units {
        for set in &unit.rule_sets {
            let f1 = |r: &Option<EvaluationReport>| {
                r.as_ref().map_or("-".to_string(), |r| format!("{:.4}", r.primary_f1()))
            };
            let _ = writeln!(
                out,
                "{:<24} {:<8} {:>5} {:>10} {:>10}",
                unit.unit.name,
                set.kind,
                set.rules.len(),
                f1(&set.best_validation),
                f1(&set.baseline_validation)
            );
        }
        for test in &unit.test {
            let base = test
                .base
                .as_ref()
                .map_or("-".to_string(), |r| format!("{:.4}", r.primary_f1()));
            let _ = writeln!(
                out,
                "  test {:<18} bundle {:.4}  base {}  fallbacks {}",
                test.metric_id,
                test.bundle.primary_f1(),
                base,
                test.fallback_chunks
            );
        }
    }
    out
}

const WIDTH: f64 = 1000.0;
const HEIGHT: f64 = 260.0;
const PAD: f64 = 10.0;
const BAND: f64 = 14.0;

/// Line plot of the series with a ground-truth segment strip above the
/// curve and a predicted segment strip below it.
pub fn plot_svg(series: &MetricSeries, predicted: &LabelSequence) -> String {
    let values = series.values();
    let n = values.len().max(2);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let plot_top = PAD + BAND + 4.0;
    let plot_bottom = HEIGHT - PAD - BAND - 4.0;
    let x = |i: usize| PAD + (WIDTH - 2.0 * PAD) * i as f64 / (n - 1) as f64;
    let y = |v: f64| plot_bottom - (plot_bottom - plot_top) * (v - lo) / span;
    let step = (WIDTH - 2.0 * PAD) / (n - 1) as f64;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(svg, "<title>{}</title>", escape(series.metric_id()));
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let mut band = |labels: &LabelSequence, top: f64, colour: &str, class: &str| {
        for Segment { start, end } in extract_segments(labels) {
            let x0 = x(start) - step / 2.0;
            let w = (end - start + 1) as f64 * step;
            let _ = writeln!(
                svg,
                "<rect class=\"{class}\" x=\"{:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{BAND}\" fill=\"{colour}\"/>",
                x0.max(0.0),
                w.max(1.0)
            );
        }
    };
    if let Some(gt) = series.labels() {
        band(gt, PAD, "#d62728", "gt");
    }
    band(predicted, plot_bottom + 4.0, "#1f77b4", "pred");
    let points: Vec<String> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| format!("{:.2},{:.2}", x(i), y(v)))
        .collect();
    let _ = writeln!(
        svg,
        "<polyline fill=\"none\" stroke=\"black\" stroke-width=\"1\" points=\"{}\"/>",
        points.join(" ")
    );
    svg.push_str("</svg>\n");
    svg
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
