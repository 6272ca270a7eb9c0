//! Markdown, CSV and plot-data renderings of a run artifact.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AggregateBlock, RunArtifact, RunnerError};
use crate::ingest::Outcome;
use crate::scenarios::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Markdown,
    Csv,
    PlotData,
}

impl ReportFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Markdown => "report.md",
            ReportFormat::Csv => "trials.csv",
            ReportFormat::PlotData => "plot_data.json",
        }
    }
}

/// One displayed number of an aggregate block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub model: String,
    pub scenario: Scenario,
    pub metric: &'static str,
    pub value: Option<f64>,
}

pub fn metric_rows(block: &AggregateBlock) -> Vec<MetricRow> {
    let row = |metric, value| MetricRow { model: block.model.clone(), scenario: block.scenario, metric, value };
    let v = &block.values;
    match block.scenario {
        Scenario::WhatIf | Scenario::SoWhat | Scenario::HowAbout => vec![row("mean_similarity", v.mean_similarity)],
        Scenario::WhyNot => vec![row("positive_rate", v.positive_rate)],
        Scenario::DischargePrediction => {
            let m = v.metrics.as_ref();
            let prec = |l: Outcome| m.map(|m| m.label(l)).filter(|x| x.precision_defined).map(|x| x.precision);
            let rec = |l: Outcome| m.map(|m| m.label(l)).filter(|x| x.recall_defined).map(|x| x.recall);
            vec![
                row("accuracy", m.map(|m| m.accuracy)),
                row("precision@alive", prec(Outcome::Alive)),
                row("recall@alive", rec(Outcome::Alive)),
                row("precision@expired", prec(Outcome::Expired)),
                row("recall@expired", rec(Outcome::Expired)),
            ]
        }
    }
}

pub fn format_value(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

pub fn markdown_summary(blocks: &[AggregateBlock]) -> String {
    let mut out = String::from(
        "| model | scenario | metric | value | trials | scored | refusals | undetermined | errors |\n\
         |---|---|---|---|---|---|---|---|---|\n",
    );
    for b in blocks {
        for r in metric_rows(b) {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
                r.model,
                r.scenario,
                r.metric,
                format_value(r.value),
                b.trials,
                b.values.scored,
                b.values.refusal_count,
                b.values.undetermined_count,
                b.errors
            ));
        }
    }
    out
}

pub fn trials_csv(artifact: &RunArtifact) -> Result<String, RunnerError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| RunnerError::Artifact { path: PathBuf::from("trials.csv"), reason: e.to_string() };
    w.write_record(["model", "scenario", "stay_id", "peer_stay_id", "score", "detail", "refusal", "error"])
        .map_err(csv_err)?;
    for t in &artifact.trials {
        let score = t.score.as_ref().and_then(|s| s.value()).map(|v| format!("{v:.6}")).unwrap_or_default();
        let detail = t.score.as_ref().map(|s| s.label()).unwrap_or_default();
        w.write_record([
            t.model.as_str(),
            t.scenario.slug(),
            &t.stay_id.to_string(),
            &t.peer_stay_id.map(|p| p.to_string()).unwrap_or_default(),
            &score,
            &detail,
            if t.refusal() { "true" } else { "false" },
            t.error.as_deref().unwrap_or(""),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| RunnerError::Artifact { path: PathBuf::from("trials.csv"), reason: e.to_string() })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Serialize)]
struct SeriesPoint {
    stay_id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    peer_stay_id: Option<u64>,
    score: Option<f64>,
}

#[derive(Debug, Serialize)]
struct PlotData {
    series: BTreeMap<String, BTreeMap<String, Vec<SeriesPoint>>>,
    aggregates: Vec<MetricRow>,
}

/// `series[scenario][model]` lists per-patient scores in stay order, the
/// shape a grouped bar or line chart needs.
pub fn plot_data(artifact: &RunArtifact) -> String {
    let mut series: BTreeMap<String, BTreeMap<String, Vec<SeriesPoint>>> = BTreeMap::new();
    for t in &artifact.trials {
        series.entry(t.scenario.slug().to_string()).or_default().entry(t.model.clone()).or_default().push(
            SeriesPoint {
                stay_id: t.stay_id.get(),
                peer_stay_id: t.peer_stay_id.map(|p| p.get()),
                score: t.score.as_ref().and_then(|s| s.value()),
            },
        );
    }
    let aggregates = artifact.summary.aggregates.iter().flat_map(metric_rows).collect();
    let data = PlotData { series, aggregates };
    serde_json::to_string_pretty(&data).expect("plot data serializes") + "\n"
}

/// Writes the requested renderings into `dir`; returns the files written.
pub fn emit_report(
    artifact: &RunArtifact,
    formats: &BTreeSet<ReportFormat>,
    dir: &Path,
) -> Result<Vec<PathBuf>, RunnerError> {
    let mut written = Vec::new();
    for f in formats {
        let text = match f {
            ReportFormat::Markdown => markdown_summary(&artifact.summary.aggregates),
            ReportFormat::Csv => trials_csv(artifact)?,
            ReportFormat::PlotData => plot_data(artifact),
        };
        std::fs::create_dir_all(dir).map_err(|e| RunnerError::Io { path: dir.to_path_buf(), reason: e.to_string() })?;
        let p = dir.join(f.file_name());
        std::fs::write(&p, text).map_err(|e| RunnerError::Io { path: p.clone(), reason: e.to_string() })?;
        written.push(p);
    }
    Ok(written)
}
