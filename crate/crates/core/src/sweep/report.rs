use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::SweepResult;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

pub const COLUMNS: [&str; 6] = [
    "data_distribution",
    "accuracy_pct",
    "precision_pct",
    "recall_pct",
    "f1_pct",
    "auc",
];

/// One report line; metric fields are empty for a failed row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub data_distribution: String,
    pub accuracy_pct: Option<f64>,
    pub precision_pct: Option<f64>,
    pub recall_pct: Option<f64>,
    pub f1_pct: Option<f64>,
    pub auc: Option<f64>,
}

fn two_places(x: f64) -> String {
    format!("{x:.2}")
}

/// Rounds through the two-decimal rendering so every format carries the same value.
fn rounded(x: f64) -> f64 {
    two_places(x).parse().expect("formatted float parses")
}

impl ReportRow {
    /// Rendered cells in column order.
    pub fn cells(&self) -> [String; 6] {
        let cell = |v: Option<f64>| v.map(two_places).unwrap_or_default();
        [
            self.data_distribution.clone(),
            cell(self.accuracy_pct),
            cell(self.precision_pct),
            cell(self.recall_pct),
            cell(self.f1_pct),
            cell(self.auc),
        ]
    }
}

/// Report rows in descending real fraction.
pub fn report_rows(result: &SweepResult) -> Result<Vec<ReportRow>> {
    if result.rows.is_empty() {
        return Err(Error::Contract("sweep result has no rows".into()));
    }
    let mut rows: Vec<_> = result.rows.iter().collect();
    rows.sort_by_key(|r| std::cmp::Reverse(r.ratio.real_count));
    Ok(rows
        .into_iter()
        .map(|r| {
            let m = r.metrics.as_ref();
            ReportRow {
                data_distribution: r.distribution.clone(),
                accuracy_pct: m.map(|m| rounded(100.0 * m.accuracy)),
                precision_pct: m.map(|m| rounded(100.0 * m.precision)),
                recall_pct: m.map(|m| rounded(100.0 * m.recall)),
                f1_pct: m.map(|m| rounded(100.0 * m.f1)),
                auc: m.map(|m| rounded(m.auc)),
            }
        })
        .collect())
}

pub fn render_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLUMNS)?;
    for r in rows {
        w.write_record(r.cells())?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
}

pub fn render_json(rows: &[ReportRow]) -> Result<String> {
    Ok(serde_json::to_string_pretty(rows)?)
}

pub fn render_report(result: &SweepResult, format: ReportFormat) -> Result<String> {
    let rows = report_rows(result)?;
    match format {
        ReportFormat::Csv => render_csv(&rows),
        ReportFormat::Json => render_json(&rows),
    }
}

/// Writes the report in `format` to `path`.
pub fn emit_report(
    result: &SweepResult,
    format: ReportFormat,
    path: impl AsRef<Path>,
) -> Result<()> {
    let text = render_report(result, format)?;
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    if r.headers()?.iter().ne(COLUMNS) {
        return Err(Error::Data(
            "report header does not match the expected columns".into(),
        ));
    }
    let num = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|_| Error::Data(format!("bad report value `{s}`")))
        }
    };
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(ReportRow {
                data_distribution: rec[0].to_string(),
                accuracy_pct: num(&rec[1])?,
                precision_pct: num(&rec[2])?,
                recall_pct: num(&rec[3])?,
                f1_pct: num(&rec[4])?,
                auc: num(&rec[5])?,
            })
        })
        .collect()
}

pub fn parse_report_json(text: &str) -> Result<Vec<ReportRow>> {
    Ok(serde_json::from_str(text)?)
}
