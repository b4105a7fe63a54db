//! Rendering metric reports as Markdown, CSV or JSON.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EvalError, MetricReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

fn sorted(reports: &[MetricReport]) -> Vec<&MetricReport> {
    let mut rows: Vec<&MetricReport> = reports.iter().collect();
    rows.sort_by(|a, b| {
        b.overall
            .partial_cmp(&a.overall)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.label().cmp(&b.label()))
    });
    rows
}

fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

/// Renders reports sorted by overall score, descending, with 3-decimal
/// rounding. Markdown bolds the best value of each column when more than
/// one row is present.
pub fn emit_report(reports: &[MetricReport], format: ReportFormat) -> Result<String, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let rows = sorted(reports);
    match format {
        ReportFormat::Markdown => {
            let columns: [fn(&MetricReport) -> f64; 4] = [|r| r.exact_acc, |r| r.bin_f1, |r| r.bert_f1, |r| r.overall];
            let best: Vec<String> = columns
                .iter()
                .map(|col| fmt3(rows.iter().map(|r| col(r)).fold(f64::NEG_INFINITY, f64::max)))
                .collect();
            let mut out = String::from("| Model | ExactAcc | BinF1 | BERT_F1 | Overall |\n|:---|:---:|:---:|:---:|:---:|\n");
            for r in &rows {
                let _ = write!(out, "| {} |", r.label());
                for (col, best) in columns.iter().zip(&best) {
                    let v = fmt3(col(r));
                    if rows.len() > 1 && v == *best {
                        let _ = write!(out, " **{v}** |");
                    } else {
                        let _ = write!(out, " {v} |");
                    }
                }
                out.push('\n');
            }
            Ok(out)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let io = |e: csv::Error| EvalError::Render(e.to_string());
            w.write_record(["model", "shot_mode", "exact_acc", "bin_f1", "bert_f1", "overall"])
                .map_err(io)?;
            for r in &rows {
                w.write_record([
                    r.model.clone(),
                    r.shot_mode.to_string(),
                    fmt3(r.exact_acc),
                    fmt3(r.bin_f1),
                    fmt3(r.bert_f1),
                    fmt3(r.overall),
                ])
                .map_err(io)?;
            }
            let bytes = w.into_inner().map_err(|e| EvalError::Render(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
        }
        ReportFormat::Json => Ok(serde_json::to_string_pretty(&rows).expect("reports serialize") + "\n"),
    }
}

/// One parsed CSV row: model, shot mode and the four rounded scores.
pub type CsvRow = (String, usize, [f64; 4]);

/// Reads back the CSV produced by [`emit_report`].
pub fn parse_csv_report(source: &str) -> Result<Vec<CsvRow>, String> {
    let mut reader = csv::Reader::from_reader(source.as_bytes());
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let num = |i: usize| rec.get(i).ok_or("short row").and_then(|s| s.parse::<f64>().map_err(|_| "bad number"));
        let shot = rec.get(1).and_then(|s| s.parse().ok()).ok_or("bad shot_mode")?;
        out.push((
            rec.get(0).unwrap_or_default().to_string(),
            shot,
            [num(2)?, num(3)?, num(4)?, num(5)?],
        ));
    }
    Ok(out)
}
