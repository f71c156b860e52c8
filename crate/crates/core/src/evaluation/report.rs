use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::cv::CvReport;
use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "txt" => Ok(Self::Text),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(EvalError::UnknownFormat(other.to_string())),
        }
    }
}

/// One line of the CSV report. `fold` is the fold index, or `mean` for the
/// closing row, which carries the fold means and the pooled confusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub provider_id: String,
    pub classifier: String,
    pub fold: String,
    pub accuracy_pct: f64,
    pub macro_f1_pct: f64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tp: u64,
}

pub fn csv_rows(report: &CvReport) -> Vec<CsvRow> {
    let row = |fold: String, acc: f64, f1: f64, c: [[u64; 2]; 2]| CsvRow {
        provider_id: report.provider_id.clone(),
        classifier: report.classifier_id.clone(),
        fold,
        accuracy_pct: acc,
        macro_f1_pct: f1,
        tn: c[0][0],
        fp: c[0][1],
        fn_: c[1][0],
        tp: c[1][1],
    };
    let mut rows: Vec<CsvRow> = report
        .per_fold
        .iter()
        .enumerate()
        .map(|(i, m)| row(i.to_string(), m.accuracy, m.macro_f1, m.confusion))
        .collect();
    rows.push(row(
        "mean".into(),
        report.mean_accuracy,
        report.mean_macro_f1,
        report.pooled_confusion,
    ));
    rows
}

pub fn parse_csv_report(bytes: &[u8]) -> Result<Vec<CsvRow>, EvalError> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<Result<Vec<CsvRow>, _>>()
        .map_err(|e| EvalError::Parse(e.to_string()))
}

/// Aligned table with one row per report and accuracy / macro-F1 at two
/// decimals.
pub fn render_table(reports: &[CvReport]) -> String {
    let provider_w = reports
        .iter()
        .map(|r| r.provider_id.len())
        .chain(std::iter::once("provider".len()))
        .max()
        .unwrap_or(8);
    let mut out = String::new();
    let _ = writeln!(out, "{:<provider_w$}  {:<10}  {:>8}  {:>8}", "provider", "classifier", "accuracy", "macro_f1");
    for r in reports {
        let _ = writeln!(
            out,
            "{:<provider_w$}  {:<10}  {:>8.2}  {:>8.2}",
            r.provider_id, r.classifier_id, r.mean_accuracy, r.mean_macro_f1
        );
    }
    out
}

pub fn render_report(report: &CvReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Text => {
            let mut out = format!(
                "# {}-fold cross-validation, seed {}, {}\n",
                report.k,
                report.seed,
                if report.assignment.group_ids.is_some() {
                    "grouped"
                } else if report.assignment.stratified {
                    "stratified"
                } else {
                    "unstratified"
                }
            );
            out.push_str(&render_table(std::slice::from_ref(report)));
            let c = report.pooled_confusion;
            let _ = writeln!(out, "\npooled confusion (rows = true, cols = predicted)");
            let _ = writeln!(out, "{:>16}  {:>14}  {:>10}", "", "non-violence", "violence");
            let _ = writeln!(out, "{:>16}  {:>14}  {:>10}", "non-violence", c[0][0], c[0][1]);
            let _ = writeln!(out, "{:>16}  {:>14}  {:>10}", "violence", c[1][0], c[1][1]);
            out.into_bytes()
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in csv_rows(report) {
                w.serialize(row).expect("in-memory csv write");
            }
            w.into_inner().expect("in-memory csv flush")
        }
        ReportFormat::Json => {
            let mut v = serde_json::to_vec_pretty(report).expect("report serializes");
            v.push(b'\n');
            v
        }
    }
}
