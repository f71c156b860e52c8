//! k-fold protocol, binary metrics and report rendering.

mod cv;
mod folds;
mod metrics;
mod report;

pub use cv::{align, cross_validate, cross_validate_dataset, ChunkLabel, CvOptions, CvReport, CvSummary};
pub use folds::{kfold_split, FoldAssignment, DEFAULT_FOLDS};
pub use metrics::{compute_metrics, confusion_matrix, Confusion, Metrics};
pub use report::{csv_rows, parse_csv_report, render_report, render_table, CsvRow, ReportFormat};

use thiserror::Error;

use crate::classifiers::ClassifierError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("need at least k = {k} samples, got {n}")]
    TooFewSamples { n: usize, k: usize },
    #[error("class {class} has {count} samples, fewer than k = {k}")]
    TooFewPerClass { class: u8, count: usize, k: usize },
    #[error("{groups} distinct groups cannot fill k = {k} folds")]
    TooFewGroups { groups: usize, k: usize },
    #[error("stratified and grouped splitting are mutually exclusive")]
    ConflictingOptions,
    #[error("k must be at least 2, got {0}")]
    InvalidFolds(usize),
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(u8),
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("features and labels do not align: {0}")]
    Misaligned(String),
    #[error("fold {fold}: {source}")]
    Fold { fold: usize, source: ClassifierError },
    #[error("unknown report format {0:?}")]
    UnknownFormat(String),
    #[error("malformed report: {0}")]
    Parse(String),
}
