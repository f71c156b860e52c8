use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::{kfold_split, FoldAssignment, DEFAULT_FOLDS};
use super::metrics::{confusion_matrix, Confusion, Metrics};
use super::EvalError;
use crate::classifiers::{ClassifierSpec, Dataset};
use crate::features::FeatureVector;
use crate::rng;

/// Ground truth for one chunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkLabel {
    pub label: u8,
    pub group: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvOptions {
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
    /// Keep chunks sharing a group inside a single fold.
    pub group_split: bool,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_FOLDS,
            seed: 0,
            stratified: true,
            group_split: false,
        }
    }
}

/// Fold-level results of one cross-validation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub classifier_id: String,
    pub provider_id: String,
    pub k: usize,
    pub seed: u64,
    pub per_fold: Vec<Metrics>,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
    pub pooled_confusion: Confusion,
    /// Sample order is ascending chunk id.
    pub chunk_ids: Vec<String>,
    pub assignment: FoldAssignment,
}

impl CvReport {
    pub fn summary(&self) -> CvSummary {
        CvSummary {
            classifier_id: self.classifier_id.clone(),
            provider_id: self.provider_id.clone(),
            k: self.k,
            seed: self.seed,
            mean_accuracy: self.mean_accuracy,
            mean_macro_f1: self.mean_macro_f1,
            pooled_confusion: self.pooled_confusion,
        }
    }
}

/// The headline numbers of a [`CvReport`], without per-sample detail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub classifier_id: String,
    pub provider_id: String,
    pub k: usize,
    pub seed: u64,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
    pub pooled_confusion: Confusion,
}

/// Joins feature vectors with labels by chunk id into ascending-id order.
pub fn align(
    features: &BTreeMap<String, FeatureVector>,
    labels: &BTreeMap<String, ChunkLabel>,
) -> Result<(Vec<String>, Dataset, Vec<String>, String), EvalError> {
    if let Some(id) = features.keys().find(|id| !labels.contains_key(*id)) {
        return Err(EvalError::Misaligned(format!("chunk {id:?} has no label")));
    }
    if let Some(id) = labels.keys().find(|id| !features.contains_key(*id)) {
        return Err(EvalError::Misaligned(format!("chunk {id:?} has no feature vector")));
    }
    let provider_id = features
        .values()
        .next()
        .map(|v| v.provider_id.clone())
        .unwrap_or_default();
    if let Some(v) = features.values().find(|v| v.provider_id != provider_id) {
        return Err(EvalError::Misaligned(format!(
            "mixed providers {provider_id:?} and {:?}",
            v.provider_id
        )));
    }
    let ids: Vec<String> = features.keys().cloned().collect();
    let x = features.values().map(FeatureVector::to_f64).collect();
    let y = ids.iter().map(|id| labels[id].label).collect();
    let groups = ids.iter().map(|id| labels[id].group.clone()).collect();
    let data = Dataset::new(x, y).map_err(|e| EvalError::Misaligned(e.to_string()))?;
    Ok((ids, data, groups, provider_id))
}

/// k-fold cross-validation of `spec` over aligned features and labels.
///
/// Fold `f` trains with seed `mix(seed, f)`; results are independent of
/// thread scheduling.
pub fn cross_validate(
    features: &BTreeMap<String, FeatureVector>,
    labels: &BTreeMap<String, ChunkLabel>,
    spec: &ClassifierSpec,
    opts: &CvOptions,
) -> Result<CvReport, EvalError> {
    let (chunk_ids, data, groups, provider_id) = align(features, labels)?;
    let mut report = cross_validate_dataset(&data, opts.group_split.then_some(groups.as_slice()), spec, opts)?;
    report.provider_id = provider_id;
    report.chunk_ids = chunk_ids;
    Ok(report)
}

/// Cross-validation over an already assembled dataset. The report carries
/// empty provider and chunk ids.
pub fn cross_validate_dataset(
    data: &Dataset,
    groups: Option<&[String]>,
    spec: &ClassifierSpec,
    opts: &CvOptions,
) -> Result<CvReport, EvalError> {
    let stratified = opts.stratified && groups.is_none();
    let assignment = kfold_split(data.labels(), opts.k, opts.seed, stratified, groups)?;
    let per_fold = (0..opts.k)
        .into_par_iter()
        .map(|fold| run_fold(data, &assignment, spec, opts.seed, fold))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<Metrics>, EvalError>>()?;

    let k = per_fold.len() as f64;
    let mean_accuracy = per_fold.iter().map(|m| m.accuracy).sum::<f64>() / k;
    let mean_macro_f1 = per_fold.iter().map(|m| m.macro_f1).sum::<f64>() / k;
    let mut pooled_confusion = [[0u64; 2]; 2];
    for m in &per_fold {
        for (r, row) in m.confusion.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                pooled_confusion[r][c] += v;
            }
        }
    }
    Ok(CvReport {
        classifier_id: spec.id().to_string(),
        provider_id: String::new(),
        k: opts.k,
        seed: opts.seed,
        per_fold,
        mean_accuracy,
        mean_macro_f1,
        pooled_confusion,
        chunk_ids: Vec::new(),
        assignment,
    })
}

fn run_fold(
    data: &Dataset,
    assignment: &FoldAssignment,
    spec: &ClassifierSpec,
    seed: u64,
    fold: usize,
) -> Result<Metrics, EvalError> {
    let annotate = |source| EvalError::Fold { fold, source };
    let train = data.subset(&assignment.train_indices(fold)).map_err(annotate)?;
    let model = spec.train(&train, rng::mix_seed(seed, fold as u64)).map_err(annotate)?;
    let test = assignment.test_indices(fold);
    let y_true: Vec<u8> = test.iter().map(|&i| data.labels()[i]).collect();
    let y_pred = test
        .iter()
        .map(|&i| model.predict(data.row(i)).map(|p| p.label))
        .collect::<Result<Vec<u8>, _>>()
        .map_err(annotate)?;
    Metrics::from_confusion(confusion_matrix(&y_true, &y_pred)?)
}
