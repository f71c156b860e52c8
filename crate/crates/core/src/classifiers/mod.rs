//! Binary classifiers trained from scratch: a CART random forest and an
//! RBF-kernel SVM solved by sequential minimal optimization.
//!
//! Labels are `0` (non-violence) and `1` (violence). Every tie resolves to
//! class 0.

mod forest;
mod svm;
mod tree;

pub use forest::{rf_predict, rf_train, MaxFeatures, RandomForestModel, RfConfig};
pub use svm::{resolve_gamma, svm_predict, svm_train, Gamma, SvmConfig, SvmFit, SvmModel};
pub use tree::{best_gini_split, gini, DecisionTree, Node, SplitCandidate};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("expected {expected} features, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("pooled feature variance is zero; gamma cannot be resolved")]
    ConstantFeatures,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Feature matrix with aligned binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<Vec<f64>>,
    y: Vec<u8>,
    dim: usize,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<u8>) -> Result<Self, ClassifierError> {
        if x.len() != y.len() {
            return Err(ClassifierError::DegenerateData(format!("{} rows but {} labels", x.len(), y.len())));
        }
        if x.len() < 2 {
            return Err(ClassifierError::DegenerateData(format!("need at least 2 samples, got {}", x.len())));
        }
        let dim = x[0].len();
        if dim == 0 {
            return Err(ClassifierError::DegenerateData("zero-dimensional features".into()));
        }
        if let Some(i) = x.iter().position(|r| r.len() != dim) {
            return Err(ClassifierError::DimMismatch {
                expected: dim,
                got: x[i].len(),
            });
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ClassifierError::DegenerateData("non-finite feature value".into()));
        }
        if let Some(&bad) = y.iter().find(|&&l| l > 1) {
            return Err(ClassifierError::DegenerateData(format!("label {bad} is not 0 or 1")));
        }
        Ok(Self { x, y, dim })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.y
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.y.iter().filter(|&&l| l == 1).count();
        [self.y.len() - ones, ones]
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, ClassifierError> {
        Self::new(
            indices.iter().map(|&i| self.x[i].clone()).collect(),
            indices.iter().map(|&i| self.y[i]).collect(),
        )
    }

    pub(crate) fn require_both_classes(&self) -> Result<(), ClassifierError> {
        let [neg, pos] = self.class_counts();
        if neg == 0 || pos == 0 {
            return Err(ClassifierError::DegenerateData(format!(
                "training needs both classes, got {neg} non-violent and {pos} violent"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: u8,
    /// Violent-vote fraction for forests; raw decision value for SVMs.
    pub score: f64,
}

/// Which classifier to train, with its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierSpec {
    Rf(RfConfig),
    Svm(SvmConfig),
}

impl ClassifierSpec {
    pub fn id(&self) -> &'static str {
        match self {
            ClassifierSpec::Rf(_) => "rf",
            ClassifierSpec::Svm(_) => "svm",
        }
    }

    pub fn default_for(id: &str) -> Option<Self> {
        match id {
            "rf" => Some(ClassifierSpec::Rf(RfConfig::default())),
            "svm" => Some(ClassifierSpec::Svm(SvmConfig::default())),
            _ => None,
        }
    }

    pub fn train(&self, data: &Dataset, seed: u64) -> Result<Classifier, ClassifierError> {
        match self {
            ClassifierSpec::Rf(cfg) => rf_train(data, cfg, seed).map(Classifier::Rf),
            ClassifierSpec::Svm(cfg) => svm_train(data, cfg, seed).map(|fit| Classifier::Svm(fit.model)),
        }
    }
}

/// A trained model of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Rf(RandomForestModel),
    Svm(SvmModel),
}

impl Classifier {
    pub fn kind(&self) -> &'static str {
        match self {
            Classifier::Rf(_) => "rf",
            Classifier::Svm(_) => "svm",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Classifier::Rf(m) => m.n_features,
            Classifier::Svm(m) => m.dim(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction, ClassifierError> {
        match self {
            Classifier::Rf(m) => rf_predict(m, x),
            Classifier::Svm(m) => svm_predict(m, x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![vec![0.0]], vec![0]).is_err());
        assert!(Dataset::new(vec![vec![0.0], vec![1.0]], vec![0]).is_err());
        assert!(Dataset::new(vec![vec![0.0], vec![1.0, 2.0]], vec![0, 1]).is_err());
        assert!(Dataset::new(vec![vec![0.0], vec![f64::NAN]], vec![0, 1]).is_err());
        assert!(Dataset::new(vec![vec![0.0], vec![1.0]], vec![0, 2]).is_err());
        let d = Dataset::new(vec![vec![0.0], vec![1.0], vec![2.0]], vec![0, 1, 1]).unwrap();
        assert_eq!(d.class_counts(), [1, 2]);
        assert_eq!(d.subset(&[2, 0]).unwrap().rows(), &[vec![2.0], vec![0.0]]);
    }

    #[test]
    fn single_class_rejected_by_both_trainers() {
        let d = Dataset::new(vec![vec![0.0], vec![1.0]], vec![1, 1]).unwrap();
        for spec in [ClassifierSpec::default_for("rf").unwrap(), ClassifierSpec::default_for("svm").unwrap()] {
            assert!(matches!(spec.train(&d, 0), Err(ClassifierError::DegenerateData(_))));
        }
    }
}
