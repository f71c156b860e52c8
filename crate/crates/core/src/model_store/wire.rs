//! On-disk JSON shape of an artifact.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{PipelineArtifact, StoreError};
use crate::classifiers::{Classifier, DecisionTree, Node, RandomForestModel, RfConfig, SvmModel};
use crate::evaluation::CvSummary;
use crate::features::{MfccConfig, ProviderDescriptor};

/// Marks a leaf in the `feature` array.
const LEAF: u32 = u32::MAX;

fn f64s(values: impl IntoIterator<Item = f64>) -> String {
    let bytes: Vec<u8> = values.into_iter().flat_map(f64::to_le_bytes).collect();
    STANDARD.encode(bytes)
}

fn u32s(values: impl IntoIterator<Item = u32>) -> String {
    let bytes: Vec<u8> = values.into_iter().flat_map(u32::to_le_bytes).collect();
    STANDARD.encode(bytes)
}

fn raw(field: &str, s: &str, width: usize) -> Result<Vec<u8>, StoreError> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| StoreError::CorruptArtifact(format!("{field}: {e}")))?;
    if bytes.len() % width != 0 {
        return Err(StoreError::CorruptArtifact(format!("{field}: length {} not a multiple of {width}", bytes.len())));
    }
    Ok(bytes)
}

fn de_f64s(field: &str, s: &str) -> Result<Vec<f64>, StoreError> {
    let v: Vec<f64> = raw(field, s, 8)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(StoreError::CorruptArtifact(format!("{field}: non-finite value")));
    }
    Ok(v)
}

fn de_u32s(field: &str, s: &str) -> Result<Vec<u32>, StoreError> {
    Ok(raw(field, s, 4)?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn de_scalar(field: &str, s: &str) -> Result<f64, StoreError> {
    match de_f64s(field, s)?.as_slice() {
        [x] => Ok(*x),
        v => Err(StoreError::CorruptArtifact(format!("{field}: expected 1 value, got {}", v.len()))),
    }
}

#[derive(Serialize, Deserialize)]
pub(super) struct ArtifactWire {
    format_version: u32,
    provider: ProviderDescriptor,
    mfcc_config: Option<MfccConfig>,
    classifier_kind: String,
    classifier_payload: PayloadWire,
    train_seed: u64,
    created_at: DateTime<Utc>,
    metrics_snapshot: Option<CvSummary>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PayloadWire {
    Rf(RfWire),
    Svm(SvmWire),
}

/// Trees flattened node-major; tree `t` owns nodes
/// `tree_offsets[t]..tree_offsets[t + 1]`, with child indices local to it.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RfWire {
    config: RfConfig,
    n_features: usize,
    tree_offsets: String,
    feature: String,
    threshold: String,
    left: String,
    right: String,
    count_0: String,
    count_1: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SvmWire {
    n_features: usize,
    n_support: usize,
    /// Row-major, `n_support * n_features` values.
    support_vectors: String,
    dual_coefs: String,
    bias: String,
    gamma: String,
    c: String,
}

impl RfWire {
    fn from_model(m: &RandomForestModel) -> Self {
        let nodes = || m.trees.iter().flat_map(|t| t.nodes.iter());
        let mut offsets = vec![0u32];
        for t in &m.trees {
            offsets.push(offsets.last().unwrap() + t.nodes.len() as u32);
        }
        let split = |f: fn(&Node) -> u32| u32s(nodes().map(f));
        Self {
            config: m.config.clone(),
            n_features: m.n_features,
            tree_offsets: u32s(offsets),
            feature: split(|n| match n {
                Node::Split { feature, .. } => *feature as u32,
                Node::Leaf { .. } => LEAF,
            }),
            threshold: f64s(nodes().map(|n| match n {
                Node::Split { threshold, .. } => *threshold,
                Node::Leaf { .. } => 0.0,
            })),
            left: split(|n| match n {
                Node::Split { left, .. } => *left as u32,
                Node::Leaf { .. } => 0,
            }),
            right: split(|n| match n {
                Node::Split { right, .. } => *right as u32,
                Node::Leaf { .. } => 0,
            }),
            count_0: split(|n| match n {
                Node::Leaf { counts } => counts[0],
                Node::Split { .. } => 0,
            }),
            count_1: split(|n| match n {
                Node::Leaf { counts } => counts[1],
                Node::Split { .. } => 0,
            }),
        }
    }

    fn into_model(self, train_seed: u64) -> Result<RandomForestModel, StoreError> {
        let offsets = de_u32s("tree_offsets", &self.tree_offsets)?;
        let feature = de_u32s("feature", &self.feature)?;
        let threshold = de_f64s("threshold", &self.threshold)?;
        let left = de_u32s("left", &self.left)?;
        let right = de_u32s("right", &self.right)?;
        let c0 = de_u32s("count_0", &self.count_0)?;
        let c1 = de_u32s("count_1", &self.count_1)?;
        let total = feature.len();
        if [threshold.len(), left.len(), right.len(), c0.len(), c1.len()].iter().any(|&l| l != total) {
            return Err(StoreError::InconsistentDims("forest node arrays differ in length".into()));
        }
        if offsets.first() != Some(&0)
            || offsets.last().map(|&l| l as usize) != Some(total)
            || offsets.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(StoreError::InconsistentDims("tree offsets do not partition the node arrays".into()));
        }
        let trees = offsets
            .windows(2)
            .map(|w| DecisionTree {
                nodes: (w[0] as usize..w[1] as usize)
                    .map(|i| {
                        if feature[i] == LEAF {
                            Node::Leaf { counts: [c0[i], c1[i]] }
                        } else {
                            Node::Split {
                                feature: feature[i] as usize,
                                threshold: threshold[i],
                                left: left[i] as usize,
                                right: right[i] as usize,
                            }
                        }
                    })
                    .collect(),
            })
            .collect();
        Ok(RandomForestModel {
            trees,
            config: self.config,
            train_seed,
            n_features: self.n_features,
        })
    }
}

impl SvmWire {
    fn from_model(m: &SvmModel) -> Self {
        Self {
            n_features: m.n_features,
            n_support: m.support_vectors.len(),
            support_vectors: f64s(m.support_vectors.iter().flatten().copied()),
            dual_coefs: f64s(m.dual_coefs.iter().copied()),
            bias: f64s([m.bias]),
            gamma: f64s([m.gamma]),
            c: f64s([m.c]),
        }
    }

    fn into_model(self) -> Result<SvmModel, StoreError> {
        let flat = de_f64s("support_vectors", &self.support_vectors)?;
        if flat.len() != self.n_support * self.n_features {
            return Err(StoreError::InconsistentDims(format!(
                "{} support-vector values for {} vectors of dim {}",
                flat.len(),
                self.n_support,
                self.n_features
            )));
        }
        let support_vectors = if self.n_features == 0 {
            vec![Vec::new(); self.n_support]
        } else {
            flat.chunks(self.n_features).map(<[f64]>::to_vec).collect()
        };
        Ok(SvmModel {
            support_vectors,
            dual_coefs: de_f64s("dual_coefs", &self.dual_coefs)?,
            bias: de_scalar("bias", &self.bias)?,
            gamma: de_scalar("gamma", &self.gamma)?,
            c: de_scalar("c", &self.c)?,
            n_features: self.n_features,
        })
    }
}

impl ArtifactWire {
    pub(super) fn from_artifact(a: &PipelineArtifact) -> Self {
        Self {
            format_version: a.format_version,
            provider: a.provider.clone(),
            mfcc_config: a.mfcc_config.clone(),
            classifier_kind: a.classifier_kind().to_string(),
            classifier_payload: match &a.classifier {
                Classifier::Rf(m) => PayloadWire::Rf(RfWire::from_model(m)),
                Classifier::Svm(m) => PayloadWire::Svm(SvmWire::from_model(m)),
            },
            train_seed: a.train_seed,
            created_at: a.created_at,
            metrics_snapshot: a.metrics_snapshot.clone(),
        }
    }

    pub(super) fn into_artifact(self) -> Result<PipelineArtifact, StoreError> {
        let classifier = match (self.classifier_kind.as_str(), self.classifier_payload) {
            ("rf", PayloadWire::Rf(w)) => Classifier::Rf(w.into_model(self.train_seed)?),
            ("svm", PayloadWire::Svm(w)) => Classifier::Svm(w.into_model()?),
            (kind, _) => {
                return Err(StoreError::CorruptArtifact(format!(
                    "classifier_kind {kind:?} does not match its payload"
                )))
            }
        };
        Ok(PipelineArtifact {
            format_version: self.format_version,
            provider: self.provider,
            mfcc_config: self.mfcc_config,
            classifier,
            train_seed: self.train_seed,
            created_at: self.created_at,
            metrics_snapshot: self.metrics_snapshot,
        })
    }
}
