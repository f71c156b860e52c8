//! Versioned, checksummed `.avdm` pipeline artifacts.
//!
//! An artifact is three lines of UTF-8:
//!
//! ```text
//! AVDM 1
//! {"format_version":1,...}
//! crc32 1a2b3c4d
//! ```
//!
//! The middle line is the canonical JSON payload; the CRC32 (IEEE) of its
//! bytes, in lowercase hex, doubles as the model id. Real-valued model arrays
//! are base64 of little-endian `f64`, tree topology arrays base64 of
//! little-endian `u32`.

mod wire;

use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{Classifier, ClassifierError, Prediction};
use crate::evaluation::CvSummary;
use crate::features::{MfccConfig, ProviderDescriptor};

pub const FORMAT_VERSION: u32 = 1;
pub const MAGIC: &str = "AVDM";
pub const EXTENSION: &str = "avdm";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt artifact: {0}")]
    CorruptArtifact(String),
    #[error("unsupported artifact version {0} (this build reads version {FORMAT_VERSION})")]
    UnsupportedVersion(u64),
    #[error("inconsistent dimensions: {0}")]
    InconsistentDims(String),
}

/// A trained pipeline: how to featurize a chunk and how to classify it.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineArtifact {
    pub format_version: u32,
    pub provider: ProviderDescriptor,
    pub mfcc_config: Option<MfccConfig>,
    pub classifier: Classifier,
    pub train_seed: u64,
    pub created_at: DateTime<Utc>,
    pub metrics_snapshot: Option<CvSummary>,
}

/// Artifact metadata exposed without the model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactInfo {
    pub model_id: String,
    pub format_version: u32,
    pub provider_id: String,
    pub provider_dim: usize,
    pub classifier_kind: String,
    pub train_seed: u64,
    pub created_at: DateTime<Utc>,
    pub metrics_snapshot: Option<CvSummary>,
}

impl PipelineArtifact {
    /// Wraps a trained classifier. The timestamp is truncated to whole
    /// seconds so that a reloaded artifact compares equal.
    pub fn new(
        provider: ProviderDescriptor,
        mfcc_config: Option<MfccConfig>,
        classifier: Classifier,
        train_seed: u64,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            provider,
            mfcc_config,
            classifier,
            train_seed,
            created_at: Utc::now().trunc_subsecs(0),
            metrics_snapshot: None,
        }
    }

    pub fn classifier_kind(&self) -> &'static str {
        self.classifier.kind()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction, ClassifierError> {
        self.classifier.predict(x)
    }

    pub fn info(&self, model_id: &str) -> ArtifactInfo {
        ArtifactInfo {
            model_id: model_id.to_string(),
            format_version: self.format_version,
            provider_id: self.provider.provider_id.clone(),
            provider_dim: self.provider.dim,
            classifier_kind: self.classifier_kind().to_string(),
            train_seed: self.train_seed,
            created_at: self.created_at,
            metrics_snapshot: self.metrics_snapshot.clone(),
        }
    }

    /// Dimensional agreement between provider, feature config and model.
    pub fn check_dims(&self) -> Result<(), StoreError> {
        let dim = self.provider.dim;
        if self.classifier.dim() != dim {
            return Err(StoreError::InconsistentDims(format!(
                "{} model expects {} features but provider {} yields {dim}",
                self.classifier_kind(),
                self.classifier.dim(),
                self.provider.provider_id
            )));
        }
        if let Some(cfg) = &self.mfcc_config {
            if cfg.output_dim() != dim {
                return Err(StoreError::InconsistentDims(format!(
                    "mfcc config yields {} features, provider declares {dim}",
                    cfg.output_dim()
                )));
            }
        }
        match &self.classifier {
            Classifier::Svm(m) => {
                if let Some(sv) = m.support_vectors.iter().find(|sv| sv.len() != dim) {
                    return Err(StoreError::InconsistentDims(format!(
                        "support vector of dim {} under provider dim {dim}",
                        sv.len()
                    )));
                }
                if m.dual_coefs.len() != m.support_vectors.len() {
                    return Err(StoreError::InconsistentDims(format!(
                        "{} dual coefficients for {} support vectors",
                        m.dual_coefs.len(),
                        m.support_vectors.len()
                    )));
                }
            }
            Classifier::Rf(m) => {
                if m.trees.is_empty() {
                    return Err(StoreError::InconsistentDims("forest has no trees".into()));
                }
                for (t, tree) in m.trees.iter().enumerate() {
                    tree.validate(dim)
                        .map_err(|e| StoreError::InconsistentDims(format!("tree {t}: {e}")))?;
                }
            }
        }
        Ok(())
    }
}

/// CRC32 of `payload`, as the 8-digit lowercase hex model id.
pub fn checksum(payload: &[u8]) -> String {
    format!("{:08x}", crc32fast::hash(payload))
}

/// Serializes to the canonical envelope; returns the bytes and checksum.
pub fn encode_pipeline(artifact: &PipelineArtifact) -> (Vec<u8>, String) {
    let payload = serde_json::to_vec(&wire::ArtifactWire::from_artifact(artifact)).expect("artifact serializes");
    let sum = checksum(&payload);
    let mut out = Vec::with_capacity(payload.len() + 32);
    out.extend_from_slice(format!("{MAGIC} {}\n", artifact.format_version).as_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(format!("\ncrc32 {sum}\n").as_bytes());
    (out, sum)
}

/// Parses and validates an envelope: version, then checksum, then shapes.
pub fn decode_pipeline(bytes: &[u8]) -> Result<(PipelineArtifact, String), StoreError> {
    let corrupt = |m: &str| StoreError::CorruptArtifact(m.to_string());
    let text = std::str::from_utf8(bytes).map_err(|_| corrupt("not UTF-8"))?;
    let mut lines = text.splitn(3, '\n');
    let header = lines.next().unwrap_or_default();
    let payload = lines.next().ok_or_else(|| corrupt("missing payload line"))?;
    let trailer = lines.next().ok_or_else(|| corrupt("missing checksum line"))?;

    let version = header
        .strip_prefix(MAGIC)
        .and_then(|v| v.strip_prefix(' '))
        .ok_or_else(|| corrupt("missing AVDM header"))?;
    let version: u64 = version.trim().parse().map_err(|_| corrupt("unparseable version"))?;
    if version != FORMAT_VERSION as u64 {
        return Err(StoreError::UnsupportedVersion(version));
    }
    // A payload that still parses may declare its own version; honour it
    // before the checksum so an edited version reads as unsupported.
    if let Ok(v) = serde_json::from_str::<serde_json::Value>(payload) {
        if let Some(inner) = v.get("format_version").and_then(|x| x.as_u64()) {
            if inner != FORMAT_VERSION as u64 {
                return Err(StoreError::UnsupportedVersion(inner));
            }
        }
    }

    let stored = trailer
        .strip_prefix("crc32 ")
        .map(|s| s.trim_end_matches('\n'))
        .ok_or_else(|| corrupt("missing crc32 trailer"))?;
    let actual = checksum(payload.as_bytes());
    if stored != actual {
        return Err(StoreError::CorruptArtifact(format!(
            "checksum mismatch: stored {stored}, computed {actual}"
        )));
    }

    let wire: wire::ArtifactWire =
        serde_json::from_str(payload).map_err(|e| StoreError::CorruptArtifact(e.to_string()))?;
    let artifact = wire.into_artifact()?;
    artifact.check_dims()?;
    Ok((artifact, actual))
}

/// Writes atomically via a sibling temporary file; returns the checksum.
pub fn save_pipeline(artifact: &PipelineArtifact, path: &Path) -> Result<String, StoreError> {
    let (bytes, sum) = encode_pipeline(artifact);
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| StoreError::Io(e.error))?;
    Ok(sum)
}

pub fn load_pipeline(path: &Path) -> Result<PipelineArtifact, StoreError> {
    read_pipeline(path).map(|(a, _)| a)
}

/// Loads an artifact together with its model id.
pub fn read_pipeline(path: &Path) -> Result<(PipelineArtifact, String), StoreError> {
    decode_pipeline(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{ClassifierSpec, Dataset, RfConfig, SvmConfig};
    use chrono::TimeZone;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(dim: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..60).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y = x.iter().map(|r| u8::from(r[0] + 0.5 * r[1] > 0.0)).collect();
        Dataset::new(x, y).unwrap()
    }

    fn artifact(spec: ClassifierSpec, dim: usize) -> PipelineArtifact {
        let model = spec.train(&data(dim), 17).unwrap();
        let mut a = PipelineArtifact::new(ProviderDescriptor::mock(3, dim), None, model, 17);
        a.created_at = Utc.with_ymd_and_hms(2024, 5, 1, 12, 0, 0).unwrap();
        a
    }

    fn specs() -> [ClassifierSpec; 2] {
        [
            ClassifierSpec::Rf(RfConfig {
                n_trees: 15,
                ..Default::default()
            }),
            ClassifierSpec::Svm(SvmConfig::default()),
        ]
    }

    #[test]
    fn round_trip_predictions_are_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        for spec in specs() {
            let a = artifact(spec, 6);
            let path = dir.path().join("m.avdm");
            let sum = save_pipeline(&a, &path).unwrap();
            let (b, id) = read_pipeline(&path).unwrap();
            assert_eq!(sum, id);
            assert_eq!(a, b);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            for _ in 0..100 {
                let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let (p, q) = (a.predict(&x).unwrap(), b.predict(&x).unwrap());
                assert_eq!(p.label, q.label);
                assert_eq!(p.score.to_bits(), q.score.to_bits());
            }
        }
    }

    #[test]
    fn canonical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let a = artifact(specs()[0].clone(), 4);
        save_pipeline(&a, &dir.path().join("a.avdm")).unwrap();
        save_pipeline(&a.clone(), &dir.path().join("b.avdm")).unwrap();
        let x = fs::read(dir.path().join("a.avdm")).unwrap();
        assert_eq!(x, fs::read(dir.path().join("b.avdm")).unwrap());
        assert!(x.starts_with(b"AVDM 1\n{\"format_version\":1,"));
    }

    #[test]
    fn unwritable_path() {
        let a = artifact(specs()[0].clone(), 3);
        let err = save_pipeline(&a, Path::new("/nonexistent-dir/sub/m.avdm")).unwrap_err();
        assert!(matches!(err, StoreError::Io(_)));
    }

    #[test]
    fn flipped_byte_is_corrupt() {
        let (mut bytes, _) = encode_pipeline(&artifact(specs()[1].clone(), 3));
        let at = bytes.iter().position(|&b| b == b'b').unwrap() + 40;
        bytes[at] ^= 0x01;
        assert!(matches!(decode_pipeline(&bytes), Err(StoreError::CorruptArtifact(_))));
    }

    #[test]
    fn future_version_is_unsupported() {
        let (bytes, _) = encode_pipeline(&artifact(specs()[0].clone(), 3));
        let text = String::from_utf8(bytes).unwrap();
        let header = text.replacen("AVDM 1\n", "AVDM 999\n", 1);
        assert!(matches!(decode_pipeline(header.as_bytes()), Err(StoreError::UnsupportedVersion(999))));
        let inner = text.replacen("\"format_version\":1", "\"format_version\":999", 1);
        assert!(matches!(decode_pipeline(inner.as_bytes()), Err(StoreError::UnsupportedVersion(999))));
    }

    #[test]
    fn support_vectors_must_match_provider_dim() {
        let mut a = artifact(specs()[1].clone(), 512);
        a.provider = ProviderDescriptor::parse("wavlm", None).unwrap();
        let (bytes, _) = encode_pipeline(&a);
        assert!(matches!(decode_pipeline(&bytes), Err(StoreError::InconsistentDims(_))));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let (bytes, _) = encode_pipeline(&artifact(specs()[0].clone(), 3));
        assert!(matches!(decode_pipeline(&bytes[..bytes.len() / 2]), Err(StoreError::CorruptArtifact(_))));
        assert!(matches!(decode_pipeline(b"hello"), Err(StoreError::CorruptArtifact(_))));
    }
}
