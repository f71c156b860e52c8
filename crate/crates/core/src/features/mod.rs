//! Per-chunk feature vectors: the MFCC baseline and the embedding-provider
//! abstraction behind which pre-trained speaker and SSL models sit.

mod embedding_file;
mod external;
mod mfcc;
mod provider;

pub use embedding_file::{
    decode_embedding_file, encode_embedding_file, read_embedding_file, read_embedding_set, write_embedding_file,
    EmbeddingSet, EMBEDDING_FILE_VERSION, EMBEDDING_MAGIC,
};
pub use external::{serve_stdio, EmbedReply, EmbedRequest, Endpoint, ExternalProvider};
pub use mfcc::{compute_mfcc_frames, hz_to_mel, mel_filterbank, mel_to_hz, pool_frames, MfccConfig, MfccExtractor, Pooling};
pub use provider::{open_provider, MfccProvider, MockProvider, PrecomputedProvider, ProviderOptions};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::Chunk;

pub const XVECTOR_DIM: usize = 512;
pub const SSL_DIM: usize = 768;
pub const DEFAULT_MOCK_DIM: usize = 512;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid MFCC configuration: {0}")]
    InvalidConfig(String),
    #[error("chunk has {len} samples, fewer than one {frame}-sample frame")]
    ChunkTooShort { len: usize, frame: usize },
    #[error("cannot pool zero frames")]
    EmptyFrames,
    #[error("chunk sampled at {got} Hz, provider expects {expected} Hz")]
    SampleRateMismatch { expected: u32, got: u32 },
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("provider {provider} returned {got} values, expected {expected}")]
    DimMismatch { provider: String, expected: usize, got: usize },
    #[error("no embedding for chunk {0}")]
    MissingEmbedding(String),
    #[error("non-finite value in embedding for chunk {0}")]
    NonFinite(String),
    #[error("unknown provider id {0:?}")]
    UnknownProvider(String),
    #[error("corrupt embedding file: {0}")]
    CorruptFile(String),
    #[error("duplicate chunk id {0} in embedding file")]
    DuplicateChunkId(String),
    #[error("records disagree on {0}")]
    InconsistentRecords(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fixed-dimension vector describing one chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f32>,
    pub provider_id: String,
    pub chunk_id: String,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Internal,
    Precomputed,
    External,
    Mock,
}

/// Identity and output shape of a feature source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderDescriptor {
    pub provider_id: String,
    pub dim: usize,
    pub kind: ProviderKind,
    /// Calls must be serialized by the caller.
    #[serde(default)]
    pub single_consumer: bool,
}

impl ProviderDescriptor {
    pub fn mfcc(cfg: &MfccConfig) -> Self {
        Self {
            provider_id: "mfcc".into(),
            dim: cfg.output_dim(),
            kind: ProviderKind::Internal,
            single_consumer: false,
        }
    }

    pub fn xvector() -> Self {
        Self::external("xvector", XVECTOR_DIM)
    }

    pub fn wavlm() -> Self {
        Self::external("wavlm", SSL_DIM)
    }

    pub fn unispeech_sat() -> Self {
        Self::external("unispeech_sat", SSL_DIM)
    }

    /// ECAPA's width depends on the checkpoint, so it is always supplied.
    pub fn ecapa(dim: usize) -> Self {
        Self::external("ecapa", dim)
    }

    pub fn mock(seed: u64, dim: usize) -> Self {
        Self {
            provider_id: format!("mock:{seed}"),
            dim,
            kind: ProviderKind::Mock,
            single_consumer: false,
        }
    }

    pub fn precomputed(path: &str, dim: usize) -> Self {
        Self {
            provider_id: format!("precomputed:{path}"),
            dim,
            kind: ProviderKind::Precomputed,
            single_consumer: false,
        }
    }

    fn external(id: &str, dim: usize) -> Self {
        Self {
            provider_id: id.into(),
            dim,
            kind: ProviderKind::External,
            single_consumer: false,
        }
    }

    /// Resolves a provider id string. `dim` is required where the id does
    /// not fix it (ecapa, precomputed) and must agree where it does.
    pub fn parse(id: &str, dim: Option<usize>) -> Result<Self, FeatureError> {
        let fixed = |d: Self| match dim {
            Some(given) if given != d.dim => Err(FeatureError::DimMismatch {
                provider: d.provider_id.clone(),
                expected: d.dim,
                got: given,
            }),
            _ => Ok(d),
        };
        let required = || dim.filter(|&d| d > 0).ok_or_else(|| FeatureError::UnknownProvider(format!("{id} (dimension required)")));
        match id {
            "mfcc" => {
                let cfg = match dim {
                    None => MfccConfig::default(),
                    Some(d) => MfccConfig::for_dim(d).ok_or(FeatureError::DimMismatch {
                        provider: "mfcc".into(),
                        expected: MfccConfig::default().output_dim(),
                        got: d,
                    })?,
                };
                Ok(Self::mfcc(&cfg))
            }
            "xvector" => fixed(Self::xvector()),
            "wavlm" => fixed(Self::wavlm()),
            "unispeech_sat" => fixed(Self::unispeech_sat()),
            "ecapa" => Ok(Self::ecapa(required()?)),
            _ => {
                if let Some(seed) = id.strip_prefix("mock:") {
                    let seed = seed.parse().map_err(|_| FeatureError::UnknownProvider(id.into()))?;
                    Ok(Self::mock(seed, dim.unwrap_or(DEFAULT_MOCK_DIM)))
                } else if let Some(path) = id.strip_prefix("precomputed:") {
                    Ok(Self::precomputed(path, required()?))
                } else {
                    Err(FeatureError::UnknownProvider(id.into()))
                }
            }
        }
    }
}

/// A source of per-chunk feature vectors.
///
/// Implementations are shareable across threads; ones that cannot serve
/// concurrent calls mark their descriptor `single_consumer` and serialize
/// internally.
pub trait EmbeddingProvider: Send + Sync {
    fn descriptor(&self) -> &ProviderDescriptor;

    fn embed(&self, chunk: &Chunk) -> Result<FeatureVector, FeatureError>;
}

/// Wraps raw provider output after checking length and finiteness.
pub(crate) fn checked_vector(
    descriptor: &ProviderDescriptor,
    chunk_id: String,
    values: Vec<f32>,
) -> Result<FeatureVector, FeatureError> {
    if values.len() != descriptor.dim {
        return Err(FeatureError::DimMismatch {
            provider: descriptor.provider_id.clone(),
            expected: descriptor.dim,
            got: values.len(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(FeatureError::NonFinite(chunk_id));
    }
    Ok(FeatureVector {
        values,
        provider_id: descriptor.provider_id.clone(),
        chunk_id,
    })
}
