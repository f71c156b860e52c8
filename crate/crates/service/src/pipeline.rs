//! Audio bytes to verdict: decode, resample, chunk, embed, classify,
//! aggregate.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use avd_core::audio_io::{self, AudioError, ChunkOptions, TARGET_SAMPLE_RATE_HZ};
use avd_core::features::{open_provider, EmbeddingProvider, FeatureError, ProviderOptions};
use avd_core::model_store::{self, ArtifactInfo, StoreError};
use avd_core::{ClassifierError, PipelineArtifact};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 50 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationRule {
    /// Violence iff at least one chunk is violent.
    #[default]
    Any,
    /// Violence iff strictly more than half the chunks are violent.
    Majority,
}

impl FromStr for AggregationRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "any" => Ok(Self::Any),
            "majority" => Ok(Self::Majority),
            other => Err(format!("unknown aggregation rule {other:?} (expected any or majority)")),
        }
    }
}

impl fmt::Display for AggregationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Any => "any",
            Self::Majority => "majority",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "violence")]
    Violence,
    #[serde(rename = "non-violence")]
    NonViolence,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Violence => "violence",
            Self::NonViolence => "non-violence",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkResult {
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub label: u8,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub verdict: Verdict,
    pub chunk_results: Vec<ChunkResult>,
    pub inference_ms: f64,
    pub model_id: String,
    pub provider_id: String,
    pub rule: AggregationRule,
}

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("{0}")]
    MalformedAudio(AudioError),
    #[error("payload of {size} bytes exceeds the {limit}-byte limit")]
    PayloadTooLarge { size: usize, limit: usize },
    #[error("audio is {duration_s:.3} s long; at least {min_s} s is needed for one chunk")]
    AudioTooShort { duration_s: f64, min_s: f64 },
    #[error("no chunk labels to aggregate")]
    EmptyChunks,
    #[error("model unavailable: {0}")]
    ModelUnavailable(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("feature extraction failed: {0}")]
    Feature(#[from] FeatureError),
    #[error("classification failed: {0}")]
    Classifier(#[from] ClassifierError),
}

impl PredictError {
    /// Stable identifier carried in error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Self::MalformedAudio(_) => "MalformedAudio",
            Self::PayloadTooLarge { .. } => "PayloadTooLarge",
            Self::AudioTooShort { .. } => "AudioTooShort",
            Self::EmptyChunks => "EmptyChunks",
            Self::ModelUnavailable(_) => "ModelUnavailable",
            Self::BadRequest(_) => "BadRequest",
            Self::Feature(FeatureError::ProviderUnavailable(_)) => "ProviderUnavailable",
            Self::Feature(_) => "FeatureFailure",
            Self::Classifier(_) => "ClassifierFailure",
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            Self::MalformedAudio(_) | Self::BadRequest(_) => 400,
            Self::PayloadTooLarge { .. } => 413,
            Self::AudioTooShort { .. } | Self::EmptyChunks => 422,
            Self::ModelUnavailable(_) | Self::Feature(FeatureError::ProviderUnavailable(_)) => 503,
            Self::Feature(_) | Self::Classifier(_) => 500,
        }
    }
}

impl From<AudioError> for PredictError {
    fn from(e: AudioError) -> Self {
        match e {
            AudioError::TooLarge { size, limit } => Self::PayloadTooLarge { size, limit },
            other => Self::MalformedAudio(other),
        }
    }
}

pub fn aggregate_verdict(labels: &[u8], rule: AggregationRule) -> Result<Verdict, PredictError> {
    if labels.is_empty() {
        return Err(PredictError::EmptyChunks);
    }
    let violent = labels.iter().filter(|&&l| l == 1).count();
    let flagged = match rule {
        AggregationRule::Any => violent >= 1,
        AggregationRule::Majority => 2 * violent > labels.len(),
    };
    Ok(if flagged { Verdict::Violence } else { Verdict::NonViolence })
}

/// An artifact paired with a live provider, ready to serve predictions.
pub struct LoadedModel {
    pub artifact: PipelineArtifact,
    pub model_id: String,
    provider: Box<dyn EmbeddingProvider>,
}

impl fmt::Debug for LoadedModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LoadedModel")
            .field("model_id", &self.model_id)
            .field("provider", self.provider.descriptor())
            .finish()
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot open provider: {0}")]
    Provider(#[from] FeatureError),
}

impl LoadedModel {
    pub fn load(path: &Path, opts: &ProviderOptions) -> Result<Self, LoadError> {
        let (artifact, model_id) = model_store::read_pipeline(path)?;
        Self::new(artifact, model_id, opts)
    }

    pub fn new(artifact: PipelineArtifact, model_id: String, opts: &ProviderOptions) -> Result<Self, LoadError> {
        let mut opts = opts.clone();
        if opts.mfcc.is_none() {
            opts.mfcc = artifact.mfcc_config.clone();
        }
        let provider = open_provider(&artifact.provider, &opts)?;
        Ok(Self {
            artifact,
            model_id,
            provider,
        })
    }

    pub fn provider(&self) -> &dyn EmbeddingProvider {
        self.provider.as_ref()
    }

    pub fn info(&self) -> ArtifactInfo {
        self.artifact.info(&self.model_id)
    }

    /// Runs the full pipeline on WAV bytes. `inference_ms` covers everything
    /// after decoding.
    pub fn predict_wav(
        &self,
        bytes: &[u8],
        rule: AggregationRule,
        max_bytes: usize,
    ) -> Result<PredictResponse, PredictError> {
        let decoded = audio_io::decode_wav_with_limit(bytes, max_bytes)?;
        let started = Instant::now();
        let buf = audio_io::resample(&decoded, TARGET_SAMPLE_RATE_HZ)?;
        let opts = ChunkOptions::default();
        let chunks = audio_io::chunk_audio(&buf, "upload", &opts)?;
        if chunks.is_empty() {
            return Err(PredictError::AudioTooShort {
                duration_s: buf.duration_s(),
                min_s: opts.min_audio_seconds(),
            });
        }

        let classify = |chunk: &audio_io::Chunk| -> Result<ChunkResult, PredictError> {
            let v = self.provider.embed(chunk)?;
            let p = self.artifact.predict(&v.to_f64())?;
            Ok(ChunkResult {
                index: chunk.index,
                start_s: chunk.start_s,
                end_s: chunk.end_s(),
                label: p.label,
                score: p.score,
            })
        };
        let results: Vec<Result<ChunkResult, PredictError>> = if self.provider.descriptor().single_consumer {
            chunks.iter().map(classify).collect()
        } else {
            chunks.par_iter().map(classify).collect()
        };
        let chunk_results = results.into_iter().collect::<Result<Vec<_>, _>>()?;

        let labels: Vec<u8> = chunk_results.iter().map(|c| c.label).collect();
        let verdict = aggregate_verdict(&labels, rule)?;
        Ok(PredictResponse {
            verdict,
            chunk_results,
            inference_ms: started.elapsed().as_secs_f64() * 1000.0,
            model_id: self.model_id.clone(),
            provider_id: self.artifact.provider.provider_id.clone(),
            rule,
        })
    }
}
