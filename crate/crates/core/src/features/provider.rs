use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use super::{
    checked_vector, read_embedding_set, EmbeddingProvider, Endpoint, ExternalProvider, FeatureError, FeatureVector,
    MfccConfig, MfccExtractor, ProviderDescriptor, ProviderKind,
};
use crate::audio_io::{Chunk, TARGET_SAMPLE_RATE_HZ};
use crate::features::pool_frames;
use crate::rng;

/// MFCC frames pooled into one vector per chunk.
#[derive(Debug, Clone)]
pub struct MfccProvider {
    descriptor: ProviderDescriptor,
    extractor: MfccExtractor,
}

impl MfccProvider {
    pub fn new(cfg: &MfccConfig) -> Result<Self, FeatureError> {
        Ok(Self {
            descriptor: ProviderDescriptor::mfcc(cfg),
            extractor: MfccExtractor::new(cfg, TARGET_SAMPLE_RATE_HZ)?,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        self.extractor.config()
    }
}

impl EmbeddingProvider for MfccProvider {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn embed(&self, chunk: &Chunk) -> Result<FeatureVector, FeatureError> {
        if chunk.sample_rate_hz != self.extractor.sample_rate_hz() {
            return Err(FeatureError::SampleRateMismatch {
                expected: self.extractor.sample_rate_hz(),
                got: chunk.sample_rate_hz,
            });
        }
        let frames = self.extractor.frames(&chunk.samples)?;
        let pooled = pool_frames(&frames, self.extractor.config().pooling)?;
        checked_vector(&self.descriptor, chunk.id(), pooled.into_iter().map(|v| v as f32).collect())
    }
}

const MOCK_STATS: usize = 6;

/// Deterministic stand-in for a pre-trained encoder.
///
/// A handful of loudness and spectral-tilt statistics are projected through
/// a seeded random matrix and squashed with `tanh`, so louder or noisier
/// chunks land in different regions of the output space.
#[derive(Debug, Clone)]
pub struct MockProvider {
    descriptor: ProviderDescriptor,
    projection: Vec<[f64; MOCK_STATS]>,
}

impl MockProvider {
    pub fn new(seed: u64, dim: usize) -> Self {
        let mut rng = rng::stream(seed, 0);
        let projection = (0..dim)
            .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
            .collect();
        Self {
            descriptor: ProviderDescriptor::mock(seed, dim),
            projection,
        }
    }

    fn stats(samples: &[f64]) -> [f64; MOCK_STATS] {
        let n = samples.len().max(1) as f64;
        let rms = (samples.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        let diff_rms = (samples.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / n).sqrt();
        let crossings = samples.windows(2).filter(|w| (w[0] < 0.0) != (w[1] < 0.0)).count() as f64 / n;
        let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let segment_logs: Vec<f64> = samples
            .chunks((samples.len() / 10).max(1))
            .map(|s| ((s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt() + 1e-4).ln())
            .collect();
        let mean_log = segment_logs.iter().sum::<f64>() / segment_logs.len() as f64;
        let spread = (segment_logs.iter().map(|v| (v - mean_log).powi(2)).sum::<f64>() / segment_logs.len() as f64).sqrt();
        [
            (rms + 1e-4).ln() / 5.0,
            4.0 * crossings - 1.0,
            diff_rms / (rms + 1e-4) - 1.0,
            2.0 * peak - 1.0,
            spread,
            1.0,
        ]
    }
}

impl EmbeddingProvider for MockProvider {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn embed(&self, chunk: &Chunk) -> Result<FeatureVector, FeatureError> {
        let b = Self::stats(&chunk.samples);
        let values = self
            .projection
            .iter()
            .map(|w| w.iter().zip(&b).map(|(w, b)| w * b).sum::<f64>().tanh() as f32)
            .collect();
        checked_vector(&self.descriptor, chunk.id(), values)
    }
}

/// Serves vectors previously written to an embedding file.
#[derive(Debug, Clone)]
pub struct PrecomputedProvider {
    descriptor: ProviderDescriptor,
    vectors: BTreeMap<String, FeatureVector>,
}

impl PrecomputedProvider {
    pub fn open(path: &Path) -> Result<Self, FeatureError> {
        let set = read_embedding_set(path)?;
        let descriptor = ProviderDescriptor::precomputed(&path.display().to_string(), set.dim);
        let vectors = set.into_map()?;
        Ok(Self { descriptor, vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl EmbeddingProvider for PrecomputedProvider {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn embed(&self, chunk: &Chunk) -> Result<FeatureVector, FeatureError> {
        let id = chunk.id();
        let stored = self.vectors.get(&id).ok_or(FeatureError::MissingEmbedding(id))?;
        checked_vector(&self.descriptor, stored.chunk_id.clone(), stored.values.clone())
    }
}

/// Runtime knobs needed to instantiate a provider from its descriptor.
#[derive(Debug, Clone, Default)]
pub struct ProviderOptions {
    /// Overrides the MFCC settings implied by the descriptor's dimension.
    pub mfcc: Option<MfccConfig>,
    /// Where external models are reached.
    pub endpoint: Option<Endpoint>,
}

/// Instantiates the provider a descriptor names.
pub fn open_provider(
    descriptor: &ProviderDescriptor,
    opts: &ProviderOptions,
) -> Result<Box<dyn EmbeddingProvider>, FeatureError> {
    let provider: Box<dyn EmbeddingProvider> = match descriptor.kind {
        ProviderKind::Internal if descriptor.provider_id == "mfcc" => {
            let cfg = match &opts.mfcc {
                Some(c) => c.clone(),
                None => MfccConfig::for_dim(descriptor.dim).ok_or(FeatureError::DimMismatch {
                    provider: "mfcc".into(),
                    expected: MfccConfig::default().output_dim(),
                    got: descriptor.dim,
                })?,
            };
            Box::new(MfccProvider::new(&cfg)?)
        }
        ProviderKind::Internal => return Err(FeatureError::UnknownProvider(descriptor.provider_id.clone())),
        ProviderKind::Mock => {
            let seed = descriptor
                .provider_id
                .strip_prefix("mock:")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| FeatureError::UnknownProvider(descriptor.provider_id.clone()))?;
            Box::new(MockProvider::new(seed, descriptor.dim))
        }
        ProviderKind::Precomputed => {
            let path = descriptor
                .provider_id
                .strip_prefix("precomputed:")
                .ok_or_else(|| FeatureError::UnknownProvider(descriptor.provider_id.clone()))?;
            Box::new(PrecomputedProvider::open(Path::new(path))?)
        }
        ProviderKind::External => {
            let endpoint = opts.endpoint.clone().ok_or_else(|| {
                FeatureError::ProviderUnavailable(format!("no endpoint configured for {}", descriptor.provider_id))
            })?;
            Box::new(ExternalProvider::connect(descriptor.clone(), endpoint)?)
        }
    };
    if provider.descriptor().dim != descriptor.dim {
        return Err(FeatureError::DimMismatch {
            provider: descriptor.provider_id.clone(),
            expected: descriptor.dim,
            got: provider.descriptor().dim,
        });
    }
    Ok(provider)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::write_embedding_file;

    fn chunk(samples: Vec<f64>, index: usize) -> Chunk {
        Chunk {
            samples,
            sample_rate_hz: 16_000,
            source_id: "s".into(),
            index,
            start_s: index as f64 * 2.5,
            padded: false,
        }
    }

    fn tone(amp: f64) -> Vec<f64> {
        (0..40_000).map(|i| amp * (i as f64 * 0.05).sin()).collect()
    }

    #[test]
    fn mock_is_deterministic_and_sized() {
        let p = MockProvider::new(42, 512);
        let c = chunk(tone(0.3), 0);
        let a = p.embed(&c).unwrap();
        let b = MockProvider::new(42, 512).embed(&c).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.dim(), 512);
        assert_eq!(a.chunk_id, "s#0");
        assert_ne!(MockProvider::new(43, 512).embed(&c).unwrap().values, a.values);
        assert_ne!(p.embed(&chunk(tone(0.01), 0)).unwrap().values, a.values);
    }

    #[test]
    fn mfcc_provider_dimensions() {
        let p = MfccProvider::new(&MfccConfig::default()).unwrap();
        let v = p.embed(&chunk(tone(0.5), 2)).unwrap();
        assert_eq!(v.dim(), 26);
        assert_eq!(v.provider_id, "mfcc");
        let mut wrong_rate = chunk(tone(0.5), 0);
        wrong_rate.sample_rate_hz = 8_000;
        assert!(matches!(p.embed(&wrong_rate), Err(FeatureError::SampleRateMismatch { .. })));
    }

    #[test]
    fn precomputed_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.avde");
        let c = chunk(tone(0.2), 1);
        let v = MockProvider::new(1, 8).embed(&c).unwrap();
        write_embedding_file(&[v.clone()], &path).unwrap();
        let p = PrecomputedProvider::open(&path).unwrap();
        assert_eq!(p.embed(&c).unwrap().values, v.values);
        assert!(matches!(p.embed(&chunk(tone(0.2), 9)), Err(FeatureError::MissingEmbedding(id)) if id == "s#9"));
    }

    #[test]
    fn open_by_descriptor() {
        let mfcc = open_provider(&ProviderDescriptor::parse("mfcc", Some(13)).unwrap(), &ProviderOptions::default()).unwrap();
        assert_eq!(mfcc.descriptor().dim, 13);
        let mock = open_provider(&ProviderDescriptor::mock(5, 16), &ProviderOptions::default()).unwrap();
        assert_eq!(mock.embed(&chunk(tone(0.1), 0)).unwrap().dim(), 16);
        assert!(matches!(
            open_provider(&ProviderDescriptor::xvector(), &ProviderOptions::default()),
            Err(FeatureError::ProviderUnavailable(_))
        ));
    }
}
