use serde::{Deserialize, Serialize};

use super::{AudioBuffer, AudioError};

pub const DEFAULT_CHUNK_SECONDS: f64 = 2.5;
pub const DEFAULT_MIN_KEEP_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkOptions {
    pub chunk_seconds: f64,
    /// A trailing remainder is zero-padded and kept iff it spans at least
    /// this fraction of a full chunk.
    pub min_keep_fraction: f64,
}

impl Default for ChunkOptions {
    fn default() -> Self {
        Self {
            chunk_seconds: DEFAULT_CHUNK_SECONDS,
            min_keep_fraction: DEFAULT_MIN_KEEP_FRACTION,
        }
    }
}

impl ChunkOptions {
    pub fn validate(&self) -> Result<(), AudioError> {
        if !(self.chunk_seconds.is_finite() && self.chunk_seconds > 0.0) {
            return Err(AudioError::InvalidChunkOptions(format!(
                "chunk_seconds must be positive, got {}",
                self.chunk_seconds
            )));
        }
        if !(self.min_keep_fraction > 0.0 && self.min_keep_fraction <= 1.0) {
            return Err(AudioError::InvalidChunkOptions(format!(
                "min_keep_fraction must lie in (0, 1], got {}",
                self.min_keep_fraction
            )));
        }
        Ok(())
    }

    /// Samples per chunk at `sample_rate_hz`.
    pub fn chunk_len(&self, sample_rate_hz: u32) -> usize {
        (self.chunk_seconds * sample_rate_hz as f64).round() as usize
    }

    /// Shortest audio, in seconds, that still yields one chunk.
    pub fn min_audio_seconds(&self) -> f64 {
        self.chunk_seconds * self.min_keep_fraction
    }
}

/// Fixed-length analysis segment cut from a source recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub source_id: String,
    pub index: usize,
    pub start_s: f64,
    pub padded: bool,
}

impl Chunk {
    /// `source_id#index`.
    pub fn id(&self) -> String {
        chunk_id(&self.source_id, self.index)
    }

    pub fn end_s(&self) -> f64 {
        self.start_s + self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

pub fn chunk_id(source_id: &str, index: usize) -> String {
    format!("{source_id}#{index}")
}

/// Splits `buf` into consecutive non-overlapping chunks.
///
/// Short inputs produce an empty vector; callers decide whether that is an
/// error.
pub fn chunk_audio(buf: &AudioBuffer, source_id: &str, opts: &ChunkOptions) -> Result<Vec<Chunk>, AudioError> {
    opts.validate()?;
    let len = opts.chunk_len(buf.sample_rate_hz());
    if len == 0 {
        return Err(AudioError::InvalidChunkOptions("chunk shorter than one sample".into()));
    }
    let samples = buf.samples();
    let mut chunks: Vec<Chunk> = samples
        .chunks(len)
        .enumerate()
        .filter_map(|(index, window)| {
            let padded = window.len() < len;
            if padded && (window.len() as f64) < opts.min_keep_fraction * len as f64 {
                return None;
            }
            let mut s = window.to_vec();
            s.resize(len, 0.0);
            Some(Chunk {
                samples: s,
                sample_rate_hz: buf.sample_rate_hz(),
                source_id: source_id.to_owned(),
                index,
                start_s: index as f64 * opts.chunk_seconds,
                padded,
            })
        })
        .collect();
    chunks.shrink_to_fit();
    Ok(chunks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn silence(seconds: f64, rate: u32) -> AudioBuffer {
        AudioBuffer::new(vec![0.0; (seconds * rate as f64).round() as usize], rate).unwrap()
    }

    fn count(seconds: f64) -> Vec<Chunk> {
        chunk_audio(&silence(seconds, 16_000), "clip", &ChunkOptions::default()).unwrap()
    }

    #[test]
    fn ten_seconds_gives_four_full_chunks() {
        let c = count(10.0);
        assert_eq!(c.len(), 4);
        assert!(c.iter().all(|c| c.samples.len() == 40_000 && !c.padded));
        assert_eq!(c[3].start_s, 7.5);
        assert_eq!(c[2].id(), "clip#2");
    }

    #[test]
    fn short_remainder_is_dropped() {
        let c = count(6.0);
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|c| !c.padded));
    }

    #[test]
    fn long_remainder_is_padded() {
        let mut samples = vec![0.5; 104_000];
        samples[0] = 0.0;
        let buf = AudioBuffer::new(samples, 16_000).unwrap();
        let c = chunk_audio(&buf, "x", &ChunkOptions::default()).unwrap();
        assert_eq!(c.len(), 3);
        assert!(c[2].padded);
        assert_eq!(c[2].samples.len(), 40_000);
        assert_eq!(c[2].samples[23_999], 0.5);
        assert!(c[2].samples[24_000..].iter().all(|&s| s == 0.0));
    }

    #[test]
    fn too_short_yields_nothing() {
        assert!(count(1.0).is_empty());
        assert_eq!(count(1.25).len(), 1);
    }

    #[test]
    fn rejects_bad_options() {
        let buf = silence(1.0, 16_000);
        for opts in [
            ChunkOptions { chunk_seconds: 0.0, ..Default::default() },
            ChunkOptions { min_keep_fraction: 0.0, ..Default::default() },
            ChunkOptions { min_keep_fraction: 1.5, ..Default::default() },
        ] {
            assert!(matches!(chunk_audio(&buf, "x", &opts), Err(AudioError::InvalidChunkOptions(_))));
        }
    }

    proptest! {
        #[test]
        fn coverage_and_drop_bounds(
            n in 1usize..200_000,
            rate in prop::sample::select(vec![8_000u32, 16_000, 22_050]),
            frac in 0.05f64..=1.0,
        ) {
            let buf = AudioBuffer::new(vec![0.1; n], rate).unwrap();
            let opts = ChunkOptions { chunk_seconds: 2.5, min_keep_fraction: frac };
            let chunks = chunk_audio(&buf, "p", &opts).unwrap();
            let len = opts.chunk_len(rate);
            let full = chunks.iter().filter(|c| !c.padded).count();
            let remainder = n % len;
            let covered = full * len + if chunks.iter().any(|c| c.padded) { remainder } else { 0 };
            prop_assert!(covered <= n);
            let dropped = n - covered;
            prop_assert!((dropped as f64) < frac * len as f64);
            for (i, c) in chunks.iter().enumerate() {
                prop_assert_eq!(c.index, i);
                prop_assert_eq!(c.samples.len(), len);
                prop_assert!((c.start_s - i as f64 * 2.5).abs() < 1e-12);
            }
            prop_assert!(chunks.iter().filter(|c| c.padded).count() <= 1);
        }
    }
}
