//! Audio ingestion: WAV decoding, sample-rate conversion and fixed-length
//! chunking.
//!
//! Everything here is a pure function over immutable inputs.

mod chunk;
mod resample;
mod wav;

pub use chunk::{chunk_audio, chunk_id, Chunk, ChunkOptions, DEFAULT_CHUNK_SECONDS, DEFAULT_MIN_KEEP_FRACTION};
pub use resample::{resample, Resampler, KAISER_BETA, TAPS_PER_PHASE};
pub use wav::{decode_wav, decode_wav_with_limit, encode_wav, encode_wav_channels, SampleFormat, DEFAULT_MAX_WAV_BYTES};

use thiserror::Error;

/// Analysis sample rate expected by every feature provider.
pub const TARGET_SAMPLE_RATE_HZ: u32 = 16_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AudioError {
    #[error("malformed container: {0}")]
    MalformedContainer(String),
    #[error("unsupported codec: {0}")]
    UnsupportedCodec(String),
    #[error("audio contains no frames")]
    EmptyAudio,
    #[error("file of {size} bytes exceeds the {limit} byte limit")]
    TooLarge { size: usize, limit: usize },
    #[error("invalid sample rate {0} Hz")]
    InvalidRate(i64),
    #[error("sample {index} is {value}, outside [-1, 1] or non-finite")]
    InvalidSample { index: usize, value: f64 },
    #[error("invalid chunking options: {0}")]
    InvalidChunkOptions(String),
}

/// Decoded single-channel audio with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self, AudioError> {
        if sample_rate_hz == 0 {
            return Err(AudioError::InvalidRate(0));
        }
        if let Some((index, &value)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(AudioError::InvalidSample { index, value });
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    /// Builds a buffer after clamping every sample into `[-1, 1]`. Non-finite
    /// samples become silence.
    pub fn from_clamped(samples: impl IntoIterator<Item = f64>, sample_rate_hz: u32) -> Result<Self, AudioError> {
        let samples = samples
            .into_iter()
            .map(|s| if s.is_finite() { s.clamp(-1.0, 1.0) } else { 0.0 })
            .collect();
        Self::new(samples, sample_rate_hz)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_samples() {
        assert!(matches!(
            AudioBuffer::new(vec![0.0, 1.5], 16_000),
            Err(AudioError::InvalidSample { index: 1, .. })
        ));
        assert!(matches!(
            AudioBuffer::new(vec![f64::NAN], 16_000),
            Err(AudioError::InvalidSample { index: 0, .. })
        ));
        assert_eq!(AudioBuffer::new(vec![0.0], 0), Err(AudioError::InvalidRate(0)));
    }

    #[test]
    fn clamped_constructor_saturates() {
        let buf = AudioBuffer::from_clamped([2.0, -3.0, f64::INFINITY, 0.25], 8_000).unwrap();
        assert_eq!(buf.samples(), &[1.0, -1.0, 0.0, 0.25]);
        assert_eq!(buf.duration_s(), 4.0 / 8_000.0);
    }
}
