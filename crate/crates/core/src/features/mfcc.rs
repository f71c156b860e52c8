//! MFCC baseline: pre-emphasis, Hamming-windowed power spectrum, triangular
//! mel filterbank, natural log and orthonormal DCT-II.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::audio_io::Chunk;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfccConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub fmin_hz: f64,
    /// `None` means the Nyquist frequency of the input.
    pub fmax_hz: Option<f64>,
    pub pre_emphasis: f64,
    pub log_floor: f64,
    pub pooling: Pooling,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            frame_ms: 25.0,
            hop_ms: 10.0,
            n_fft: 512,
            n_mels: 26,
            n_mfcc: 13,
            fmin_hz: 0.0,
            fmax_hz: None,
            pre_emphasis: 0.97,
            log_floor: 1e-10,
            pooling: Pooling::MeanStd,
        }
    }
}

impl MfccConfig {
    /// Default configuration whose pooled output has `dim` values, if any.
    pub fn for_dim(dim: usize) -> Option<Self> {
        let base = Self::default();
        let pooling = if dim == base.n_mfcc {
            Pooling::Mean
        } else if dim == 2 * base.n_mfcc {
            Pooling::MeanStd
        } else {
            return None;
        };
        Some(Self { pooling, ..base })
    }

    pub fn output_dim(&self) -> usize {
        match self.pooling {
            Pooling::Mean => self.n_mfcc,
            Pooling::MeanStd => 2 * self.n_mfcc,
        }
    }

    pub fn frame_len(&self, sample_rate_hz: u32) -> usize {
        (self.frame_ms * sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn hop_len(&self, sample_rate_hz: u32) -> usize {
        (self.hop_ms * sample_rate_hz as f64 / 1000.0).round() as usize
    }

    fn fmax(&self, sample_rate_hz: u32) -> f64 {
        self.fmax_hz.unwrap_or(sample_rate_hz as f64 / 2.0)
    }

    pub fn validate(&self, sample_rate_hz: u32) -> Result<(), FeatureError> {
        let bad = |m: String| Err(FeatureError::InvalidConfig(m));
        if sample_rate_hz == 0 {
            return bad("sample rate must be positive".into());
        }
        if self.n_mfcc == 0 || self.n_mels == 0 {
            return bad("n_mfcc and n_mels must be positive".into());
        }
        if self.n_mfcc > self.n_mels {
            return bad(format!("n_mfcc {} exceeds n_mels {}", self.n_mfcc, self.n_mels));
        }
        let frame = self.frame_len(sample_rate_hz);
        if frame == 0 || self.hop_len(sample_rate_hz) == 0 {
            return bad("frame and hop must span at least one sample".into());
        }
        if self.n_fft < frame {
            return bad(format!("n_fft {} shorter than the {frame}-sample frame", self.n_fft));
        }
        let nyquist = sample_rate_hz as f64 / 2.0;
        let fmax = self.fmax(sample_rate_hz);
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < fmax && fmax <= nyquist) {
            return bad(format!("need 0 <= fmin ({}) < fmax ({fmax}) <= {nyquist}", self.fmin_hz));
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive".into());
        }
        Ok(())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters, one row per mel band, over `n_fft / 2 + 1` bins.
///
/// Band edges are equally spaced in mel and snapped to FFT bins, so every
/// filter peaks at exactly 1.0 on its centre bin.
pub fn mel_filterbank(cfg: &MfccConfig, sample_rate_hz: u32) -> Result<Vec<Vec<f64>>, FeatureError> {
    cfg.validate(sample_rate_hz)?;
    let n_bins = cfg.n_fft / 2 + 1;
    let lo = hz_to_mel(cfg.fmin_hz);
    let hi = hz_to_mel(cfg.fmax(sample_rate_hz));
    let edges: Vec<usize> = (0..cfg.n_mels + 2)
        .map(|i| {
            let hz = mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64);
            (((cfg.n_fft + 1) as f64 * hz / sample_rate_hz as f64).floor() as usize).min(n_bins - 1)
        })
        .collect();

    let mut bank = Vec::with_capacity(cfg.n_mels);
    for m in 0..cfg.n_mels {
        let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
        if !(left < centre && centre < right) {
            return Err(FeatureError::InvalidConfig(format!(
                "mel band {m} collapses onto FFT bins {left}/{centre}/{right}; use fewer mels or a larger n_fft"
            )));
        }
        let mut row = vec![0.0; n_bins];
        for (k, w) in row.iter_mut().enumerate().take(right + 1).skip(left) {
            *w = if k <= centre {
                (k - left) as f64 / (centre - left) as f64
            } else {
                (right - k) as f64 / (right - centre) as f64
            };
        }
        bank.push(row);
    }
    Ok(bank)
}

/// Orthonormal DCT-II basis restricted to the first `n_out` rows.
fn dct_matrix(n_in: usize, n_out: usize) -> Vec<Vec<f64>> {
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / n_in as f64).sqrt()
            } else {
                (2.0 / n_in as f64).sqrt()
            };
            (0..n_in)
                .map(|n| scale * (PI * k as f64 * (2 * n + 1) as f64 / (2 * n_in) as f64).cos())
                .collect()
        })
        .collect()
}

/// MFCC front end prepared for one sample rate.
#[derive(Clone)]
pub struct MfccExtractor {
    cfg: MfccConfig,
    sample_rate_hz: u32,
    frame_len: usize,
    hop_len: usize,
    window: Vec<f64>,
    filterbank: Vec<Vec<f64>>,
    dct: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfccExtractor")
            .field("cfg", &self.cfg)
            .field("sample_rate_hz", &self.sample_rate_hz)
            .finish_non_exhaustive()
    }
}

impl MfccExtractor {
    pub fn new(cfg: &MfccConfig, sample_rate_hz: u32) -> Result<Self, FeatureError> {
        let filterbank = mel_filterbank(cfg, sample_rate_hz)?;
        let frame_len = cfg.frame_len(sample_rate_hz);
        let window = (0..frame_len)
            .map(|n| {
                if frame_len == 1 {
                    1.0
                } else {
                    0.54 - 0.46 * (2.0 * PI * n as f64 / (frame_len - 1) as f64).cos()
                }
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            sample_rate_hz,
            frame_len,
            hop_len: cfg.hop_len(sample_rate_hz),
            window,
            filterbank,
            dct: dct_matrix(cfg.n_mels, cfg.n_mfcc),
            fft: FftPlanner::new().plan_fft_forward(cfg.n_fft),
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.frame_len {
            0
        } else {
            1 + (n_samples - self.frame_len) / self.hop_len
        }
    }

    /// Cepstral frames, `n_frames x n_mfcc`.
    pub fn frames(&self, samples: &[f64]) -> Result<Vec<Vec<f64>>, FeatureError> {
        if samples.len() < self.frame_len {
            return Err(FeatureError::ChunkTooShort {
                len: samples.len(),
                frame: self.frame_len,
            });
        }
        let alpha = self.cfg.pre_emphasis;
        let emphasized: Vec<f64> = std::iter::once(samples[0])
            .chain(samples.windows(2).map(|w| w[1] - alpha * w[0]))
            .collect();

        let n_bins = self.cfg.n_fft / 2 + 1;
        let mut spectrum = vec![Complex::new(0.0, 0.0); self.cfg.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; n_bins];
        let mut log_mel = vec![0.0; self.cfg.n_mels];

        let n_frames = self.n_frames(samples.len());
        let mut out = Vec::with_capacity(n_frames);
        for f in 0..n_frames {
            let start = f * self.hop_len;
            let frame = &emphasized[start..start + self.frame_len];
            for (slot, (x, w)) in spectrum.iter_mut().zip(frame.iter().zip(&self.window)) {
                *slot = Complex::new(x * w, 0.0);
            }
            spectrum[self.frame_len..].fill(Complex::new(0.0, 0.0));
            self.fft.process_with_scratch(&mut spectrum, &mut scratch);
            for (p, c) in power.iter_mut().zip(&spectrum) {
                *p = c.norm_sqr();
            }
            for (lm, filter) in log_mel.iter_mut().zip(&self.filterbank) {
                let energy: f64 = filter.iter().zip(&power).map(|(w, p)| w * p).sum();
                *lm = energy.max(self.cfg.log_floor).ln();
            }
            out.push(
                self.dct
                    .iter()
                    .map(|basis| basis.iter().zip(&log_mel).map(|(b, v)| b * v).sum())
                    .collect(),
            );
        }
        Ok(out)
    }
}

/// One-shot MFCC computation for a chunk.
pub fn compute_mfcc_frames(chunk: &Chunk, cfg: &MfccConfig) -> Result<Vec<Vec<f64>>, FeatureError> {
    MfccExtractor::new(cfg, chunk.sample_rate_hz)?.frames(&chunk.samples)
}

/// Collapses frames into one vector: the per-coefficient mean, optionally
/// followed by the population standard deviation.
pub fn pool_frames(frames: &[Vec<f64>], mode: Pooling) -> Result<Vec<f64>, FeatureError> {
    let first = frames.first().ok_or(FeatureError::EmptyFrames)?;
    let dim = first.len();
    let n = frames.len() as f64;
    let mut mean = vec![0.0; dim];
    for row in frames {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    if mode == Pooling::Mean {
        return Ok(mean);
    }
    let mut var = vec![0.0; dim];
    for row in frames {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    mean.extend(var.into_iter().map(|s| (s / n).sqrt()));
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chunk(samples: Vec<f64>) -> Chunk {
        Chunk {
            samples,
            sample_rate_hz: 16_000,
            source_id: "t".into(),
            index: 0,
            start_s: 0.0,
            padded: false,
        }
    }

    fn noise(n: usize, seed: u64, amp: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| amp * rng.gen_range(-1.0..1.0)).collect()
    }

    /// Straight-line MFCC with a naive DFT and explicit sums, sharing only
    /// the filterbank with the implementation under test.
    fn reference_mfcc(x: &[f64], cfg: &MfccConfig, rate: u32) -> Vec<Vec<f64>> {
        let bank = mel_filterbank(cfg, rate).unwrap();
        let frame = cfg.frame_len(rate);
        let hop = cfg.hop_len(rate);
        let mut y = vec![x[0]];
        for t in 1..x.len() {
            y.push(x[t] - cfg.pre_emphasis * x[t - 1]);
        }
        let mut frames = Vec::new();
        let mut start = 0;
        while start + frame <= y.len() {
            let seg: Vec<f64> = (0..frame)
                .map(|n| y[start + n] * (0.54 - 0.46 * (2.0 * PI * n as f64 / (frame - 1) as f64).cos()))
                .collect();
            let power: Vec<f64> = (0..=cfg.n_fft / 2)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (n, v) in seg.iter().enumerate() {
                        let ang = -2.0 * PI * (k * n) as f64 / cfg.n_fft as f64;
                        re += v * ang.cos();
                        im += v * ang.sin();
                    }
                    re * re + im * im
                })
                .collect();
            let logs: Vec<f64> = bank
                .iter()
                .map(|row| row.iter().zip(&power).map(|(a, b)| a * b).sum::<f64>().max(cfg.log_floor).ln())
                .collect();
            let m = logs.len() as f64;
            frames.push(
                (0..cfg.n_mfcc)
                    .map(|k| {
                        let s: f64 = logs
                            .iter()
                            .enumerate()
                            .map(|(n, v)| v * (PI * k as f64 * (n as f64 + 0.5) / m).cos())
                            .sum();
                        s * if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() }
                    })
                    .collect(),
            );
            start += hop;
        }
        frames
    }

    #[test]
    fn filterbank_shape_peak_and_order() {
        let cfg = MfccConfig::default();
        let bank = mel_filterbank(&cfg, 16_000).unwrap();
        assert_eq!(bank.len(), 26);
        assert!(bank.iter().all(|r| r.len() == 257));
        let mut last_centre = None;
        for row in &bank {
            let max = row.iter().cloned().fold(f64::MIN, f64::max);
            assert!((max - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&w| w >= 0.0));
            let support: Vec<usize> = (0..row.len()).filter(|&k| row[k] > 0.0).collect();
            assert!(support.windows(2).all(|w| w[1] == w[0] + 1), "support not contiguous");
            let centre = row.iter().position(|&w| w == 1.0).unwrap();
            if let Some(prev) = last_centre {
                assert!(centre > prev);
            }
            last_centre = Some(centre);
        }
    }

    #[test]
    fn mel_scale_round_trip() {
        for hz in [0.0, 100.0, 1_000.0, 8_000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs() {
        let too_many = MfccConfig {
            n_mfcc: 30,
            ..Default::default()
        };
        assert!(matches!(mel_filterbank(&too_many, 16_000), Err(FeatureError::InvalidConfig(_))));
        let short_fft = MfccConfig {
            n_fft: 256,
            ..Default::default()
        };
        assert!(short_fft.validate(16_000).is_err());
        let dense = MfccConfig {
            n_mels: 200,
            ..Default::default()
        };
        assert!(mel_filterbank(&dense, 16_000).is_err());
        let above_nyquist = MfccConfig {
            fmax_hz: Some(9_000.0),
            ..Default::default()
        };
        assert!(above_nyquist.validate(16_000).is_err());
    }

    #[test]
    fn frame_count_for_full_chunk() {
        let frames = compute_mfcc_frames(&chunk(noise(40_000, 1, 0.1)), &MfccConfig::default()).unwrap();
        assert_eq!(frames.len(), 248);
        assert!(frames.iter().all(|f| f.len() == 13));
    }

    #[test]
    fn silence_gives_identical_rows() {
        let frames = compute_mfcc_frames(&chunk(vec![0.0; 40_000]), &MfccConfig::default()).unwrap();
        assert!(frames.iter().all(|f| f == &frames[0]));
        let floor_c0 = (1e-10f64).ln() * 26f64.sqrt();
        assert!((frames[0][0] - floor_c0).abs() < 1e-9);
    }

    #[test]
    fn too_short_chunk() {
        assert!(matches!(
            compute_mfcc_frames(&chunk(vec![0.0; 399]), &MfccConfig::default()),
            Err(FeatureError::ChunkTooShort { len: 399, frame: 400 })
        ));
    }

    #[test]
    fn matches_direct_recomputation() {
        let cfg = MfccConfig::default();
        let x = noise(2_000, 7, 0.3);
        let fast = MfccExtractor::new(&cfg, 16_000).unwrap().frames(&x).unwrap();
        let slow = reference_mfcc(&x, &cfg, 16_000);
        assert_eq!(fast.len(), slow.len());
        for (a, b) in fast.iter().flatten().zip(slow.iter().flatten()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn amplitude_scaling_moves_only_c0() {
        let cfg = MfccConfig::default();
        let x = noise(4_000, 3, 0.05);
        let scaled: Vec<f64> = x.iter().map(|v| v * 10.0).collect();
        let a = reference_mfcc(&x, &cfg, 16_000);
        let b = MfccExtractor::new(&cfg, 16_000).unwrap().frames(&scaled).unwrap();
        let shift = 2.0 * 10f64.ln() * 26f64.sqrt();
        for (fa, fb) in a.iter().zip(&b) {
            assert!((fb[0] - fa[0] - shift).abs() < 1e-6);
            for k in 1..13 {
                assert!((fa[k] - fb[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pooling() {
        let one = vec![vec![1.0, -2.0, 3.0]];
        let pooled = pool_frames(&one, Pooling::MeanStd).unwrap();
        assert_eq!(&pooled[3..], &[0.0, 0.0, 0.0]);
        assert_eq!(pool_frames(&[vec![1.0, 3.0], vec![3.0, 1.0]], Pooling::Mean).unwrap(), vec![2.0, 2.0]);
        assert_eq!(
            pool_frames(&[vec![0.0, 0.0], vec![2.0, 2.0]], Pooling::MeanStd).unwrap(),
            vec![1.0, 1.0, 1.0, 1.0]
        );
        assert!(matches!(pool_frames(&[], Pooling::Mean), Err(FeatureError::EmptyFrames)));
    }
}
