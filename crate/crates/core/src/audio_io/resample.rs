//! Rational-ratio polyphase resampler with a Kaiser-windowed sinc kernel.

use super::{AudioBuffer, AudioError};

/// Kaiser window shape parameter (roughly 86 dB stopband).
pub const KAISER_BETA: f64 = 8.6;
/// Kernel taps per output phase at unity ratio. When downsampling the kernel
/// is stretched by the decimation factor so the low-pass keeps the same
/// number of zero crossings.
pub const TAPS_PER_PHASE: usize = 32;
/// Fraction of the narrower Nyquist band placed at the kernel's cutoff.
const ROLLOFF: f64 = 0.9;
/// Largest phase table kept in memory; bigger tables are evaluated lazily.
const MAX_TABLE_ENTRIES: usize = 1 << 20;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Precomputed converter between two fixed rates.
#[derive(Debug, Clone)]
pub struct Resampler {
    source_hz: u32,
    target_hz: u32,
    up: u64,
    down: u64,
    cutoff: f64,
    half_width: f64,
    half_taps: usize,
    i0_beta: f64,
    table: Option<Vec<f64>>,
}

impl Resampler {
    pub fn new(source_hz: u32, target_hz: u32) -> Result<Self, AudioError> {
        if source_hz == 0 {
            return Err(AudioError::InvalidRate(0));
        }
        if target_hz == 0 {
            return Err(AudioError::InvalidRate(0));
        }
        let g = gcd(source_hz as u64, target_hz as u64);
        let up = target_hz as u64 / g;
        let down = source_hz as u64 / g;
        let band = (up as f64 / down as f64).min(1.0);
        let cutoff = ROLLOFF * band;
        let half_width = (TAPS_PER_PHASE / 2) as f64 / band;
        let half_taps = half_width.ceil() as usize;
        let mut r = Self {
            source_hz,
            target_hz,
            up,
            down,
            cutoff,
            half_width,
            half_taps,
            i0_beta: bessel_i0(KAISER_BETA),
            table: None,
        };
        let taps = 2 * half_taps;
        if (up as usize).saturating_mul(taps) <= MAX_TABLE_ENTRIES {
            let mut table = Vec::with_capacity(up as usize * taps);
            for phase in 0..up {
                table.extend(r.phase_taps(phase));
            }
            r.table = Some(table);
        }
        Ok(r)
    }

    pub fn source_hz(&self) -> u32 {
        self.source_hz
    }

    pub fn target_hz(&self) -> u32 {
        self.target_hz
    }

    fn kernel(&self, tau: f64) -> f64 {
        let x = tau / self.half_width;
        if x.abs() >= 1.0 {
            return 0.0;
        }
        let window = bessel_i0(KAISER_BETA * (1.0 - x * x).sqrt()) / self.i0_beta;
        self.cutoff * sinc(self.cutoff * tau) * window
    }

    /// Normalized taps for one fractional phase; tap `j` multiplies input
    /// sample `base - half_taps + 1 + j`.
    fn phase_taps(&self, phase: u64) -> Vec<f64> {
        let frac = phase as f64 / self.up as f64;
        let taps = 2 * self.half_taps;
        let mut h: Vec<f64> = (0..taps)
            .map(|j| self.kernel((self.half_taps as f64 - 1.0 - j as f64) + frac))
            .collect();
        let sum: f64 = h.iter().sum();
        if sum.abs() > 0.0 {
            h.iter_mut().for_each(|v| *v /= sum);
        }
        h
    }

    /// Output length for `n_in` input samples: `round(n_in * target / source)`.
    pub fn output_len(&self, n_in: usize) -> usize {
        let num = n_in as u128 * self.up as u128;
        ((num + self.down as u128 / 2) / self.down as u128) as usize
    }

    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        if self.up == self.down {
            return input.to_vec();
        }
        let n_out = self.output_len(input.len());
        let taps = 2 * self.half_taps;
        let mut out = Vec::with_capacity(n_out);
        let mut scratch;
        for n in 0..n_out as u64 {
            let pos = n * self.down;
            let base = (pos / self.up) as i64;
            let phase = pos % self.up;
            let h: &[f64] = match &self.table {
                Some(t) => &t[phase as usize * taps..(phase as usize + 1) * taps],
                None => {
                    scratch = self.phase_taps(phase);
                    &scratch
                }
            };
            let first = base - self.half_taps as i64 + 1;
            let lo = (-first).max(0) as usize;
            let hi = ((input.len() as i64 - first).min(taps as i64)).max(0) as usize;
            let mut acc = 0.0;
            for j in lo..hi {
                acc += h[j] * input[(first + j as i64) as usize];
            }
            out.push(acc.clamp(-1.0, 1.0));
        }
        out
    }
}

/// Converts `buf` to `target_hz`. Equal rates return the samples unchanged.
pub fn resample(buf: &AudioBuffer, target_hz: u32) -> Result<AudioBuffer, AudioError> {
    if target_hz == 0 {
        return Err(AudioError::InvalidRate(0));
    }
    if buf.sample_rate_hz() == target_hz {
        return Ok(buf.clone());
    }
    let r = Resampler::new(buf.sample_rate_hz(), target_hz)?;
    AudioBuffer::new(r.process(buf.samples()), target_hz)
}
