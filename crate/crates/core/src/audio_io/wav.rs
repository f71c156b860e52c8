//! Minimal RIFF/WAVE codec: PCM 16/24-bit and IEEE float 32-bit.

use super::{AudioBuffer, AudioError};

/// Default upper bound on accepted WAV payloads.
pub const DEFAULT_MAX_WAV_BYTES: usize = 200 * 1024 * 1024;

const FORMAT_PCM: u16 = 0x0001;
const FORMAT_IEEE_FLOAT: u16 = 0x0003;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Pcm24,
    Float32,
}

impl SampleFormat {
    fn bits(self) -> u16 {
        match self {
            SampleFormat::Pcm16 => 16,
            SampleFormat::Pcm24 => 24,
            SampleFormat::Float32 => 32,
        }
    }

    fn tag(self) -> u16 {
        match self {
            SampleFormat::Pcm16 | SampleFormat::Pcm24 => FORMAT_PCM,
            SampleFormat::Float32 => FORMAT_IEEE_FLOAT,
        }
    }
}

struct FmtChunk {
    format: SampleFormat,
    channels: u16,
    sample_rate: u32,
    block_align: u16,
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk, AudioError> {
    if body.len() < 16 {
        return Err(AudioError::MalformedContainer("fmt chunk shorter than 16 bytes".into()));
    }
    let mut tag = read_u16(body, 0);
    let channels = read_u16(body, 2);
    let sample_rate = read_u32(body, 4);
    let block_align = read_u16(body, 12);
    let bits = read_u16(body, 14);
    if tag == FORMAT_EXTENSIBLE {
        // cbSize(2) validBits(2) channelMask(4) then the sub-format GUID,
        // whose first two bytes carry the plain format tag.
        if body.len() < 26 {
            return Err(AudioError::MalformedContainer("truncated WAVE_FORMAT_EXTENSIBLE header".into()));
        }
        tag = read_u16(body, 24);
    }
    let format = match (tag, bits) {
        (FORMAT_PCM, 16) => SampleFormat::Pcm16,
        (FORMAT_PCM, 24) => SampleFormat::Pcm24,
        (FORMAT_IEEE_FLOAT, 32) => SampleFormat::Float32,
        (FORMAT_PCM, b) => return Err(AudioError::UnsupportedCodec(format!("PCM {b}-bit"))),
        (FORMAT_IEEE_FLOAT, b) => return Err(AudioError::UnsupportedCodec(format!("IEEE float {b}-bit"))),
        (t, _) => return Err(AudioError::UnsupportedCodec(format!("format tag {t:#06x}"))),
    };
    if channels == 0 {
        return Err(AudioError::MalformedContainer("zero channels".into()));
    }
    if sample_rate == 0 {
        return Err(AudioError::MalformedContainer("zero sample rate".into()));
    }
    let expected_align = channels as usize * (bits as usize / 8);
    if block_align as usize != expected_align {
        return Err(AudioError::MalformedContainer(format!(
            "block align {block_align} does not match {channels} x {bits}-bit"
        )));
    }
    Ok(FmtChunk {
        format,
        channels,
        sample_rate,
        block_align,
    })
}

fn decode_sample(format: SampleFormat, b: &[u8]) -> f64 {
    match format {
        SampleFormat::Pcm16 => i16::from_le_bytes([b[0], b[1]]) as f64 / 32_768.0,
        SampleFormat::Pcm24 => {
            let v = i32::from_le_bytes([0, b[0], b[1], b[2]]) >> 8;
            v as f64 / 8_388_608.0
        }
        SampleFormat::Float32 => {
            let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
            if v.is_finite() {
                v.clamp(-1.0, 1.0)
            } else {
                0.0
            }
        }
    }
}

/// Decodes a WAV file with the default size limit.
pub fn decode_wav(raw: &[u8]) -> Result<AudioBuffer, AudioError> {
    decode_wav_with_limit(raw, DEFAULT_MAX_WAV_BYTES)
}

/// Decodes a WAV file, downmixing to mono by the arithmetic channel mean.
pub fn decode_wav_with_limit(raw: &[u8], max_bytes: usize) -> Result<AudioBuffer, AudioError> {
    if raw.len() > max_bytes {
        return Err(AudioError::TooLarge {
            size: raw.len(),
            limit: max_bytes,
        });
    }
    if raw.len() < 12 || &raw[0..4] != b"RIFF" || &raw[8..12] != b"WAVE" {
        return Err(AudioError::MalformedContainer("missing RIFF/WAVE signature".into()));
    }

    let mut fmt = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= raw.len() {
        let id = &raw[pos..pos + 4];
        let declared = read_u32(raw, pos + 4) as usize;
        let body_start = pos + 8;
        // Streaming writers leave the size field unset; clamp to what exists.
        let body_end = body_start.saturating_add(declared).min(raw.len());
        let body = &raw[body_start..body_end];
        match id {
            b"fmt " => fmt = Some(parse_fmt(body)?),
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_start.saturating_add(declared).saturating_add(declared & 1);
    }

    let fmt = fmt.ok_or_else(|| AudioError::MalformedContainer("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| AudioError::MalformedContainer("no data chunk".into()))?;

    let frame_bytes = fmt.block_align as usize;
    let sample_bytes = frame_bytes / fmt.channels as usize;
    let n_frames = data.len() / frame_bytes;
    if n_frames == 0 {
        return Err(AudioError::EmptyAudio);
    }
    let channels = fmt.channels as usize;
    let samples = data
        .chunks_exact(frame_bytes)
        .map(|frame| {
            let sum: f64 = frame
                .chunks_exact(sample_bytes)
                .map(|s| decode_sample(fmt.format, s))
                .sum();
            sum / channels as f64
        })
        .collect::<Vec<_>>();
    AudioBuffer::from_clamped(samples, fmt.sample_rate)
}

fn encode_sample(format: SampleFormat, s: f64, out: &mut Vec<u8>) {
    let s = if s.is_finite() { s.clamp(-1.0, 1.0) } else { 0.0 };
    match format {
        SampleFormat::Pcm16 => {
            let q = (s * 32_768.0).round().clamp(-32_768.0, 32_767.0) as i16;
            out.extend_from_slice(&q.to_le_bytes());
        }
        SampleFormat::Pcm24 => {
            let q = (s * 8_388_608.0).round().clamp(-8_388_608.0, 8_388_607.0) as i32;
            out.extend_from_slice(&q.to_le_bytes()[0..3]);
        }
        SampleFormat::Float32 => out.extend_from_slice(&(s as f32).to_le_bytes()),
    }
}

/// Encodes planar channels (all the same length) into a canonical 44-byte
/// header WAV file.
pub fn encode_wav_channels(channels: &[&[f64]], sample_rate_hz: u32, format: SampleFormat) -> Vec<u8> {
    assert!(!channels.is_empty(), "at least one channel required");
    let n_frames = channels[0].len();
    assert!(channels.iter().all(|c| c.len() == n_frames), "channels differ in length");
    let n_ch = channels.len() as u16;
    let bytes_per_sample = format.bits() as usize / 8;
    let block_align = n_ch as usize * bytes_per_sample;
    let data_len = n_frames * block_align;

    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.tag().to_le_bytes());
    out.extend_from_slice(&n_ch.to_le_bytes());
    out.extend_from_slice(&sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&((sample_rate_hz as usize * block_align) as u32).to_le_bytes());
    out.extend_from_slice(&(block_align as u16).to_le_bytes());
    out.extend_from_slice(&format.bits().to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for i in 0..n_frames {
        for ch in channels {
            encode_sample(format, ch[i], &mut out);
        }
    }
    out
}

/// Encodes a mono buffer.
pub fn encode_wav(buf: &AudioBuffer, format: SampleFormat) -> Vec<u8> {
    encode_wav_channels(&[buf.samples()], buf.sample_rate_hz(), format)
}
