//! WAV decoding, encoding and band-limited resampling.
//!
//! Every downstream stage works on mono audio at [`CANONICAL_RATE`]. Files are
//! decoded, mixed down (arithmetic mean of channels) and resampled with a
//! Kaiser-windowed sinc interpolator driven by a precomputed phase table.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use thiserror::Error;

/// Sample rate assumed by the feature extractor and everything after it.
pub const CANONICAL_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("cannot read audio file {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("{path}: unsupported encoding ({detail})")]
    UnsupportedEncoding { path: PathBuf, detail: String },
    #[error("{path}: audio stream has zero length")]
    ZeroLength { path: PathBuf },
    #[error("cannot write audio file {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("invalid audio buffer: {0}")]
    Invalid(String),
}

/// Mono sample stream with its sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    rate: u32,
}

impl AudioBuffer {
    /// Wraps samples, clamping to `[-1, 1]`. Non-finite samples are rejected.
    pub fn new(mut samples: Vec<f32>, rate: u32) -> Result<Self, AudioError> {
        if rate == 0 {
            return Err(AudioError::Invalid("sample rate must be positive".into()));
        }
        for s in samples.iter_mut() {
            if !s.is_finite() {
                return Err(AudioError::Invalid("non-finite sample".into()));
            }
            *s = s.clamp(-1.0, 1.0);
        }
        Ok(Self { samples, rate })
    }

    pub fn silence(len: usize, rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            rate: rate.max(1),
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate as f64
    }

    /// Copies the span `[start_s, end_s)`, clipped to the buffer.
    pub fn slice_seconds(&self, start_s: f64, end_s: f64) -> AudioBuffer {
        let r = self.rate as f64;
        let a = ((start_s * r).round().max(0.0) as usize).min(self.samples.len());
        let b = ((end_s * r).round().max(0.0) as usize).clamp(a, self.samples.len());
        AudioBuffer {
            samples: self.samples[a..b].to_vec(),
            rate: self.rate,
        }
    }

    /// Resamples to `target_rate`. Identity when the rates already agree.
    pub fn resampled(&self, target_rate: u32) -> AudioBuffer {
        if target_rate == self.rate {
            return self.clone();
        }
        let samples = resample(&self.samples, self.rate as f64, target_rate as f64);
        AudioBuffer {
            samples,
            rate: target_rate,
        }
    }
}

/// Decodes a RIFF/WAVE file (PCM 16-bit or IEEE float 32-bit, one or two
/// channels) into a mono buffer at `target_rate`.
///
/// Stereo input is averaged when `mixdown` is set; otherwise only the first
/// channel is kept.
pub fn load_audio(
    path: impl AsRef<Path>,
    target_rate: u32,
    mixdown: bool,
) -> Result<AudioBuffer, AudioError> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|source| AudioError::Unreadable {
        path: path.to_owned(),
        source,
    })?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(AudioError::UnsupportedEncoding {
            path: path.to_owned(),
            detail: format!("{} channels", spec.channels),
        });
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>(),
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| if v.is_finite() { v } else { 0.0 }))
            .collect::<Result<_, _>>(),
        (format, bits) => {
            return Err(AudioError::UnsupportedEncoding {
                path: path.to_owned(),
                detail: format!("{format:?} {bits}-bit"),
            });
        }
    }
    .map_err(|source| AudioError::Unreadable {
        path: path.to_owned(),
        source,
    })?;

    let channels = spec.channels as usize;
    let mono: Vec<f32> = if channels == 1 {
        interleaved
    } else if mixdown {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect()
    } else {
        interleaved.chunks_exact(channels).map(|f| f[0]).collect()
    };
    if mono.is_empty() {
        return Err(AudioError::ZeroLength {
            path: path.to_owned(),
        });
    }
    let buffer = AudioBuffer::new(mono, spec.sample_rate).map_err(|e| {
        AudioError::UnsupportedEncoding {
            path: path.to_owned(),
            detail: e.to_string(),
        }
    })?;
    Ok(buffer.resampled(target_rate))
}

/// Writes a mono buffer as PCM 16-bit little-endian WAV.
pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<(), AudioError> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |source| AudioError::Write {
        path: path.to_owned(),
        source,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in &audio.samples {
        writer.write_sample(encode_i16(s)).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}

fn encode_i16(s: f32) -> i16 {
    (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

// Interpolation kernel: sinc with `ZERO_CROSSINGS` lobes on each side, Kaiser
// window, tabulated at `TABLE_DENSITY` points per lobe.
const ZERO_CROSSINGS: usize = 32;
const TABLE_DENSITY: usize = 512;
const KAISER_BETA: f64 = 9.0;
const CUTOFF: f64 = 0.94;

fn kernel_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = ZERO_CROSSINGS * TABLE_DENSITY + 2;
        let norm = bessel_i0(KAISER_BETA);
        (0..n)
            .map(|i| {
                let u = i as f64 / TABLE_DENSITY as f64;
                let r = u / ZERO_CROSSINGS as f64;
                if r >= 1.0 {
                    return 0.0;
                }
                let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm;
                let sinc = if u == 0.0 {
                    1.0
                } else {
                    (PI * u).sin() / (PI * u)
                };
                sinc * window
            })
            .collect()
    })
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

#[inline]
fn kernel(table: &[f64], u: f64) -> f64 {
    let pos = u.abs() * TABLE_DENSITY as f64;
    let idx = pos as usize;
    if idx + 1 >= table.len() {
        return 0.0;
    }
    let frac = pos - idx as f64;
    table[idx] + frac * (table[idx + 1] - table[idx])
}

/// Band-limited resampling between arbitrary positive rates.
///
/// Output length is `round(len * target / source)`. The pass band extends to
/// `CUTOFF` of the lower of the two Nyquist frequencies.
pub fn resample(input: &[f32], source_rate: f64, target_rate: f64) -> Vec<f32> {
    assert!(source_rate > 0.0 && target_rate > 0.0);
    let ratio = target_rate / source_rate;
    let out_len = (input.len() as f64 * ratio).round() as usize;
    if input.is_empty() || out_len == 0 {
        return Vec::new();
    }
    let table = kernel_table();
    let scale = ratio.min(1.0) * CUTOFF;
    let half_width = ZERO_CROSSINGS as f64 / scale;
    let step = 1.0 / ratio;
    let n = input.len() as isize;

    (0..out_len)
        .map(|m| {
            let pos = m as f64 * step;
            let lo = ((pos - half_width).ceil() as isize).max(0);
            let hi = ((pos + half_width).floor() as isize).min(n - 1);
            let mut acc = 0.0f64;
            for i in lo..=hi {
                acc += input[i as usize] as f64 * kernel(table, (pos - i as f64) * scale);
            }
            (acc * scale).clamp(-1.0, 1.0) as f32
        })
        .collect()
}
