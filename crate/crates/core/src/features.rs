//! Log-scaled mel spectrograms and fixed-size network examples.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, ArrayView2, Axis, s};
use rustfft::FftPlanner;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioBuffer;

/// Number of frames in one network example (8 s at a 20 ms hop).
pub const EXAMPLE_FRAMES: usize = 400;

const CACHE_MAGIC: &[u8; 4] = b"LMEL";
const CACHE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("upper band edge {f_hi} Hz exceeds the Nyquist frequency {nyquist} Hz")]
    AboveNyquist { f_hi: f64, nyquist: f64 },
    #[error("invalid feature configuration: {0}")]
    InvalidConfig(String),
    #[error("audio rate {got} Hz does not match the feature rate {expected} Hz")]
    RateMismatch { got: u32, expected: u32 },
    #[error("audio has {samples} samples, shorter than one {window}-sample window")]
    TooShort { samples: usize, window: usize },
    #[error("example slice [{start}, {end}) exceeds the {n_frames} available frames")]
    OutOfRange {
        start: usize,
        end: usize,
        n_frames: usize,
    },
    #[error("mel cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// STFT and mel analysis parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatConfig {
    pub window_s: f64,
    pub hop_s: f64,
    pub n_mels: usize,
    pub f_lo: f64,
    pub f_hi: f64,
    pub rate: u32,
    pub n_fft: usize,
    /// Gain inside `log(1 + gain * x)`.
    pub log_scale: f64,
}

impl Default for FeatConfig {
    fn default() -> Self {
        Self {
            window_s: 0.04,
            hop_s: 0.02,
            n_mels: 40,
            f_lo: 20.0,
            f_hi: 8000.0,
            rate: crate::audio::CANONICAL_RATE,
            n_fft: 1024,
            log_scale: 1000.0,
        }
    }
}

impl FeatConfig {
    pub fn window_len(&self) -> usize {
        (self.window_s * self.rate as f64).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.hop_s * self.rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let nyquist = self.rate as f64 / 2.0;
        if self.f_hi > nyquist {
            return Err(FeatureError::AboveNyquist {
                f_hi: self.f_hi,
                nyquist,
            });
        }
        if !(self.f_lo >= 0.0 && self.f_lo < self.f_hi) {
            return Err(FeatureError::InvalidConfig(format!(
                "band [{}, {}] is empty",
                self.f_lo, self.f_hi
            )));
        }
        let (w, h) = (self.window_len(), self.hop_len());
        if !(w > h && h > 0) {
            return Err(FeatureError::InvalidConfig(format!(
                "window {w} and hop {h} samples must satisfy window > hop > 0"
            )));
        }
        if self.n_fft < w {
            return Err(FeatureError::InvalidConfig(format!(
                "FFT size {} is shorter than the window ({w})",
                self.n_fft
            )));
        }
        if self.n_mels == 0 || !(self.log_scale > 0.0) {
            return Err(FeatureError::InvalidConfig(
                "n_mels and log_scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale, peak height one.
///
/// Returns an `n_mels x (n_fft / 2 + 1)` weight matrix.
pub fn mel_filterbank(cfg: &FeatConfig, n_fft: usize) -> Result<Array2<f64>, FeatureError> {
    let cfg = FeatConfig {
        n_fft,
        ..cfg.clone()
    };
    cfg.validate()?;
    let n_bins = n_fft / 2 + 1;
    let (m_lo, m_hi) = (hz_to_mel(cfg.f_lo), hz_to_mel(cfg.f_hi));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.rate as f64 / n_fft as f64;
    let mut fb = Array2::zeros((cfg.n_mels, n_bins));
    for (m, mut row) in fb.axis_iter_mut(Axis(0)).enumerate() {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            *w = if f > lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
        }
        if row.sum() <= 0.0 {
            return Err(FeatureError::InvalidConfig(format!(
                "mel band {m} covers no FFT bin; increase n_fft"
            )));
        }
    }
    Ok(fb)
}

/// Log-compressed mel magnitude spectrogram, `n_mels x n_frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelMatrix {
    pub values: Array2<f32>,
    /// Seconds between consecutive frames.
    pub frame_hop: f64,
}

impl MelMatrix {
    pub fn n_mels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }

    /// Writes the flat little-endian cache format.
    pub fn write_cache(&self, path: impl AsRef<Path>) -> Result<(), FeatureError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CACHE_MAGIC)?;
        w.write_u32::<LittleEndian>(CACHE_VERSION)?;
        w.write_u32::<LittleEndian>(self.n_mels() as u32)?;
        w.write_u32::<LittleEndian>(self.n_frames() as u32)?;
        w.write_f64::<LittleEndian>(self.frame_hop)?;
        for row in self.values.rows() {
            for &v in row {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_cache(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(FeatureError::Cache("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != CACHE_VERSION {
            return Err(FeatureError::Cache(format!("unsupported version {version}")));
        }
        let n_mels = r.read_u32::<LittleEndian>()? as usize;
        let n_frames = r.read_u32::<LittleEndian>()? as usize;
        let frame_hop = r.read_f64::<LittleEndian>()?;
        let mut data = vec![0f32; n_mels * n_frames];
        r.read_f32_into::<LittleEndian>(&mut data)
            .map_err(|e| FeatureError::Cache(format!("truncated payload: {e}")))?;
        let values = Array2::from_shape_vec((n_mels, n_frames), data)
            .map_err(|e| FeatureError::Cache(e.to_string()))?;
        Ok(Self { values, frame_hop })
    }
}

/// Computes the log-mel spectrogram of `audio`.
///
/// Frames are centred: frame `j` is centred on sample `j * hop`, with the
/// signal zero-padded by half a window at both ends, so there are
/// `1 + floor(len / hop)` frames. The magnitude STFT uses a periodic Hann
/// window zero-padded to `n_fft`.
pub fn log_mel(audio: &AudioBuffer, cfg: &FeatConfig) -> Result<MelMatrix, FeatureError> {
    cfg.validate()?;
    if audio.rate() != cfg.rate {
        return Err(FeatureError::RateMismatch {
            got: audio.rate(),
            expected: cfg.rate,
        });
    }
    let (win, hop, n_fft) = (cfg.window_len(), cfg.hop_len(), cfg.n_fft);
    if audio.len() < win {
        return Err(FeatureError::TooShort {
            samples: audio.len(),
            window: win,
        });
    }
    let fb = mel_filterbank(cfg, n_fft)?;
    let window: Vec<f64> = (0..win)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / win as f64).cos())
        .collect();
    let half = win / 2;
    let samples = audio.samples();
    let n_frames = 1 + samples.len() / hop;
    let n_bins = n_fft / 2 + 1;

    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut mags = Array2::<f64>::zeros((n_bins, n_frames));

    for j in 0..n_frames {
        let origin = (j * hop) as isize - half as isize;
        for (i, c) in buf.iter_mut().enumerate() {
            let idx = origin + i as isize;
            *c = if i < win && idx >= 0 && (idx as usize) < samples.len() {
                Complex::new(samples[idx as usize] as f64 * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, m) in mags.column_mut(j).iter_mut().enumerate() {
            *m = buf[k].norm();
        }
    }

    let mel = fb.dot(&mags);
    let values = mel.mapv(|x| (1.0 + cfg.log_scale * x).ln() as f32);
    Ok(MelMatrix {
        values,
        frame_hop: cfg.hop_s,
    })
}

/// A min-max normalised `n_mels x 400` slice, the unit fed to the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct MelExample {
    pub values: Array2<f32>,
}

impl MelExample {
    pub fn view(&self) -> ArrayView2<'_, f32> {
        self.values.view()
    }
}

/// Slices [`EXAMPLE_FRAMES`] frames starting at `start_frame` and rescales
/// them to `[0, 1]`. A constant slice maps to all zeros.
pub fn make_example(mel: &MelMatrix, start_frame: usize) -> Result<MelExample, FeatureError> {
    let end = start_frame + EXAMPLE_FRAMES;
    if end > mel.n_frames() {
        return Err(FeatureError::OutOfRange {
            start: start_frame,
            end,
            n_frames: mel.n_frames(),
        });
    }
    let slice = mel.values.slice(s![.., start_frame..end]);
    Ok(MelExample {
        values: min_max(slice),
    })
}

fn min_max(x: ArrayView2<'_, f32>) -> Array2<f32> {
    let (lo, hi) = x
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return Array2::zeros(x.raw_dim());
    }
    x.mapv(|v| ((v - lo) / range).clamp(0.0, 1.0))
}

/// Frame index of the example whose 8 s window starts at `t` seconds.
pub fn frame_at(t: f64, frame_hop: f64) -> usize {
    (t / frame_hop).round().max(0.0) as usize
}
