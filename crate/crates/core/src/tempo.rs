//! Metric tempo tracking.
//!
//! Two routes produce a [`TempoTrack`]: from audio, via a spectral-flux onset
//! detection function, windowed autocorrelation and Viterbi smoothing over
//! range-constrained lag candidates; and from annotated sam (cycle start)
//! times, where each cycle contributes a constant tempo.

use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ANALYSIS_HOP;
use crate::audio::AudioBuffer;
use crate::features::{FeatConfig, FeatureError, MelMatrix, log_mel};

const LOG_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TempoError {
    #[error("invalid tempo range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("onset function covers {got:.2} s, shorter than one {needed:.2} s window")]
    TooShort { got: f64, needed: f64 },
    #[error("empty input")]
    Empty,
    #[error("need at least two sam times, got {0}")]
    TooFewSams(usize),
    #[error("sam times must be strictly increasing (index {0})")]
    NonIncreasingSams(usize),
    #[error("tempo tracks have different frame grids")]
    GridMismatch,
    #[error("tempo CSV line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Admissible metric tempo interval in BPM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TempoRange {
    pub lo: f64,
    pub hi: f64,
}

impl TempoRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self, TempoError> {
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(TempoError::InvalidRange { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, bpm: f64) -> bool {
        bpm >= self.lo && bpm <= self.hi
    }
}

impl Default for TempoRange {
    fn default() -> Self {
        Self { lo: 35.0, hi: 75.0 }
    }
}

/// Onset detection function sampled every `hop` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct OdfSeries {
    pub values: Vec<f64>,
    pub hop: f64,
}

/// Autocorrelation scores of each analysis window over in-range lags.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateFrames {
    /// Window centres in seconds.
    pub times: Vec<f64>,
    /// Candidate lags in half ODF frames, ascending.
    pub lags: Vec<usize>,
    /// Tempo of each lag in BPM (descending, since lags ascend).
    pub bpm: Vec<f64>,
    /// `times.len() x lags.len()`, each row max-normalised into `[0, 1]`.
    pub scores: Array2<f64>,
}

/// Tempo versus time; `None` marks frames where the tempo is undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct TempoTrack {
    pub times: Vec<f64>,
    pub bpm: Vec<Option<f64>>,
}

impl TempoTrack {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Resamples onto `times`, taking the value of the nearest defined source
    /// frame. Times outside the source span replicate the edge values.
    pub fn nearest_on(&self, times: &[f64]) -> TempoTrack {
        let defined: Vec<(f64, f64)> = self
            .times
            .iter()
            .zip(&self.bpm)
            .filter_map(|(&t, b)| b.map(|b| (t, b)))
            .collect();
        let bpm = times
            .iter()
            .map(|&t| {
                if defined.is_empty() {
                    return None;
                }
                let idx = defined.partition_point(|&(s, _)| s < t);
                let best = match idx {
                    0 => defined[0],
                    i if i == defined.len() => defined[i - 1],
                    i => {
                        if t - defined[i - 1].0 <= defined[i].0 - t {
                            defined[i - 1]
                        } else {
                            defined[i]
                        }
                    }
                };
                Some(best.1)
            })
            .collect();
        TempoTrack {
            times: times.to_vec(),
            bpm,
        }
    }

    /// Writes `time_s,bpm` rows; undefined frames are written as `nan`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), TempoError> {
        writeln!(w, "time_s,bpm")?;
        for (t, b) in self.times.iter().zip(&self.bpm) {
            match b {
                Some(b) => writeln!(w, "{t},{b}")?,
                None => writeln!(w, "{t},nan")?,
            }
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, TempoError> {
        let mut text = String::new();
        let mut r = r;
        r.read_to_string(&mut text)?;
        let mut times = Vec::new();
        let mut bpm = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("time_s")) {
                continue;
            }
            let parse_err = |msg: String| TempoError::Parse { line: line_no, msg };
            let (t, b) = line
                .split_once(',')
                .ok_or_else(|| parse_err("expected two columns".into()))?;
            let t: f64 = t.trim().parse().map_err(|_| parse_err(format!("bad time {t:?}")))?;
            let b = b.trim();
            let b = if b.eq_ignore_ascii_case("nan") {
                None
            } else {
                let v: f64 = b.parse().map_err(|_| parse_err(format!("bad bpm {b:?}")))?;
                if v.is_nan() { None } else { Some(v) }
            };
            if times.last().is_some_and(|&last| t <= last) {
                return Err(parse_err("times must be strictly increasing".into()));
            }
            times.push(t);
            bpm.push(b);
        }
        Ok(Self { times, bpm })
    }
}

/// Parameters of the autocorrelation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcfConfig {
    pub window_s: f64,
    pub hop_s: f64,
    pub max_lag_s: f64,
}

impl Default for AcfConfig {
    fn default() -> Self {
        Self {
            window_s: 12.0,
            hop_s: ANALYSIS_HOP,
            max_lag_s: 2.0,
        }
    }
}

/// Settings for the full audio-to-track pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricTempoConfig {
    pub range: TempoRange,
    pub acf: AcfConfig,
    pub jump_penalty: f64,
}

impl Default for MetricTempoConfig {
    fn default() -> Self {
        Self {
            range: TempoRange::default(),
            acf: AcfConfig::default(),
            jump_penalty: 5.0,
        }
    }
}

/// Spectral flux: half-wave rectified frame difference, summed over bands.
pub fn odf(mel: &MelMatrix) -> Result<OdfSeries, TempoError> {
    let n = mel.n_frames();
    if n == 0 || mel.n_mels() == 0 {
        return Err(TempoError::Empty);
    }
    let mut values = vec![0.0; n];
    for j in 1..n {
        let cur = mel.values.column(j);
        let prev = mel.values.column(j - 1);
        values[j] = cur
            .iter()
            .zip(prev.iter())
            .map(|(&c, &p)| ((c - p) as f64).max(0.0))
            .sum();
    }
    Ok(OdfSeries {
        values,
        hop: mel.frame_hop,
    })
}

/// Windowed autocorrelation of the mean-removed ODF, restricted to lags whose
/// tempo falls inside `range`.
pub fn acf_candidates(
    odf: &OdfSeries,
    range: TempoRange,
    cfg: &AcfConfig,
) -> Result<CandidateFrames, TempoError> {
    // The ODF is smoothed with a [1,2,1]/4 kernel and linearly upsampled
    // so lags run on a half-frame grid. Beat periods that fall between
    // whole frames would otherwise lose to an aligned two-beat lag.
    let v = &odf.values;
    let hop = odf.hop / 2.0;
    let coarse: Vec<f64> = (0..v.len())
        .map(|i| {
            let prev = v[i.saturating_sub(1)];
            let next = v[(i + 1).min(v.len() - 1)];
            0.25 * prev + 0.5 * v[i] + 0.25 * next
        })
        .collect();
    let mut smoothed = Vec::with_capacity(2 * v.len());
    for (i, &x) in coarse.iter().enumerate() {
        let next = coarse.get(i + 1).copied().unwrap_or(x);
        smoothed.push(x);
        smoothed.push(0.5 * (x + next));
    }
    let win = (cfg.window_s / hop).round() as usize;
    let step = ((cfg.hop_s / hop).round() as usize).max(1);
    let max_lag = ((cfg.max_lag_s / hop).round() as usize).min(win.saturating_sub(1));
    if smoothed.len() < win || win == 0 {
        return Err(TempoError::TooShort {
            got: v.len() as f64 * odf.hop,
            needed: cfg.window_s,
        });
    }
    let lag_bpm = |lag: usize| 60.0 / (lag as f64 * hop);
    let lags: Vec<usize> = (1..=max_lag).filter(|&l| range.contains(lag_bpm(l))).collect();
    if lags.is_empty() {
        return Err(TempoError::InvalidRange {
            lo: range.lo,
            hi: range.hi,
        });
    }
    let n_windows = 1 + (smoothed.len() - win) / step;
    let mut scores = Array2::zeros((n_windows, lags.len()));
    let mut times = Vec::with_capacity(n_windows);
    let mut centred = vec![0.0; win];
    for w in 0..n_windows {
        let start = w * step;
        let seg = &smoothed[start..start + win];
        let mean = seg.iter().sum::<f64>() / win as f64;
        for (c, &v) in centred.iter_mut().zip(seg) {
            *c = v - mean;
        }
        let mut row = scores.row_mut(w);
        for (slot, &lag) in row.iter_mut().zip(&lags) {
            let acf: f64 = (lag..win).map(|i| centred[i] * centred[i - lag]).sum();
            *slot = acf.max(0.0);
        }
        let peak = row.iter().cloned().fold(0.0, f64::max);
        if peak > 0.0 {
            row.mapv_inplace(|v| v / peak);
        }
        times.push((start as f64 + win as f64 / 2.0) * hop);
    }
    let bpm = lags.iter().map(|&l| lag_bpm(l)).collect();
    Ok(CandidateFrames {
        times,
        lags,
        bpm,
        scores,
    })
}

/// Penalised log-score of a lag-index path.
pub fn path_score(cands: &CandidateFrames, path: &[usize], jump_penalty: f64) -> f64 {
    let mut total = 0.0;
    for (t, &k) in path.iter().enumerate() {
        total += (cands.scores[[t, k]] + LOG_EPS).ln();
        if t > 0 {
            total -= jump_penalty * (cands.bpm[k] / cands.bpm[path[t - 1]]).ln().abs();
        }
    }
    total
}

/// Lag-index path maximising [`path_score`].
pub fn viterbi_path(cands: &CandidateFrames, jump_penalty: f64) -> Vec<usize> {
    let (n, k) = cands.scores.dim();
    if n == 0 || k == 0 {
        return Vec::new();
    }
    let log_bpm: Vec<f64> = cands.bpm.iter().map(|b| b.ln()).collect();
    let emit = |t: usize, j: usize| (cands.scores[[t, j]] + LOG_EPS).ln();
    let mut delta: Vec<f64> = (0..k).map(|j| emit(0, j)).collect();
    let mut back = vec![vec![0usize; k]; n];
    let mut next = vec![0.0; k];
    for t in 1..n {
        for j in 0..k {
            let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
            for (i, &d) in delta.iter().enumerate() {
                let v = d - jump_penalty * (log_bpm[j] - log_bpm[i]).abs();
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            next[j] = best + emit(t, j);
            back[t][j] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut state = (0..k).fold(0, |a, j| if delta[j] > delta[a] { j } else { a });
    let mut path = vec![0; n];
    for t in (0..n).rev() {
        path[t] = state;
        state = back[t][state];
    }
    path
}

/// Viterbi-smoothed tempo track at the candidate window centres.
pub fn viterbi_smooth(cands: &CandidateFrames, jump_penalty: f64) -> TempoTrack {
    let path = viterbi_path(cands, jump_penalty);
    TempoTrack {
        times: cands.times.clone(),
        bpm: path.iter().map(|&k| Some(cands.bpm[k])).collect(),
    }
}

/// Moves `bpm` into `range` by factors of two.
///
/// Values above the range are halved and values below doubled until they
/// enter it. When the range is narrower than an octave and no power-of-two
/// multiple fits, the multiple closest to the range in log distance wins.
pub fn fold_to_range(bpm: f64, range: TempoRange) -> f64 {
    assert!(bpm > 0.0, "tempo must be positive");
    let log_gap = |x: f64| {
        if x < range.lo {
            (range.lo / x).ln()
        } else if x > range.hi {
            (x / range.hi).ln()
        } else {
            0.0
        }
    };
    let mut x = bpm;
    if x > range.hi {
        while x > range.hi {
            x /= 2.0;
        }
        if x < range.lo && log_gap(x * 2.0) < log_gap(x) {
            x *= 2.0;
        }
    } else if x < range.lo {
        while x < range.lo {
            x *= 2.0;
        }
        if x > range.hi && log_gap(x / 2.0) <= log_gap(x) {
            x /= 2.0;
        }
    }
    x
}

/// Metric tempo from annotated cycle starts.
///
/// Within cycle `i` the tempo is `60 * matras / (sam[i+1] - sam[i])`. The
/// track is sampled on the 0.5 s grid from zero up to the last sam; frames
/// before the first sam are undefined.
pub fn mt_from_sams(sam_times: &[f64], matras_per_cycle: u32) -> Result<TempoTrack, TempoError> {
    if sam_times.len() < 2 {
        return Err(TempoError::TooFewSams(sam_times.len()));
    }
    if let Some(i) = sam_times.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(TempoError::NonIncreasingSams(i + 1));
    }
    let last = *sam_times.last().unwrap();
    let n = (last / ANALYSIS_HOP - 1e-9).ceil().max(0.0) as usize;
    let times: Vec<f64> = (0..n).map(|i| i as f64 * ANALYSIS_HOP).collect();
    let bpm = times
        .iter()
        .map(|&t| {
            let cycle = sam_times.partition_point(|&s| s <= t);
            if cycle == 0 || cycle >= sam_times.len() {
                return None;
            }
            let dur = sam_times[cycle] - sam_times[cycle - 1];
            Some(60.0 * matras_per_cycle as f64 / dur)
        })
        .collect();
    Ok(TempoTrack { times, bpm })
}

/// Full audio route: log-mel, ODF, ACF candidates, Viterbi, then resampling
/// onto the 0.5 s analysis grid with edge replication.
pub fn estimate_metric_tempo(
    audio: &AudioBuffer,
    feat: &FeatConfig,
    cfg: &MetricTempoConfig,
) -> Result<TempoTrack, TempoError> {
    let mel = log_mel(audio, feat)?;
    metric_tempo_from_mel(&mel, audio.duration(), cfg)
}

pub fn metric_tempo_from_mel(
    mel: &MelMatrix,
    duration: f64,
    cfg: &MetricTempoConfig,
) -> Result<TempoTrack, TempoError> {
    let onset = odf(mel)?;
    let cands = acf_candidates(&onset, cfg.range, &cfg.acf)?;
    let track = viterbi_smooth(&cands, cfg.jump_penalty);
    Ok(track.nearest_on(&crate::frame_times(duration)))
}
