//! Synthetic concerts: pulse trains at integer multiples of a metric tempo,
//! with exact annotations.
//!
//! The percussion stream plays short decaying noise clicks and the vocal
//! stream short enveloped tones. Events on the beat are louder than the
//! subdivisions between beats, so the metric level stays audible whatever the
//! surface rate.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioBuffer, AudioError, CANONICAL_RATE, write_wav};
use crate::dataset::{ConcertAnnotation, DatasetError, MIN_SECTION_SECONDS, Section, Stream};
use crate::tempo::TempoTrack;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Metric tempo as a function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TempoCurve {
    Constant { bpm: f64 },
    /// Linear drift from `start_bpm` at time 0 to `end_bpm` at the end.
    Linear { start_bpm: f64, end_bpm: f64 },
    /// Consecutive `(duration_s, bpm)` pieces; the last one extends forever.
    Piecewise { pieces: Vec<(f64, f64)> },
}

impl TempoCurve {
    pub fn bpm_at(&self, t: f64, total: f64) -> f64 {
        match self {
            TempoCurve::Constant { bpm } => *bpm,
            TempoCurve::Linear { start_bpm, end_bpm } => {
                let a = if total > 0.0 { (t / total).clamp(0.0, 1.0) } else { 0.0 };
                start_bpm + a * (end_bpm - start_bpm)
            }
            TempoCurve::Piecewise { pieces } => {
                let mut edge = 0.0;
                for &(d, bpm) in pieces {
                    edge += d;
                    if t < edge {
                        return bpm;
                    }
                }
                pieces.last().map_or(60.0, |p| p.1)
            }
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            TempoCurve::Constant { bpm } => vec![*bpm],
            TempoCurve::Linear { start_bpm, end_bpm } => vec![*start_bpm, *end_bpm],
            TempoCurve::Piecewise { pieces } => pieces.iter().map(|p| p.1).collect(),
        }
    }
}

/// One scheduled section. `None` silences that stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleItem {
    pub duration: f64,
    pub stm_vocal: Option<u32>,
    pub stm_pakhawaj: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub concert_id: String,
    pub tempo: TempoCurve,
    pub schedule: Vec<ScheduleItem>,
    pub matras_per_cycle: u32,
    /// Standard deviation of the additive Gaussian noise in the mixture.
    pub noise_floor: f64,
    /// Gain of off-beat events relative to beat events.
    pub subdivision_gain: f64,
    /// Relative amplitude jitter (uniform, +-).
    pub amp_jitter: f64,
    /// Onset time jitter in seconds (uniform, +-).
    pub time_jitter: f64,
    pub rate: u32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            concert_id: "synth".into(),
            tempo: TempoCurve::Constant { bpm: 60.0 },
            schedule: Vec::new(),
            matras_per_cycle: 12,
            noise_floor: 0.01,
            subdivision_gain: 0.5,
            amp_jitter: 0.2,
            time_jitter: 0.005,
            rate: CANONICAL_RATE,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn duration(&self) -> f64 {
        self.schedule.iter().map(|s| s.duration).sum()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if self.schedule.is_empty() {
            return bad("empty schedule".into());
        }
        for (i, s) in self.schedule.iter().enumerate() {
            if !(s.duration >= MIN_SECTION_SECONDS) {
                return bad(format!("section {i} lasts {} s, below 5 s", s.duration));
            }
            if s.stm_vocal.is_some_and(|v| !Stream::Vocal.classes().contains(&v)) {
                return bad(format!("section {i}: vocal s.t.m. {:?}", s.stm_vocal));
            }
            if s.stm_pakhawaj.is_some_and(|v| !Stream::Pakhawaj.classes().contains(&v)) {
                return bad(format!("section {i}: pakhawaj s.t.m. {:?}", s.stm_pakhawaj));
            }
        }
        if self.tempo.values().iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return bad("tempo must be positive".into());
        }
        if let TempoCurve::Piecewise { pieces } = &self.tempo
            && (pieces.is_empty() || pieces.iter().any(|p| !(p.0 > 0.0)))
        {
            return bad("piecewise tempo needs positive durations".into());
        }
        if self.matras_per_cycle == 0 || self.rate == 0 {
            return bad("matras per cycle and rate must be positive".into());
        }
        if !(0.0..1.0).contains(&self.amp_jitter) || self.time_jitter < 0.0 || self.noise_floor < 0.0 {
            return bad("jitter and noise must be non-negative, amplitude jitter below 1".into());
        }
        Ok(())
    }

    /// Ground-truth metric tempo on `times`.
    pub fn mt_track(&self, times: &[f64]) -> TempoTrack {
        let total = self.duration();
        TempoTrack {
            times: times.to_vec(),
            bpm: times.iter().map(|&t| Some(self.tempo.bpm_at(t, total))).collect(),
        }
    }
}

/// Generated audio and annotation.
#[derive(Debug, Clone)]
pub struct SynthConcert {
    pub mixture: AudioBuffer,
    pub vocal: AudioBuffer,
    pub pakhawaj: AudioBuffer,
    pub annotation: ConcertAnnotation,
    pub beat_times: Vec<f64>,
}

impl SynthConcert {
    pub fn stream(&self, s: Stream) -> &AudioBuffer {
        match s {
            Stream::Mixture => &self.mixture,
            Stream::Vocal => &self.vocal,
            Stream::Pakhawaj => &self.pakhawaj,
        }
    }

    /// Writes `mix.wav`, `vocal.wav`, `pakhawaj.wav`, `sections.csv` and
    /// `concert.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), SynthError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_wav(dir.join("mix.wav"), &self.mixture)?;
        write_wav(dir.join("vocal.wav"), &self.vocal)?;
        write_wav(dir.join("pakhawaj.wav"), &self.pakhawaj)?;
        self.annotation.save(dir)?;
        Ok(())
    }
}

const CLICK_S: f64 = 0.005;
const TONE_S: f64 = 0.040;
const EVENT_GAIN: f64 = 0.3;

/// Renders the streams of `spec`.
pub fn generate_concert(spec: &SynthSpec) -> Result<SynthConcert, SynthError> {
    spec.validate()?;
    let rate = spec.rate as f64;
    let total = spec.duration();
    let n = (total * rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut edges = Vec::with_capacity(spec.schedule.len() + 1);
    edges.push(0.0);
    for s in &spec.schedule {
        edges.push(edges.last().unwrap() + s.duration);
    }
    let item_at = |t: f64| {
        let i = edges[1..].partition_point(|&e| e <= t);
        &spec.schedule[i.min(spec.schedule.len() - 1)]
    };

    // Integrate the beat phase sample by sample and emit events where the
    // phase crosses a multiple of 1 / stm.
    let mut beats = Vec::new();
    let mut vocal_events = Vec::new();
    let mut pakh_events = Vec::new();
    let mut phase = 0.0f64;
    for i in 0..n {
        let t = i as f64 / rate;
        let item = item_at(t);
        let next = phase + spec.tempo.bpm_at(t, total) / 60.0 / rate;
        // Event k of a stream at multiple m sits at phase k / m; each sample
        // covers the half-open phase interval [phase, next).
        let crossing = |m: u32| -> Option<(f64, u64)> {
            let m = m as f64;
            let (a, b) = (phase * m, next * m);
            let k = a.ceil();
            (k < b).then(|| (t + (k - a) / (b - a) / rate, k as u64))
        };
        if let Some((bt, _)) = crossing(1) {
            beats.push(bt);
        }
        if let Some(m) = item.stm_vocal
            && let Some((et, k)) = crossing(m)
        {
            vocal_events.push((et, k % m as u64 == 0));
        }
        if let Some(m) = item.stm_pakhawaj
            && let Some((et, k)) = crossing(m)
        {
            pakh_events.push((et, k % m as u64 == 0));
        }
        phase = next;
    }

    let mut vocal = vec![0f64; n];
    let mut pakh = vec![0f64; n];
    let amp = |rng: &mut ChaCha8Rng, on_beat: bool| {
        let base = if on_beat { 1.0 } else { spec.subdivision_gain };
        EVENT_GAIN * base * (1.0 + spec.amp_jitter * rng.random_range(-1.0..=1.0))
    };
    let jitter = |rng: &mut ChaCha8Rng| {
        if spec.time_jitter > 0.0 {
            rng.random_range(-spec.time_jitter..=spec.time_jitter)
        } else {
            0.0
        }
    };
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    for &(t, on_beat) in &pakh_events {
        let a = amp(&mut rng, on_beat);
        let start = ((t + jitter(&mut rng)) * rate).round().max(0.0) as usize;
        let len = (CLICK_S * rate) as usize;
        for j in 0..len {
            let Some(s) = pakh.get_mut(start + j) else { break };
            let env = (-(j as f64) / (len as f64 / 5.0)).exp();
            *s += a * env * unit.sample(&mut rng);
        }
    }
    for &(t, on_beat) in &vocal_events {
        let a = amp(&mut rng, on_beat);
        let f0 = 300.0 * (1.0 + 0.03 * rng.random_range(-1.0..=1.0));
        let start = ((t + jitter(&mut rng)) * rate).round().max(0.0) as usize;
        let len = (TONE_S * rate) as usize;
        for j in 0..len {
            let Some(s) = vocal.get_mut(start + j) else { break };
            let env = 0.5 - 0.5 * (2.0 * PI * j as f64 / len as f64).cos();
            let ph = 2.0 * PI * f0 * j as f64 / rate;
            *s += a * env * (ph.sin() + 0.5 * (2.0 * ph).sin() + 0.25 * (3.0 * ph).sin()) / 1.75;
        }
    }

    let noise = Normal::new(0.0, spec.noise_floor.max(1e-12)).expect("noise sd");
    let mix: Vec<f32> = vocal
        .iter()
        .zip(&pakh)
        .map(|(v, p)| {
            let e = if spec.noise_floor > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            (v + p + e) as f32
        })
        .collect();
    let to_buf = |x: Vec<f64>| AudioBuffer::new(x.into_iter().map(|v| v as f32).collect(), spec.rate);

    let m = spec.matras_per_cycle as usize;
    let sam_times = beats.iter().step_by(m).copied().collect();
    let sections = spec
        .schedule
        .iter()
        .zip(edges.windows(2))
        .map(|(item, e)| {
            let net = match (item.stm_vocal, item.stm_pakhawaj) {
                (Some(v), Some(p)) => Some(v.max(p)),
                (v, p) => v.or(p),
            };
            Section::new(e[0], e[1], item.stm_vocal, item.stm_pakhawaj, net)
        })
        .collect();

    Ok(SynthConcert {
        mixture: AudioBuffer::new(mix, spec.rate)?,
        vocal: to_buf(vocal)?,
        pakhawaj: to_buf(pakh)?,
        annotation: ConcertAnnotation {
            concert_id: spec.concert_id.clone(),
            sam_times,
            matras_per_cycle: spec.matras_per_cycle,
            sections,
        },
        beat_times: beats,
    })
}

/// Parameters of [`random_spec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomSpecConfig {
    pub n_sections: usize,
    pub min_section_s: f64,
    pub max_section_s: f64,
    pub bpm_lo: f64,
    pub bpm_hi: f64,
    /// Probability that the tempo drifts linearly instead of staying constant.
    pub drift_prob: f64,
    /// Largest relative drift over the concert.
    pub max_drift: f64,
    pub noise_floor: f64,
    pub subdivision_gain: f64,
}

impl Default for RandomSpecConfig {
    fn default() -> Self {
        Self {
            n_sections: 6,
            min_section_s: 12.0,
            max_section_s: 30.0,
            bpm_lo: 35.0,
            bpm_hi: 75.0,
            drift_prob: 0.3,
            max_drift: 0.1,
            noise_floor: 0.01,
            subdivision_gain: SynthSpec::default().subdivision_gain,
        }
    }
}

/// A random concert: uniform tempo in the configured range, and sections
/// whose (vocal, pakhawaj) labels change at every boundary. Net labels are
/// uniform over their classes.
pub fn random_spec(concert_id: &str, seed: u64, cfg: &RandomSpecConfig) -> SynthSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bpm = rng.random_range(cfg.bpm_lo..=cfg.bpm_hi);
    let tempo = if rng.random_bool(cfg.drift_prob.clamp(0.0, 1.0)) {
        let end = bpm * (1.0 + rng.random_range(-cfg.max_drift..=cfg.max_drift));
        TempoCurve::Linear {
            start_bpm: bpm,
            end_bpm: end.clamp(cfg.bpm_lo, cfg.bpm_hi),
        }
    } else {
        TempoCurve::Constant { bpm }
    };
    let vocal = Stream::Vocal.classes();
    let pakh = Stream::Pakhawaj.classes();
    let mut schedule: Vec<ScheduleItem> = Vec::with_capacity(cfg.n_sections);
    while schedule.len() < cfg.n_sections {
        // Net label uniform over its classes, carried by one instrument with
        // the other at or below it.
        let net = pakh[rng.random_range(0..pakh.len())];
        let below = |set: &[u32], rng: &mut ChaCha8Rng| {
            let ok: Vec<u32> = set.iter().copied().filter(|&c| c <= net).collect();
            ok[rng.random_range(0..ok.len())]
        };
        let (v, p) = if net == 16 || rng.random_bool(0.5) {
            (below(vocal, &mut rng), net)
        } else {
            (net, below(pakh, &mut rng))
        };
        let item = ScheduleItem {
            duration: rng.random_range(cfg.min_section_s..=cfg.max_section_s).round(),
            stm_vocal: Some(v),
            stm_pakhawaj: Some(p),
        };
        let same = schedule
            .last()
            .is_some_and(|p| p.stm_vocal == item.stm_vocal && p.stm_pakhawaj == item.stm_pakhawaj);
        if !same {
            schedule.push(item);
        }
    }
    SynthSpec {
        concert_id: concert_id.into(),
        tempo,
        schedule,
        noise_floor: cfg.noise_floor,
        subdivision_gain: cfg.subdivision_gain,
        seed: seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1),
        ..SynthSpec::default()
    }
}
