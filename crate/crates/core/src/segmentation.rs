//! Frame-wise s.t.m. tracks and their assembly into labelled sections.

use std::collections::BTreeSet;
use std::io::Write;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioBuffer;
use crate::dataset::{ConcertAnnotation, EXAMPLE_SECONDS, MIN_SECTION_SECONDS, Section, Stream, write_sections_csv};
use crate::features::{EXAMPLE_FRAMES, FeatConfig, FeatureError, MelExample, MelMatrix, frame_at, log_mel, make_example};
use crate::model::{Model, ModelError};
use crate::tempo::TempoTrack;
use crate::{ANALYSIS_HOP, frame_times};

const PREDICT_BATCH: usize = 32;

#[derive(Debug, Error)]
pub enum SegError {
    #[error("audio lasts {got:.2} s, at least 8 s needed")]
    TooShort { got: f64 },
    #[error("frame grids differ: {0}")]
    GridMismatch(String),
    #[error("net track required for net mode from_model")]
    MissingNet,
    #[error("model classes {model:?} do not match stream {stream}")]
    ClassMismatch { model: Vec<u32>, stream: Stream },
    #[error("frame {frame}: every fold model was trained on section {section}")]
    NoCleanModel { frame: usize, section: String },
    #[error("no models given")]
    NoModels,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Class probabilities every 0.5 s.
#[derive(Debug, Clone, PartialEq)]
pub struct StmTrack {
    pub stream: Stream,
    /// Ascending s.t.m. values, one per column of `probs`.
    pub classes: Vec<u32>,
    pub times: Vec<f64>,
    /// `[n_frames, n_classes]`, rows summing to one.
    pub probs: Array2<f64>,
}

impl StmTrack {
    /// A track putting all mass on `labels`.
    pub fn one_hot(stream: Stream, times: Vec<f64>, labels: &[u32]) -> Self {
        let classes = stream.classes().to_vec();
        let mut probs = Array2::zeros((times.len(), classes.len()));
        for (i, l) in labels.iter().enumerate() {
            let k = classes.iter().position(|c| c == l).expect("label in class set");
            probs[[i, k]] = 1.0;
        }
        Self {
            stream,
            classes,
            times,
            probs,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Column of the most probable class per frame; ties go to the lower
    /// s.t.m.
    pub fn argmax(&self) -> Vec<usize> {
        self.probs
            .rows()
            .into_iter()
            .map(|r| (0..r.len()).fold(0, |a, j| if r[j] > r[a] { j } else { a }))
            .collect()
    }

    pub fn labels(&self) -> Vec<u32> {
        self.argmax().into_iter().map(|k| self.classes[k]).collect()
    }

    pub fn prob(&self, frame: usize, stm: u32) -> f64 {
        self.classes
            .iter()
            .position(|&c| c == stm)
            .map_or(0.0, |k| self.probs[[frame, k]])
    }

    /// `time_s,p_<stm>...` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let head: Vec<String> = self.classes.iter().map(|c| format!("p_{c}")).collect();
        writeln!(w, "time_s,{}", head.join(","))?;
        for (t, row) in self.times.iter().zip(self.probs.rows()) {
            let cells: Vec<String> = row.iter().map(|p| format!("{p:.6}")).collect();
            writeln!(w, "{t:.3},{}", cells.join(","))?;
        }
        Ok(())
    }
}

fn check_grid(a: &[f64], b: &[f64]) -> Result<(), SegError> {
    if a.len() != b.len() {
        return Err(SegError::GridMismatch(format!("{} vs {} frames", a.len(), b.len())));
    }
    if let Some(i) = a.iter().zip(b).position(|(x, y)| (x - y).abs() > 1e-6) {
        return Err(SegError::GridMismatch(format!("frame {i}: {} vs {}", a[i], b[i])));
    }
    Ok(())
}

/// Start time of the 8 s excerpt for the frame at `t`: centred on the middle
/// of the frame's 0.5 s span, clamped so it stays inside the audio.
pub fn excerpt_start(t: f64, duration: f64) -> f64 {
    (t + ANALYSIS_HOP / 2.0 - EXAMPLE_SECONDS / 2.0).clamp(0.0, (duration - EXAMPLE_SECONDS).max(0.0))
}

fn excerpts(mel: &MelMatrix, times: &[f64], duration: f64) -> Result<Vec<MelExample>, SegError> {
    let last = mel.n_frames().saturating_sub(EXAMPLE_FRAMES);
    times
        .iter()
        .map(|&t| {
            let f = frame_at(excerpt_start(t, duration), mel.frame_hop).min(last);
            Ok(make_example(mel, f)?)
        })
        .collect()
}

fn check_duration(duration: f64) -> Result<(), SegError> {
    if duration + 1e-9 < EXAMPLE_SECONDS {
        return Err(SegError::TooShort { got: duration });
    }
    Ok(())
}

fn check_classes(model: &Model<f32>, stream: Stream) -> Result<(), SegError> {
    if model.classes() != stream.classes() {
        return Err(SegError::ClassMismatch {
            model: model.classes().to_vec(),
            stream,
        });
    }
    Ok(())
}

/// Classifies an 8 s excerpt around every 0.5 s frame of `audio`.
pub fn framewise_stm(
    model: &Model<f32>,
    stream: Stream,
    audio: &AudioBuffer,
    feat: &FeatConfig,
) -> Result<StmTrack, SegError> {
    check_duration(audio.duration())?;
    let mel = log_mel(audio, feat)?;
    framewise_stm_from_mel(model, stream, &mel, audio.duration())
}

pub fn framewise_stm_from_mel(
    model: &Model<f32>,
    stream: Stream,
    mel: &MelMatrix,
    duration: f64,
) -> Result<StmTrack, SegError> {
    check_duration(duration)?;
    check_classes(model, stream)?;
    let times = frame_times(duration);
    let ex = excerpts(mel, &times, duration)?;
    let probs = model.predict_examples(&ex, PREDICT_BATCH)?.mapv(f64::from);
    Ok(StmTrack {
        stream,
        classes: stream.classes().to_vec(),
        times,
        probs,
    })
}

/// A model trained with one fold held out, and the sections it saw.
#[derive(Debug, Clone, Copy)]
pub struct FoldModel<'a> {
    pub model: &'a Model<f32>,
    pub training_sections: &'a BTreeSet<String>,
}

/// Which fold models classified a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameProvenance {
    pub frame: usize,
    /// Section containing the excerpt centre, if the concert is annotated.
    pub section_id: Option<String>,
    /// Indices into the fold-model list whose outputs were averaged.
    pub models: Vec<usize>,
}

/// Section index containing time `t`.
fn section_at(ann: &ConcertAnnotation, t: f64) -> Option<usize> {
    ann.sections.iter().position(|s| s.start <= t && t < s.end)
}

/// Cross-validated frame-wise classification: each frame is classified by
/// the average of the fold models whose training sections exclude the
/// section under the excerpt centre. Without an annotation, or for sections
/// no model trained on, all models are averaged.
pub fn framewise_stm_cv(
    models: &[FoldModel<'_>],
    stream: Stream,
    mel: &MelMatrix,
    duration: f64,
    annotation: Option<&ConcertAnnotation>,
) -> Result<(StmTrack, Vec<FrameProvenance>), SegError> {
    check_duration(duration)?;
    if models.is_empty() {
        return Err(SegError::NoModels);
    }
    for m in models {
        check_classes(m.model, stream)?;
    }
    let times = frame_times(duration);
    let mut prov = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let centre = excerpt_start(t, duration) + EXAMPLE_SECONDS / 2.0;
        let section_id =
            annotation.and_then(|a| section_at(a, centre).map(|s| a.section_id(s)));
        let clean: Vec<usize> = (0..models.len())
            .filter(|&m| section_id.as_ref().is_none_or(|s| !models[m].training_sections.contains(s)))
            .collect();
        if clean.is_empty() {
            return Err(SegError::NoCleanModel {
                frame: i,
                section: section_id.unwrap_or_default(),
            });
        }
        prov.push(FrameProvenance {
            frame: i,
            section_id,
            models: clean,
        });
    }
    let ex = excerpts(mel, &times, duration)?;
    let n_classes = stream.classes().len();
    let mut probs = Array2::<f64>::zeros((times.len(), n_classes));
    for (m, fm) in models.iter().enumerate() {
        let frames: Vec<usize> = prov.iter().filter(|p| p.models.contains(&m)).map(|p| p.frame).collect();
        if frames.is_empty() {
            continue;
        }
        let out = fm.model.predict_examples(frames.iter().map(|&f| &ex[f]), PREDICT_BATCH)?;
        for (row, &f) in out.rows().into_iter().zip(&frames) {
            let w = 1.0 / prov[f].models.len() as f64;
            probs.row_mut(f).zip_mut_with(&row, |p, &q| *p += w * q as f64);
        }
    }
    // Renormalise away rounding from the average.
    for mut row in probs.axis_iter_mut(Axis(0)) {
        let s = row.sum();
        row.mapv_inplace(|p| p / s);
    }
    Ok((
        StmTrack {
            stream,
            classes: stream.classes().to_vec(),
            times,
            probs,
        },
        prov,
    ))
}

/// Contiguous labelled sections covering an analysed span.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SectionSequence {
    pub sections: Vec<Section>,
}

type Labels = (Option<u32>, Option<u32>, Option<u32>);

impl SectionSequence {
    /// Sections from per-frame label tuples on a uniform grid starting at
    /// `times[0]`; a boundary wherever the tuple changes.
    pub fn from_frames(times: &[f64], labels: &[Labels]) -> Self {
        assert_eq!(times.len(), labels.len());
        let mut sections: Vec<Section> = Vec::new();
        for (i, (&t, l)) in times.iter().zip(labels).enumerate() {
            let end = times.get(i + 1).copied().unwrap_or(t + ANALYSIS_HOP);
            match sections.last_mut() {
                Some(s) if s.labels() == *l => s.end = end,
                _ => sections.push(Section::new(t, end, l.0, l.1, l.2)),
            }
        }
        Self { sections }
    }

    /// Interior boundary times.
    pub fn boundaries(&self) -> Vec<f64> {
        self.sections.iter().skip(1).map(|s| s.start).collect()
    }

    /// Label tuple at each of `times` (the section containing it; the last
    /// section extends to the right).
    pub fn labels_at(&self, times: &[f64]) -> Vec<Labels> {
        times
            .iter()
            .map(|&t| {
                let i = self.sections.partition_point(|s| s.end <= t);
                self.sections[i.min(self.sections.len() - 1)].labels()
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_sections_csv(&self.sections, w)
    }
}

/// How seg1 derives the net label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetMode {
    /// Argmax of the net model.
    #[default]
    FromModel,
    /// Maximum of the vocal and pakhawaj labels.
    AsMax,
}

/// Independent per-stream argmax labels.
pub fn assemble_seg1(
    voc: &StmTrack,
    pakh: &StmTrack,
    net: Option<&StmTrack>,
    mode: NetMode,
) -> Result<SectionSequence, SegError> {
    check_grid(&voc.times, &pakh.times)?;
    let net_labels = match (mode, net) {
        (NetMode::FromModel, None) => return Err(SegError::MissingNet),
        (NetMode::FromModel, Some(n)) => {
            check_grid(&voc.times, &n.times)?;
            Some(n.labels())
        }
        (NetMode::AsMax, _) => None,
    };
    let (v, p) = (voc.labels(), pakh.labels());
    let tuples: Vec<Labels> = (0..v.len())
        .map(|i| {
            let n = net_labels.as_ref().map_or(v[i].max(p[i]), |n| n[i]);
            (Some(v[i]), Some(p[i]), Some(n))
        })
        .collect();
    Ok(SectionSequence::from_frames(&voc.times, &tuples))
}

/// Per frame, the tuple `(v, p, max(v, p))` with the highest mean
/// probability across the three tracks.
pub fn assemble_seg2(voc: &StmTrack, pakh: &StmTrack, net: &StmTrack) -> Result<SectionSequence, SegError> {
    check_grid(&voc.times, &pakh.times)?;
    check_grid(&voc.times, &net.times)?;
    let tuples: Vec<Labels> = (0..voc.len())
        .map(|i| {
            let mut best = (f64::NEG_INFINITY, (0, 0));
            for &v in &voc.classes {
                for &p in &pakh.classes {
                    let n = v.max(p);
                    let score = (voc.prob(i, v) + pakh.prob(i, p) + net.prob(i, n)) / 3.0;
                    if score > best.0 {
                        best = (score, (v, p));
                    }
                }
            }
            let (v, p) = best.1;
            (Some(v), Some(p), Some(v.max(p)))
        })
        .collect();
    Ok(SectionSequence::from_frames(&voc.times, &tuples))
}

/// Sections from the net track alone, for analyses without stems.
pub fn assemble_net(net: &StmTrack) -> SectionSequence {
    let tuples: Vec<Labels> = net.labels().into_iter().map(|n| (None, None, Some(n))).collect();
    SectionSequence::from_frames(&net.times, &tuples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothConfig {
    pub min_dur: f64,
    /// Merge short sections into the following section instead of the
    /// preceding one (the last section still merges backwards).
    pub prefer_next: bool,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        Self {
            min_dur: MIN_SECTION_SECONDS,
            prefer_next: false,
        }
    }
}

fn coalesce(sections: &mut Vec<Section>) {
    let mut out: Vec<Section> = Vec::with_capacity(sections.len());
    for s in sections.drain(..) {
        match out.last_mut() {
            Some(prev) if prev.labels() == s.labels() => prev.end = s.end,
            _ => out.push(s),
        }
    }
    *sections = out;
}

/// Removes sections shorter than `min_dur` left to right: each takes the
/// label of its predecessor (a leading one that of its successor), then
/// equal neighbours merge, until no short section remains or only one
/// section is left.
pub fn smooth_sections(seq: &SectionSequence, cfg: SmoothConfig) -> SectionSequence {
    let mut s = seq.sections.clone();
    coalesce(&mut s);
    while s.len() > 1 {
        let Some(i) = s.iter().position(|x| x.duration() + 1e-9 < cfg.min_dur) else {
            break;
        };
        let into_next = i == 0 || (cfg.prefer_next && i + 1 < s.len());
        let donor = if into_next { i + 1 } else { i - 1 };
        let (v, p, n) = s[donor].labels();
        s[i].stm_vocal = v;
        s[i].stm_pakhawaj = p;
        s[i].stm_net = n;
        coalesce(&mut s);
    }
    SectionSequence { sections: s }
}

/// Surface tempo: metric tempo times the frame's s.t.m. label.
pub fn surface_tempo_bpm(mt: &TempoTrack, stm: &StmTrack) -> Result<TempoTrack, SegError> {
    check_grid(&mt.times, &stm.times)?;
    let labels = stm.labels();
    Ok(TempoTrack {
        times: mt.times.clone(),
        bpm: mt.bpm.iter().zip(labels).map(|(b, l)| b.map(|b| b * l as f64)).collect(),
    })
}
