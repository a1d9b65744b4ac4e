//! Concert annotations, balanced example extraction and section-grouped folds.
//!
//! A concert directory holds `sections.csv`
//! (`start_s,end_s,stm_vocal,stm_pakhawaj,stm_net`, labels are integers or
//! `na`) and `concert.json` (`{"sam_times_s": [...], "matras_per_cycle": n}`).

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioBuffer, resample};
use crate::features::{
    EXAMPLE_FRAMES, FeatConfig, FeatureError, MelExample, MelMatrix, frame_at, log_mel,
    make_example,
};
use crate::model::{FULL_CLASSES, VOCAL_CLASSES};

/// Length of one training example in seconds.
pub const EXAMPLE_SECONDS: f64 = 8.0;
/// Shortest section the annotation guidelines allow.
pub const MIN_SECTION_SECONDS: f64 = 5.0;
const EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}: sections on lines {first} and {second} overlap")]
    Overlap {
        path: PathBuf,
        first: usize,
        second: usize,
    },
    #[error("{path}: {msg}")]
    Invalid { path: PathBuf, msg: String },
    #[error("time-scale factor {0} is not on the augmentation grid")]
    FactorOffGrid(f64),
    #[error("fold count must be at least 1")]
    NoFolds,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Which audio stream a model listens to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    /// The full mix, labelled with the net s.t.m.
    Mixture,
    Vocal,
    Pakhawaj,
}

impl Stream {
    pub const ALL: [Stream; 3] = [Stream::Vocal, Stream::Pakhawaj, Stream::Mixture];

    pub fn classes(self) -> &'static [u32] {
        match self {
            Stream::Vocal => &VOCAL_CLASSES,
            _ => &FULL_CLASSES,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stream::Mixture => "mixture",
            Stream::Vocal => "vocal",
            Stream::Pakhawaj => "pakhawaj",
        }
    }

    /// The section label this stream is trained on, if it is a valid class.
    pub fn label(self, section: &Section) -> Option<u32> {
        let stm = match self {
            Stream::Mixture => section.stm_net,
            Stream::Vocal => section.stm_vocal,
            Stream::Pakhawaj => section.stm_pakhawaj,
        }?;
        self.classes().contains(&stm).then_some(stm)
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stream {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mixture" | "mix" | "net" => Ok(Stream::Mixture),
            "vocal" | "vocals" => Ok(Stream::Vocal),
            "pakhawaj" => Ok(Stream::Pakhawaj),
            _ => Err(format!("unknown stream {s:?}")),
        }
    }
}

/// A labelled time span. `None` labels mark regions without a surface tempo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub start: f64,
    pub end: f64,
    pub stm_vocal: Option<u32>,
    pub stm_pakhawaj: Option<u32>,
    pub stm_net: Option<u32>,
}

impl Section {
    pub fn new(start: f64, end: f64, vocal: Option<u32>, pakhawaj: Option<u32>, net: Option<u32>) -> Self {
        Self {
            start,
            end,
            stm_vocal: vocal,
            stm_pakhawaj: pakhawaj,
            stm_net: net,
        }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn labels(&self) -> (Option<u32>, Option<u32>, Option<u32>) {
        (self.stm_vocal, self.stm_pakhawaj, self.stm_net)
    }

    /// Set when any defined label falls outside its stream's class set; such
    /// sections are kept but never produce examples for that stream.
    pub fn is_excluded(&self) -> bool {
        [
            (self.stm_vocal, Stream::Vocal),
            (self.stm_pakhawaj, Stream::Pakhawaj),
            (self.stm_net, Stream::Mixture),
        ]
        .iter()
        .any(|(l, s)| l.is_some_and(|v| !s.classes().contains(&v)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcertAnnotation {
    pub concert_id: String,
    pub sam_times: Vec<f64>,
    pub matras_per_cycle: u32,
    pub sections: Vec<Section>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ConcertMeta {
    sam_times_s: Vec<f64>,
    matras_per_cycle: u32,
}

impl ConcertAnnotation {
    pub fn section_id(&self, index: usize) -> String {
        section_id(&self.concert_id, index)
    }

    pub fn end(&self) -> f64 {
        self.sections.last().map_or(0.0, |s| s.end)
    }

    /// Writes `sections.csv` and `concert.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
        let dir = dir.as_ref();
        let csv_path = dir.join("sections.csv");
        let file = std::fs::File::create(&csv_path).map_err(|source| DatasetError::Io {
            path: csv_path.clone(),
            source,
        })?;
        write_sections_csv(&self.sections, file).map_err(|source| DatasetError::Io {
            path: csv_path,
            source,
        })?;
        let meta = ConcertMeta {
            sam_times_s: self.sam_times.clone(),
            matras_per_cycle: self.matras_per_cycle,
        };
        let json_path = dir.join("concert.json");
        let text = serde_json::to_string_pretty(&meta).expect("meta serialises");
        std::fs::write(&json_path, text + "\n").map_err(|source| DatasetError::Io {
            path: json_path,
            source,
        })
    }
}

pub fn section_id(concert_id: &str, index: usize) -> String {
    format!("{concert_id}#{index}")
}

fn fmt_label(l: Option<u32>) -> String {
    l.map_or_else(|| "na".to_string(), |v| v.to_string())
}

fn parse_label(field: &str) -> Result<Option<u32>, String> {
    let f = field.trim();
    if f.is_empty() || f.eq_ignore_ascii_case("na") || f.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    match f.parse::<u32>() {
        Ok(v) if v > 0 => Ok(Some(v)),
        _ => Err(format!("unknown s.t.m. label {f:?}")),
    }
}

/// Writes the section CSV format (also used for analysis output).
pub fn write_sections_csv<W: Write>(sections: &[Section], w: W) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["start_s", "end_s", "stm_vocal", "stm_pakhawaj", "stm_net"])?;
    for s in sections {
        out.write_record([
            format!("{:.3}", s.start),
            format!("{:.3}", s.end),
            fmt_label(s.stm_vocal),
            fmt_label(s.stm_pakhawaj),
            fmt_label(s.stm_net),
        ])?;
    }
    out.flush()
}

/// Parses and validates a section CSV. `path` only labels error messages.
pub fn read_sections_csv<R: Read>(r: R, path: &Path) -> Result<Vec<Section>, DatasetError> {
    let parse_err = |line: usize, msg: String| DatasetError::Parse {
        path: path.to_owned(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let expected = ["start_s", "end_s", "stm_vocal", "stm_pakhawaj", "stm_net"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(parse_err(1, format!("expected header {}", expected.join(","))));
    }
    let mut sections: Vec<(usize, Section)> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() != 5 {
            return Err(parse_err(line, format!("expected 5 fields, got {}", rec.len())));
        }
        let time = |k: usize| {
            rec[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| parse_err(line, format!("bad time {:?}", &rec[k])))
        };
        let (start, end) = (time(0)?, time(1)?);
        if end <= start {
            return Err(parse_err(line, format!("end {end} is not after start {start}")));
        }
        let label = |k: usize| parse_label(&rec[k]).map_err(|m| parse_err(line, m));
        let s = Section::new(start, end, label(2)?, label(3)?, label(4)?);
        if let Some((prev_line, prev)) = sections.last() {
            if start < prev.start {
                return Err(parse_err(line, "sections are not in time order".into()));
            }
            if start < prev.end - EPS {
                return Err(DatasetError::Overlap {
                    path: path.to_owned(),
                    first: *prev_line,
                    second: line,
                });
            }
        }
        if let (Some(v), Some(p), Some(n)) = s.labels()
            && n != v.max(p)
        {
            log::warn!(
                "{}: line {line}: net s.t.m. {n} differs from max({v}, {p})",
                path.display()
            );
        }
        if s.duration() < MIN_SECTION_SECONDS - EPS {
            log::warn!("{}: line {line}: section shorter than 5 s", path.display());
        }
        sections.push((line, s));
    }
    Ok(sections.into_iter().map(|(_, s)| s).collect())
}

/// Loads `sections.csv` and its sibling `concert.json`. The concert id is the
/// name of the containing directory.
pub fn load_annotations(csv_path: impl AsRef<Path>) -> Result<ConcertAnnotation, DatasetError> {
    let path = csv_path.as_ref();
    let io = |p: &Path| {
        let p = p.to_owned();
        move |source| DatasetError::Io { path: p, source }
    };
    let file = std::fs::File::open(path).map_err(io(path))?;
    let sections = read_sections_csv(file, path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let meta_path = dir.join("concert.json");
    let text = std::fs::read_to_string(&meta_path).map_err(io(&meta_path))?;
    let meta: ConcertMeta = serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
        path: meta_path.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let invalid = |msg: &str| DatasetError::Invalid {
        path: meta_path.clone(),
        msg: msg.into(),
    };
    if meta.matras_per_cycle == 0 {
        return Err(invalid("matras_per_cycle must be positive"));
    }
    if meta.sam_times_s.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("sam_times_s must be strictly increasing"));
    }
    let concert_id = dir
        .canonicalize()
        .ok()
        .and_then(|d| d.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "concert".into());
    Ok(ConcertAnnotation {
        concert_id,
        sam_times: meta.sam_times_s,
        matras_per_cycle: meta.matras_per_cycle,
        sections,
    })
}

/// The augmentation grid `0.80, 0.84, ..., 1.20`.
pub fn scale_factors() -> Vec<f64> {
    (0..=10).map(|i| 0.8 + 0.04 * i as f64).collect()
}

fn on_grid(factor: f64) -> bool {
    scale_factors().iter().any(|g| (g - factor).abs() < 1e-6)
}

/// Speeds audio up by `factor` (duration divided by `factor`, event rates and
/// pitch multiplied by it) by band-limited resampling.
pub fn time_scale(audio: &AudioBuffer, factor: f64) -> Result<AudioBuffer, DatasetError> {
    if !on_grid(factor) {
        return Err(DatasetError::FactorOffGrid(factor));
    }
    if (factor - 1.0).abs() < 1e-6 {
        return Ok(audio.clone());
    }
    let rate = audio.rate() as f64;
    let samples = resample(audio.samples(), rate, rate / factor);
    Ok(AudioBuffer::new(samples, audio.rate()).expect("resampler output is finite"))
}

/// One labelled 8 s example.
#[derive(Debug, Clone)]
pub struct LabeledExample {
    pub example: MelExample,
    /// Index into the stream's class list.
    pub label: usize,
    pub stm: u32,
    pub section_id: String,
    pub concert_id: String,
    pub stream: Stream,
    pub scale_factor: f64,
    /// Window start, in seconds of the (scaled) section audio from its start.
    pub offset: f64,
}

/// Number of 8 s windows at `hop` that fit in `duration` seconds.
pub fn window_count(duration: f64, hop: f64) -> usize {
    if duration + EPS < EXAMPLE_SECONDS {
        0
    } else {
        ((duration - EXAMPLE_SECONDS) / hop + EPS).floor() as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractConfig {
    pub min_hop_s: f64,
    pub max_hop_s: f64,
    /// Per-class example target; the median non-overlapping class count when
    /// unset.
    pub target: Option<usize>,
    /// Top up classes below target with time-scaled copies.
    pub augment: bool,
    pub seed: u64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            min_hop_s: 0.5,
            max_hop_s: EXAMPLE_SECONDS,
            target: None,
            augment: true,
            seed: 0,
        }
    }
}

/// Per-class example target and window hop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancePlan {
    pub target: BTreeMap<u32, usize>,
    pub hop: BTreeMap<u32, f64>,
}

impl BalancePlan {
    pub fn hop_for(&self, stm: u32) -> f64 {
        self.hop.get(&stm).copied().unwrap_or(EXAMPLE_SECONDS)
    }
}

/// Chooses each class's hop so its unscaled example count approaches the
/// target: `hop_c = clamp(A_c / (target_c - n_c), min, max)` where `A_c` is
/// the total duration beyond the first window over the class's sections and
/// `n_c` their number (each section contributes `A / hop + 1` windows).
pub fn plan_balance(annotations: &[&ConcertAnnotation], stream: Stream, cfg: &ExtractConfig) -> BalancePlan {
    let mut spare: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    let mut natural: BTreeMap<u32, usize> = BTreeMap::new();
    for ann in annotations {
        for s in &ann.sections {
            let Some(stm) = stream.label(s) else { continue };
            if s.duration() + EPS < EXAMPLE_SECONDS {
                continue;
            }
            let e = spare.entry(stm).or_default();
            e.0 += s.duration() - EXAMPLE_SECONDS;
            e.1 += 1;
            *natural.entry(stm).or_default() += window_count(s.duration(), EXAMPLE_SECONDS);
        }
    }
    let target = cfg.target.unwrap_or_else(|| median(natural.values().copied().collect()));
    let mut plan = BalancePlan {
        target: BTreeMap::new(),
        hop: BTreeMap::new(),
    };
    for &stm in stream.classes() {
        plan.target.insert(stm, target);
        let hop = match spare.get(&stm) {
            Some(&(a, n)) if target > n && a > 0.0 => a / (target - n) as f64,
            _ => cfg.max_hop_s,
        };
        plan.hop.insert(stm, hop.clamp(cfg.min_hop_s, cfg.max_hop_s));
    }
    plan
}

fn median(mut v: Vec<usize>) -> usize {
    if v.is_empty() {
        return 0;
    }
    v.sort_unstable();
    let m = v.len() / 2;
    if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]).div_ceil(2) }
}

/// Audio and features of one stream of one concert.
#[derive(Debug, Clone, Copy)]
pub struct StreamInput<'a> {
    pub annotation: &'a ConcertAnnotation,
    pub audio: &'a AudioBuffer,
    /// Log-mel of the whole stream.
    pub mel: &'a MelMatrix,
}

/// Unscaled examples of one concert at the planned per-class hops. Every
/// window lies inside its section.
pub fn extract_examples(
    input: StreamInput<'_>,
    stream: Stream,
    plan: &BalancePlan,
) -> Result<Vec<LabeledExample>, DatasetError> {
    let ann = input.annotation;
    let mut out = Vec::new();
    for (idx, s) in ann.sections.iter().enumerate() {
        let Some(stm) = stream.label(s) else { continue };
        let hop = plan.hop_for(stm);
        let n = window_count(s.duration(), hop);
        if n == 0 {
            log::debug!("{}: section shorter than 8 s", ann.section_id(idx));
        }
        for i in 0..n {
            let offset = i as f64 * hop;
            let frame = frame_at(s.start + offset, input.mel.frame_hop);
            // Rounding may push the last window one frame past the section.
            let last_ok = frame_at(s.end - EXAMPLE_SECONDS, input.mel.frame_hop);
            let example = make_example(input.mel, frame.min(last_ok))?;
            out.push(LabeledExample {
                example,
                label: class_index(stream, stm),
                stm,
                section_id: ann.section_id(idx),
                concert_id: ann.concert_id.clone(),
                stream,
                scale_factor: 1.0,
                offset,
            });
        }
    }
    Ok(out)
}

fn class_index(stream: Stream, stm: u32) -> usize {
    stream
        .classes()
        .iter()
        .position(|&c| c == stm)
        .expect("label checked against class set")
}

/// Examples of section `idx` from its audio time-scaled by `factor`, at
/// window hop `hop`.
pub fn scaled_examples(
    input: StreamInput<'_>,
    idx: usize,
    stream: Stream,
    stm: u32,
    factor: f64,
    hop: f64,
    feat: &FeatConfig,
) -> Result<Vec<LabeledExample>, DatasetError> {
    let ann = input.annotation;
    let s = &ann.sections[idx];
    let n = window_count(s.duration() / factor, hop);
    if n == 0 {
        return Ok(Vec::new());
    }
    let clip = time_scale(&input.audio.slice_seconds(s.start, s.end), factor)?;
    let mel = log_mel(&clip, feat)?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let offset = i as f64 * hop;
        let frame = frame_at(offset, mel.frame_hop).min(mel.n_frames().saturating_sub(EXAMPLE_FRAMES));
        out.push(LabeledExample {
            example: make_example(&mel, frame)?,
            label: class_index(stream, stm),
            stm,
            section_id: ann.section_id(idx),
            concert_id: ann.concert_id.clone(),
            stream,
            scale_factor: factor,
            offset,
        });
    }
    Ok(out)
}

/// Extracts a class-balanced example set for `stream` from several concerts:
/// unscaled windows at the planned hops, thinned to the target where a class
/// has more, then (if enabled) time-scaled copies of random (section, factor)
/// pairs of each class until its target is met.
pub fn build_dataset(
    inputs: &[StreamInput<'_>],
    stream: Stream,
    cfg: &ExtractConfig,
    feat: &FeatConfig,
) -> Result<Vec<LabeledExample>, DatasetError> {
    let anns: Vec<&ConcertAnnotation> = inputs.iter().map(|i| i.annotation).collect();
    let plan = plan_balance(&anns, stream, cfg);
    let mut out = Vec::new();
    for input in inputs {
        out.extend(extract_examples(*input, stream, &plan)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Classes whose sections are long enough to exceed the target even at
    // the widest hop are thinned at random.
    for &stm in stream.classes() {
        let target = plan.target[&stm];
        let mut idx: Vec<usize> = (0..out.len()).filter(|&i| out[i].stm == stm).collect();
        if idx.len() > target {
            idx.shuffle(&mut rng);
            let mut drop = vec![false; out.len()];
            idx[target..].iter().for_each(|&i| drop[i] = true);
            let mut i = 0;
            out.retain(|_| {
                i += 1;
                !drop[i - 1]
            });
        }
    }
    if !cfg.augment {
        return Ok(out);
    }
    for &stm in stream.classes() {
        let have = out.iter().filter(|e| e.stm == stm).count();
        let target = plan.target[&stm];
        if have >= target {
            continue;
        }
        let mut deficit = target - have;
        let hop = plan.hop_for(stm);
        let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
        for (ci, input) in inputs.iter().enumerate() {
            for (si, s) in input.annotation.sections.iter().enumerate() {
                if stream.label(s) != Some(stm) {
                    continue;
                }
                for f in scale_factors() {
                    if (f - 1.0).abs() > 1e-6 && window_count(s.duration() / f, hop) > 0 {
                        candidates.push((ci, si, f));
                    }
                }
            }
        }
        candidates.shuffle(&mut rng);
        for (ci, si, f) in candidates {
            if deficit == 0 {
                break;
            }
            let mut extra = scaled_examples(inputs[ci], si, stream, stm, f, hop, feat)?;
            extra.truncate(deficit);
            deficit -= extra.len();
            out.extend(extra);
        }
        if deficit > 0 {
            log::info!("{stream} class {stm}: {deficit} examples short of target {target}");
        }
    }
    Ok(out)
}

/// Section-to-fold map. All examples of a section share its fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, section_id: &str) -> Option<usize> {
        self.folds.get(section_id).copied()
    }

    /// Examples outside fold `fold` (training) and inside it (validation).
    pub fn split<'a>(
        &self,
        examples: &'a [LabeledExample],
        fold: usize,
    ) -> (Vec<&'a LabeledExample>, Vec<&'a LabeledExample>) {
        examples
            .iter()
            .filter(|e| self.folds.contains_key(&e.section_id))
            .partition(|e| self.folds[&e.section_id] != fold)
    }

    /// Sections whose examples train the model of `fold`.
    pub fn training_sections(&self, fold: usize) -> Vec<&str> {
        self.folds
            .iter()
            .filter(|&(_, &f)| f != fold)
            .map(|(s, _)| s.as_str())
            .collect()
    }

    /// Per-fold example counts of class `stm`.
    pub fn class_counts(&self, examples: &[LabeledExample], stm: u32) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for e in examples.iter().filter(|e| e.stm == stm) {
            if let Some(f) = self.fold_of(&e.section_id) {
                counts[f] += 1;
            }
        }
        counts
    }
}

/// Greedy balanced assignment, class by class: sections in decreasing order
/// of example count (ties in seeded random order) each go to the fold holding
/// the fewest examples of that class so far (lowest index on ties).
pub fn make_folds(examples: &[LabeledExample], k: usize, seed: u64) -> Result<FoldAssignment, DatasetError> {
    if k == 0 {
        return Err(DatasetError::NoFolds);
    }
    let mut per_section: BTreeMap<&str, (u32, usize)> = BTreeMap::new();
    for e in examples {
        per_section.entry(&e.section_id).or_insert((e.stm, 0)).1 += 1;
    }
    let mut by_class: BTreeMap<u32, Vec<(&str, usize)>> = BTreeMap::new();
    for (id, (stm, n)) in per_section {
        by_class.entry(stm).or_default().push((id, n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = BTreeMap::new();
    for (stm, mut sections) in by_class {
        if sections.len() < k {
            log::warn!("class {stm}: {} sections for {k} folds", sections.len());
        }
        sections.shuffle(&mut rng);
        sections.sort_by(|a, b| b.1.cmp(&a.1));
        let mut load = vec![0usize; k];
        for (id, n) in sections {
            let f = (0..k).min_by_key(|&f| load[f]).expect("k > 0");
            load[f] += n;
            folds.insert(id.to_string(), f);
        }
    }
    Ok(FoldAssignment { k, folds })
}
