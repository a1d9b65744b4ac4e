//! Resolved run configurations, written beside every command's outputs.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use laykari::dataset::{ExtractConfig, Stream};
use laykari::evaluation::{BOUNDARY_TOLERANCES, TempoAccuracyConfig};
use laykari::features::FeatConfig;
use laykari::model::{TrainConfig, Variant};
use laykari::segmentation::{NetMode, SmoothConfig};
use laykari::synth::SynthSpec;
use laykari::tempo::MetricTempoConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// File name of the resolved configuration in each output directory.
pub const RUN_CONFIG: &str = "run_config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRun {
    pub corpus: PathBuf,
    /// Output directory; not recorded, so runs into different directories
    /// stay comparable.
    #[serde(skip)]
    pub out: PathBuf,
    pub streams: Vec<Stream>,
    pub folds: usize,
    /// Master seed; every other seed below is drawn from it.
    pub seed: u64,
    pub variant: Variant,
    pub feat: FeatConfig,
    pub extract: ExtractConfig,
    pub train: TrainConfig,
}

impl Default for TrainRun {
    fn default() -> Self {
        Self {
            corpus: PathBuf::new(),
            out: PathBuf::new(),
            streams: vec![Stream::Mixture, Stream::Vocal, Stream::Pakhawaj],
            folds: 3,
            seed: 0,
            variant: Variant::V2a,
            feat: FeatConfig::default(),
            extract: ExtractConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// How frame tracks become sections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SegMethod {
    Seg1,
    #[default]
    Seg2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyseRun {
    pub audio: PathBuf,
    pub vocal: Option<PathBuf>,
    pub pakhawaj: Option<PathBuf>,
    pub models: PathBuf,
    #[serde(skip)]
    pub out: PathBuf,
    /// Annotation of the concert, when it may have contributed training
    /// sections; frames are then routed to fold models that never saw them.
    pub annotation: Option<PathBuf>,
    pub method: SegMethod,
    pub net_mode: NetMode,
    /// `None` keeps the raw frame-wise sections.
    pub smooth: Option<SmoothConfig>,
    pub feat: FeatConfig,
    pub tempo: MetricTempoConfig,
    pub plot: bool,
}

impl Default for AnalyseRun {
    fn default() -> Self {
        Self {
            audio: PathBuf::new(),
            vocal: None,
            pakhawaj: None,
            models: PathBuf::new(),
            out: PathBuf::new(),
            annotation: None,
            method: SegMethod::default(),
            net_mode: NetMode::default(),
            smooth: Some(SmoothConfig::default()),
            feat: FeatConfig::default(),
            tempo: MetricTempoConfig::default(),
            plot: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TempoRun {
    pub audio: PathBuf,
    pub feat: FeatConfig,
    pub tempo: MetricTempoConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizeRun {
    pub audio: PathBuf,
    pub feat: FeatConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRun {
    pub concerts: Vec<SynthSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateRun {
    pub method: String,
    /// Estimated and ground-truth section files, pairwise.
    pub est: Vec<PathBuf>,
    pub gt: Vec<PathBuf>,
    pub tols: Vec<f64>,
    /// Estimated metric tempo tracks and ground-truth `concert.json` files,
    /// pairwise with the sections (optional).
    pub est_tempo: Vec<PathBuf>,
    pub gt_concert: Vec<PathBuf>,
    pub accuracy: TempoAccuracyConfig,
}

impl Default for EvaluateRun {
    fn default() -> Self {
        Self {
            method: "estimate".into(),
            est: Vec::new(),
            gt: Vec::new(),
            tols: BOUNDARY_TOLERANCES.to_vec(),
            est_tempo: Vec::new(),
            gt_concert: Vec::new(),
            accuracy: TempoAccuracyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum RunConfig {
    Synth(SynthRun),
    Featurize(FeaturizeRun),
    Train(TrainRun),
    Tempo(TempoRun),
    Analyse(AnalyseRun),
    Evaluate(EvaluateRun),
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Writes `run_config.json` into `dir`.
pub fn record(dir: &Path, cfg: RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join(RUN_CONFIG), &cfg)
}
