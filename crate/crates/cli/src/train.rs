//! Cross-validated training of one s.t.m. classifier per fold and stream.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result, bail};
use laykari::audio::AudioBuffer;
use laykari::dataset::{
    ConcertAnnotation, ExtractConfig, FoldAssignment, LabeledExample, Stream, StreamInput, build_dataset,
    make_folds,
};
use laykari::features::MelMatrix;
use laykari::model::train::{Sample, evaluate};
use laykari::model::{Model, ModelConfig, TrainConfig, build_model, save_weights, train};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, TrainRun, read_json, record, write_json};
use crate::{cache, corpus};

/// Per-stream description of a trained fold set, `<out>/<stream>/folds.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldsFile {
    pub stream: Stream,
    pub classes: Vec<u32>,
    pub assignment: FoldAssignment,
    /// Examples per class over the whole dataset.
    pub class_counts: BTreeMap<u32, usize>,
    pub folds: Vec<FoldRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub weights: String,
    pub n_train: usize,
    pub n_val: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Eval-mode scores of the returned parameters.
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub training_sections: BTreeSet<String>,
}

/// Seeds of one stream, all drawn from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSeeds {
    pub extract: u64,
    pub folds: u64,
    pub init: Vec<u64>,
    pub shuffle: Vec<u64>,
}

/// Draws every seed in a fixed order, independent of which streams are
/// trained and of the thread count.
pub fn seed_plan(master: u64, k: usize) -> BTreeMap<Stream, StreamSeeds> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    let mut plan = BTreeMap::new();
    for s in Stream::ALL {
        let extract = rng.random();
        let folds = rng.random();
        let init = (0..k).map(|_| rng.random()).collect();
        let shuffle = (0..k).map(|_| rng.random()).collect();
        plan.insert(
            s,
            StreamSeeds {
                extract,
                folds,
                init,
                shuffle,
            },
        );
    }
    plan
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub concerts: Vec<String>,
    pub seeds: BTreeMap<Stream, StreamSeeds>,
    pub streams: BTreeMap<Stream, FoldsFile>,
}

struct Concert {
    annotation: ConcertAnnotation,
    audio: AudioBuffer,
    mel: MelMatrix,
}

pub fn run(cfg: &TrainRun) -> Result<TrainSummary> {
    if cfg.folds < 2 {
        bail!("at least 2 folds needed, got {}", cfg.folds);
    }
    if cfg.streams.is_empty() {
        bail!("no streams to train");
    }
    cfg.feat.validate()?;
    cfg.train.validate()?;
    let dirs = corpus::concert_dirs(&cfg.corpus)?;
    let annotations: Vec<ConcertAnnotation> =
        dirs.par_iter().map(|d| corpus::load_annotation(d)).collect::<Result<_>>()?;
    let seeds = seed_plan(cfg.seed, cfg.folds);
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;

    let mut streams = BTreeMap::new();
    for &stream in &cfg.streams {
        log::info!("{stream}: loading {} concerts", dirs.len());
        let concerts: Vec<Concert> = dirs
            .par_iter()
            .zip(&annotations)
            .map(|(d, a)| {
                let audio = corpus::load_stream(d, stream)?;
                let mel = cache::mel(&audio, &cfg.feat)?;
                Ok(Concert {
                    annotation: a.clone(),
                    audio,
                    mel,
                })
            })
            .collect::<Result<_>>()?;
        let folds_file = train_stream(cfg, stream, &concerts, &seeds[&stream])?;
        streams.insert(stream, folds_file);
    }

    let summary = TrainSummary {
        concerts: annotations.iter().map(|a| a.concert_id.clone()).collect(),
        seeds,
        streams,
    };
    write_json(&cfg.out.join("summary.json"), &summary)?;
    record(&cfg.out, RunConfig::Train(cfg.clone()))?;
    Ok(summary)
}

fn samples<'a>(set: &[&'a LabeledExample]) -> Vec<Sample<'a>> {
    set.iter().map(|e| (&e.example, e.stm)).collect()
}

fn train_stream(cfg: &TrainRun, stream: Stream, concerts: &[Concert], seeds: &StreamSeeds) -> Result<FoldsFile> {
    let inputs: Vec<StreamInput> = concerts
        .iter()
        .map(|c| StreamInput {
            annotation: &c.annotation,
            audio: &c.audio,
            mel: &c.mel,
        })
        .collect();
    let extract = ExtractConfig {
        seed: seeds.extract,
        ..cfg.extract.clone()
    };
    let examples = build_dataset(&inputs, stream, &extract, &cfg.feat)?;
    let mut class_counts: BTreeMap<u32, usize> = stream.classes().iter().map(|&c| (c, 0)).collect();
    for e in &examples {
        *class_counts.entry(e.stm).or_default() += 1;
    }
    log::info!("{stream}: {} examples, per class {class_counts:?}", examples.len());
    let assignment = make_folds(&examples, cfg.folds, seeds.folds)?;
    let model_cfg = ModelConfig::variant(cfg.variant, stream.classes());

    let dir = cfg.out.join(stream.name());
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let records: Vec<FoldRecord> = (0..cfg.folds)
        .into_par_iter()
        .map(|k| {
            let (tr, va) = assignment.split(&examples, k);
            let (tr, va) = (samples(&tr), samples(&va));
            if tr.is_empty() || va.is_empty() {
                bail!("{stream} fold {k}: {} training and {} validation examples", tr.len(), va.len());
            }
            let mut model: Model<f32> = build_model(&model_cfg, seeds.init[k])?;
            let tc = TrainConfig {
                seed: seeds.shuffle[k],
                ..cfg.train.clone()
            };
            let history = train(&mut model, &tr, &va, &tc).with_context(|| format!("{stream} fold {k}"))?;
            let (train_loss, train_acc) = evaluate(&model, &tr, tc.batch_size)?;
            let (val_loss, val_acc) = evaluate(&model, &va, tc.batch_size)?;
            log::info!(
                "{stream} fold {k}: best epoch {} train acc {train_acc:.3} val acc {val_acc:.3}",
                history.best_epoch
            );
            let weights = format!("fold{k}.stmw");
            save_weights(&model, dir.join(&weights))?;
            let hist_path = dir.join(format!("fold{k}_history.csv"));
            let file = std::fs::File::create(&hist_path).with_context(|| format!("creating {}", hist_path.display()))?;
            history.write_csv(file)?;
            Ok(FoldRecord {
                fold: k,
                weights,
                n_train: tr.len(),
                n_val: va.len(),
                best_epoch: history.best_epoch,
                epochs_run: history.epochs.len(),
                train_loss,
                train_acc,
                val_loss,
                val_acc,
                training_sections: assignment.training_sections(k).into_iter().map(String::from).collect(),
            })
        })
        .collect::<Result<_>>()?;

    let file = FoldsFile {
        stream,
        classes: stream.classes().to_vec(),
        assignment,
        class_counts,
        folds: records,
    };
    write_json(&dir.join("folds.json"), &file)?;
    Ok(file)
}

/// The fold models of one stream with their training sections.
pub struct StreamModels {
    pub stream: Stream,
    pub models: Vec<Model<f32>>,
    pub training_sections: Vec<BTreeSet<String>>,
}

impl StreamModels {
    pub fn load(models_dir: &Path, stream: Stream) -> Result<Self> {
        let dir: PathBuf = models_dir.join(stream.name());
        let folds: FoldsFile = read_json(&dir.join("folds.json"))
            .with_context(|| format!("no trained {stream} models under {}", models_dir.display()))?;
        if folds.stream != stream {
            bail!("{}: holds {} models, expected {stream}", dir.display(), folds.stream);
        }
        let mut models = Vec::new();
        let mut training_sections = Vec::new();
        for rec in folds.folds {
            let path = dir.join(&rec.weights);
            let model = laykari::model::weights::load_any::<f32>(&path)
                .with_context(|| format!("loading {}", path.display()))?;
            models.push(model);
            training_sections.push(rec.training_sections);
        }
        if models.is_empty() {
            bail!("{}: no fold models listed", dir.display());
        }
        Ok(Self {
            stream,
            models,
            training_sections,
        })
    }
}
