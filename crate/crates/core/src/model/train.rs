//! Mini-batch training with Adam and validation-loss early stopping.

use std::io::Write;

use ndarray::{Array2, ArrayD};
use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::layers::{Real, softmax_cross_entropy};
use super::{Model, ModelError, stack_examples};
use crate::features::MelExample;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrain,
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("label {0} is not one of the model classes")]
    UnknownLabel(u32),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new validation-loss minimum before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            max_epochs: 500,
            patience: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(format!(
                "learning rate {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(TrainError::InvalidConfig(
                "batch size, epoch limit and patience must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Metrics of one epoch. Training figures are averaged over the epoch's
/// training-mode batches; validation figures come from an eval-mode pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn best(&self) -> Option<&EpochStats> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for e in &self.epochs {
            out.serialize(e)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// One labelled training example: input and s.t.m. class value.
pub type Sample<'a> = (&'a MelExample, u32);

struct Adam<F> {
    m: Vec<ArrayD<F>>,
    v: Vec<ArrayD<F>>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl<F: Real> Adam<F> {
    fn new(model: &Model<F>) -> Self {
        let zeros = || {
            model
                .params()
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect()
        };
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut Model<F>, lr: f64) {
        self.t += 1;
        let step = lr * (1.0 - BETA2.powi(self.t)).sqrt() / (1.0 - BETA1.powi(self.t));
        let (b1, b2, eps, step) = (F::of(BETA1), F::of(BETA2), F::of(ADAM_EPS), F::of(step));
        let one = F::one();
        for ((p, m), v) in model
            .params_mut()
            .into_iter()
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    *w -= step * *m / (v.sqrt() + eps);
                });
        }
    }
}

fn label_indices<F: Real>(model: &Model<F>, set: &[Sample<'_>]) -> Result<Vec<usize>, TrainError> {
    set.iter()
        .map(|&(_, stm)| {
            model
                .config()
                .class_index(stm)
                .ok_or(TrainError::UnknownLabel(stm))
        })
        .collect()
}

fn argmax<F: Real>(row: ndarray::ArrayView1<'_, F>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn correct<F: Real>(logits: &Array2<F>, labels: &[usize]) -> usize {
    logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, l)| argmax(row.view()) == **l)
        .count()
}

/// Eval-mode mean cross-entropy and accuracy over `set`.
pub fn evaluate<F: Real>(
    model: &Model<F>,
    set: &[Sample<'_>],
    batch_size: usize,
) -> Result<(f64, f64), TrainError> {
    if set.is_empty() {
        return Err(TrainError::EmptyValidation);
    }
    let labels = label_indices(model, set)?;
    let (mut loss, mut hits) = (0.0, 0);
    for (chunk, lab) in set.chunks(batch_size.max(1)).zip(labels.chunks(batch_size.max(1))) {
        let logits = model.logits(stack_examples(chunk.iter().map(|s| s.0)))?;
        let (l, _) = softmax_cross_entropy(&logits, lab);
        loss += l.to_f64().unwrap() * lab.len() as f64;
        hits += correct(&logits, lab);
    }
    Ok((loss / set.len() as f64, hits as f64 / set.len() as f64))
}

/// Trains `model` in place and leaves it holding the parameters of the epoch
/// with the lowest validation loss.
pub fn train<F: Real>(
    model: &mut Model<F>,
    train_set: &[Sample<'_>],
    val_set: &[Sample<'_>],
    cfg: &TrainConfig,
) -> Result<History, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptyValidation);
    }
    let train_labels = label_indices(model, train_set)?;
    label_indices(model, val_set)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = History::default();
    let mut best: Option<(f64, Model<F>)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0, 0);
        for batch in order.chunks(cfg.batch_size) {
            let x = stack_examples(batch.iter().map(|&i| train_set[i].0));
            let labels: Vec<usize> = batch.iter().map(|&i| train_labels[i]).collect();
            model.zero_grad();
            let logits = model.forward_train(x, &mut rng)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels);
            model.backward(grad);
            adam.step(model, cfg.learning_rate);
            loss_sum += loss.to_f64().unwrap() * batch.len() as f64;
            hits += correct(&logits, &labels);
        }
        let (val_loss, val_acc) = evaluate(model, val_set, cfg.batch_size)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: hits as f64 / train_set.len() as f64,
            val_loss,
            val_acc,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.3}, val loss {:.4} acc {:.3}",
            stats.train_loss,
            stats.train_acc,
            val_loss,
            val_acc
        );
        history.epochs.push(stats);

        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            model.clear_cache();
            best = Some((val_loss, model.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    if let Some((_, snapshot)) = best {
        *model = snapshot;
    }
    model.clear_cache();
    Ok(history)
}
