//! Surface tempo multiple classifier.
//!
//! The network follows a short-filter front end and multi-filter (MF) module
//! design:
//!
//! ```text
//! input 1 x 40 x 400
//! 3 x (BN, Conv 16 @ 1x5, ELU, Dropout 0.1)
//! per MF module: AvgPool 5x1 (2x1 after the first),
//!                BN, parallel Conv 12 @ 1xk + ELU, Dropout 0.5, concat,
//!                Conv 16 @ 1x1 + ELU
//! AvgPool 1x400
//! BN, Dropout 0.5, Dense, Softmax
//! ```
//!
//! [`Variant`] names the ablations of that layout.

mod kernels;
pub mod layers;
pub mod train;
pub mod weights;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::MelExample;
use layers::{
    BatchNorm, ConvTime, Dense, Dropout, Elu, Layer, Module, MultiConv, Param, PoolFreq,
    PoolTime, Real, softmax,
};

pub use train::{History, TrainConfig, TrainError, train};
pub use weights::{WeightsError, load_weights, save_weights};

/// s.t.m. classes of the mixture and percussion models.
pub const FULL_CLASSES: [u32; 5] = [1, 2, 4, 8, 16];
/// s.t.m. classes of the vocal model.
pub const VOCAL_CLASSES: [u32; 4] = [1, 2, 4, 8];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("expected input {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
}

/// Architecture description. Serialised canonically to fingerprint weight
/// files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// s.t.m. value of each output, ascending.
    pub classes: Vec<u32>,
    pub n_mels: usize,
    pub n_frames: usize,
    pub n_short_layers: usize,
    pub short_filters: usize,
    pub short_kernel: usize,
    pub n_mf_modules: usize,
    pub mf_kernel_lens: Vec<usize>,
    pub mf_filters: usize,
    pub mf_out_filters: usize,
    pub first_pool: usize,
    pub later_pool: usize,
    pub early_dropout: bool,
    pub final_avgpool: bool,
    pub dropout_p_early: f64,
    pub dropout_p_late: f64,
}

/// Architecture variants: kernel set {4,6,8,12} (1) or {16,32,64,96} (2)
/// with one (a) or three (b) MF modules; 3 drops the early dropout and 4 the
/// final time pooling of 2.a.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    V1a,
    V1b,
    V2a,
    V2b,
    V3,
    V4,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::V1a,
        Variant::V1b,
        Variant::V2a,
        Variant::V2b,
        Variant::V3,
        Variant::V4,
    ];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::V1a => "1.a",
            Variant::V1b => "1.b",
            Variant::V2a => "2.a",
            Variant::V2b => "2.b",
            Variant::V3 => "3",
            Variant::V4 => "4",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('.', "").as_str() {
            "1a" => Ok(Variant::V1a),
            "1b" => Ok(Variant::V1b),
            "2a" => Ok(Variant::V2a),
            "2b" => Ok(Variant::V2b),
            "3" => Ok(Variant::V3),
            "4" => Ok(Variant::V4),
            _ => Err(ModelError::InvalidConfig(format!("unknown variant {s:?}"))),
        }
    }
}

impl ModelConfig {
    /// The proposed architecture (variant 2.a) for the given class set.
    pub fn new(classes: &[u32]) -> Self {
        Self::variant(Variant::V2a, classes)
    }

    pub fn variant(variant: Variant, classes: &[u32]) -> Self {
        let mut cfg = Self {
            classes: classes.to_vec(),
            n_mels: 40,
            n_frames: crate::features::EXAMPLE_FRAMES,
            n_short_layers: 3,
            short_filters: 16,
            short_kernel: 5,
            n_mf_modules: 1,
            mf_kernel_lens: vec![16, 32, 64, 96],
            mf_filters: 12,
            mf_out_filters: 16,
            first_pool: 5,
            later_pool: 2,
            early_dropout: true,
            final_avgpool: true,
            dropout_p_early: 0.1,
            dropout_p_late: 0.5,
        };
        match variant {
            Variant::V1a | Variant::V1b => cfg.mf_kernel_lens = vec![4, 6, 8, 12],
            _ => {}
        }
        match variant {
            Variant::V1b | Variant::V2b => cfg.n_mf_modules = 3,
            Variant::V3 => cfg.early_dropout = false,
            Variant::V4 => cfg.final_avgpool = false,
            _ => {}
        }
        cfg
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Frequency rows left after the MF module poolings.
    pub fn pooled_rows(&self) -> usize {
        let mut rows = self.n_mels;
        for m in 0..self.n_mf_modules {
            rows /= if m == 0 { self.first_pool } else { self.later_pool };
        }
        rows
    }

    /// Length of the flattened feature vector entering the dense layer.
    pub fn dense_inputs(&self) -> usize {
        let time = if self.final_avgpool { 1 } else { self.n_frames };
        self.mf_out_filters * self.pooled_rows() * time
    }

    pub fn class_index(&self, stm: u32) -> Option<usize> {
        self.classes.iter().position(|&c| c == stm)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if !(4..=5).contains(&self.classes.len()) {
            return bad(format!("expected 4 or 5 classes, got {}", self.classes.len()));
        }
        if self.classes.windows(2).any(|w| w[0] >= w[1]) || self.classes[0] == 0 {
            return bad("classes must be positive and strictly ascending".into());
        }
        if self.mf_kernel_lens.is_empty()
            || self.mf_kernel_lens[0] == 0
            || self.mf_kernel_lens.windows(2).any(|w| w[0] >= w[1])
        {
            return bad("MF kernel lengths must be positive and ascending".into());
        }
        if self.n_mf_modules == 0 || self.first_pool == 0 || self.later_pool == 0 {
            return bad("need at least one MF module and non-zero pool sizes".into());
        }
        if self.n_mels == 0 || self.n_frames == 0 || self.short_kernel == 0 {
            return bad("input and kernel sizes must be positive".into());
        }
        if self.pooled_rows() == 0 {
            return bad(format!(
                "{} MF modules pool the {} frequency rows down to nothing",
                self.n_mf_modules, self.n_mels
            ));
        }
        for p in [self.dropout_p_early, self.dropout_p_late] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("dropout rate {p} outside [0, 1)"));
            }
        }
        Ok(())
    }

    /// Canonical serialisation used for the architecture fingerprint.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }
}

/// Whether dropout and batch statistics are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A sequential network built from a [`ModelConfig`].
#[derive(Debug, Clone)]
pub struct Model<F = f32> {
    config: ModelConfig,
    pub layers: Vec<Layer<F>>,
}

/// Builds the layer stack for `cfg` with Kaiming-uniform weights drawn from
/// `seed`.
pub fn build_model<F: Real>(cfg: &ModelConfig, seed: u64) -> Result<Model<F>, ModelError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut channels = 1;
    for _ in 0..cfg.n_short_layers {
        layers.push(Layer::BatchNorm(BatchNorm::new(channels)));
        layers.push(Layer::Conv(ConvTime::new(
            channels,
            cfg.short_filters,
            cfg.short_kernel,
            &mut rng,
        )));
        layers.push(Layer::Elu(Elu::new()));
        if cfg.early_dropout {
            layers.push(Layer::Dropout(Dropout::new(cfg.dropout_p_early)));
        }
        channels = cfg.short_filters;
    }
    for m in 0..cfg.n_mf_modules {
        let pool = if m == 0 { cfg.first_pool } else { cfg.later_pool };
        layers.push(Layer::PoolFreq(PoolFreq::new(pool)));
        layers.push(Layer::BatchNorm(BatchNorm::new(channels)));
        layers.push(Layer::MultiConv(MultiConv::new(
            channels,
            cfg.mf_filters,
            &cfg.mf_kernel_lens,
            &mut rng,
        )));
        layers.push(Layer::Elu(Elu::new()));
        layers.push(Layer::Dropout(Dropout::new(cfg.dropout_p_late)));
        layers.push(Layer::Conv(ConvTime::new(
            cfg.mf_filters * cfg.mf_kernel_lens.len(),
            cfg.mf_out_filters,
            1,
            &mut rng,
        )));
        layers.push(Layer::Elu(Elu::new()));
        channels = cfg.mf_out_filters;
    }
    if cfg.final_avgpool {
        layers.push(Layer::PoolTime(PoolTime::new(cfg.n_frames)));
    }
    layers.push(Layer::BatchNorm(BatchNorm::new(channels)));
    layers.push(Layer::Dropout(Dropout::new(cfg.dropout_p_late)));
    layers.push(Layer::Dense(Dense::new(
        cfg.dense_inputs(),
        cfg.n_classes(),
        &mut rng,
    )));
    Ok(Model {
        config: cfg.clone(),
        layers,
    })
}

impl<F: Real> Model<F> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }

    pub fn classes(&self) -> &[u32] {
        &self.config.classes
    }

    /// Number of trainable scalars (weights, biases, batch-norm scale and
    /// shift; running statistics excluded).
    pub fn num_trainable(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// `(layer name, trainable count)` for every layer with parameters.
    pub fn param_table(&self) -> Vec<(String, usize)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                let n: usize = l.params().iter().map(|p| p.len()).sum();
                (n > 0).then(|| (format!("{i:02}.{}", l.kind()), n))
            })
            .collect()
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(Module::clear_cache);
    }

    fn check_input(&self, x: &Array4<F>) -> Result<(), ModelError> {
        let (_, c, h, w) = x.dim();
        let expected = (self.config.n_mels, self.config.n_frames);
        if c != 1 || (h, w) != expected {
            return Err(ModelError::ShapeMismatch {
                expected,
                got: (h, w),
            });
        }
        Ok(())
    }

    /// Training-mode logits for a `[batch, 1, mels, frames]` input; keeps the
    /// caches needed by [`Model::backward`].
    pub fn forward_train<R: Rng>(
        &mut self,
        x: Array4<F>,
        rng: &mut R,
    ) -> Result<Array2<F>, ModelError> {
        self.check_input(&x)?;
        let out = self
            .layers
            .iter_mut()
            .fold(x, |h, layer| layer.forward_train(h, rng));
        Ok(flatten_logits(out))
    }

    /// Back-propagates logit gradients, accumulating parameter gradients.
    pub fn backward(&mut self, dlogits: Array2<F>) {
        let (n, k) = dlogits.dim();
        let g = dlogits
            .into_shape_with_order((n, k, 1, 1))
            .expect("logit grad");
        self.layers
            .iter_mut()
            .rev()
            .fold(g, |g, layer| layer.backward(g));
    }

    /// Evaluation-mode logits.
    pub fn logits(&self, x: Array4<F>) -> Result<Array2<F>, ModelError> {
        self.check_input(&x)?;
        let out = self.layers.iter().fold(x, |h, layer| layer.forward_eval(h));
        Ok(flatten_logits(out))
    }

    /// Evaluation-mode class probabilities, one row per input.
    pub fn predict_proba(&self, x: Array4<F>) -> Result<Array2<F>, ModelError> {
        Ok(softmax(&self.logits(x)?))
    }

    /// Class probabilities for one example.
    pub fn forward<R: Rng>(
        &mut self,
        x: &MelExample,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Vec<F>, ModelError> {
        let batch = stack_examples::<F>(std::iter::once(x));
        let logits = match mode {
            Mode::Eval => self.logits(batch)?,
            Mode::Train => {
                let l = self.forward_train(batch, rng)?;
                self.clear_cache();
                l
            }
        };
        Ok(softmax(&logits).row(0).to_vec())
    }

    /// Evaluation-mode probabilities for a slice of examples, batched.
    pub fn predict_examples<'a, I>(&self, examples: I, batch: usize) -> Result<Array2<F>, ModelError>
    where
        I: IntoIterator<Item = &'a MelExample>,
    {
        let all: Vec<&MelExample> = examples.into_iter().collect();
        let mut rows = Array2::zeros((all.len(), self.config.n_classes()));
        for (chunk_idx, chunk) in all.chunks(batch.max(1)).enumerate() {
            let probs = self.predict_proba(stack_examples(chunk.iter().copied()))?;
            let start = chunk_idx * batch.max(1);
            rows.slice_mut(ndarray::s![start..start + chunk.len(), ..])
                .assign(&probs);
        }
        Ok(rows)
    }

    pub(crate) fn tensors(&self) -> Vec<(String, ndarray::ArrayViewD<'_, F>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                let kind = l.kind();
                l.tensors()
                    .into_iter()
                    .map(move |(name, t)| (format!("{i:02}.{kind}.{name}"), t))
            })
            .collect()
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<(String, ndarray::ArrayViewMutD<'_, F>)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                let kind = l.kind();
                l.tensors_mut()
                    .into_iter()
                    .map(move |(name, t)| (format!("{i:02}.{kind}.{name}"), t))
            })
            .collect()
    }
}

fn flatten_logits<F: Real>(out: Array4<F>) -> Array2<F> {
    let (n, k, _, _) = out.dim();
    out.into_shape_with_order((n, k)).expect("logits are [batch, classes, 1, 1]")
}

/// Stacks examples into a `[batch, 1, mels, frames]` tensor.
pub fn stack_examples<'a, F: Real>(examples: impl IntoIterator<Item = &'a MelExample>) -> Array4<F> {
    let views: Vec<_> = examples.into_iter().map(|e| e.values.view()).collect();
    assert!(!views.is_empty(), "empty batch");
    let (h, w) = views[0].dim();
    let mut out = Array4::zeros((views.len(), 1, h, w));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(views) {
        dst.index_axis_mut(Axis(0), 0)
            .zip_mut_with(&src, |d, &s| *d = F::of(s as f64));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts_per_variant() {
        let expected = [
            (Variant::V1a, 10_055),
            (Variant::V1b, 22_823),
            (Variant::V2a, 44_231),
            (Variant::V2b, 125_351),
            (Variant::V3, 44_231),
            (Variant::V4, 299_591),
        ];
        for (v, count) in expected {
            let m = build_model::<f32>(&ModelConfig::variant(v, &FULL_CLASSES), 0).unwrap();
            assert_eq!(m.num_trainable(), count, "variant {v}");
        }
        // Vocal head: four outputs instead of five, 129 fewer dense weights.
        let vocal = build_model::<f32>(&ModelConfig::new(&VOCAL_CLASSES), 0).unwrap();
        assert_eq!(vocal.num_trainable(), 44_231 - 129);
    }

    #[test]
    fn per_layer_table_of_the_proposed_model() {
        let m = build_model::<f32>(&ModelConfig::new(&FULL_CLASSES), 0).unwrap();
        let counts: Vec<usize> = m.param_table().into_iter().map(|(_, n)| n).collect();
        assert_eq!(counts, vec![2, 96, 32, 1296, 32, 1296, 32, 39_984, 784, 32, 645]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ModelConfig::new(&FULL_CLASSES);
        cfg.n_mf_modules = 6;
        assert!(build_model::<f32>(&cfg, 0).is_err());
        let mut cfg = ModelConfig::new(&FULL_CLASSES);
        cfg.mf_kernel_lens = vec![32, 16];
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::new(&[1, 2, 4]).validate().is_err());
        assert!(ModelConfig::new(&[1, 4, 2, 8]).validate().is_err());
    }

    #[test]
    fn variant_names_parse() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("5".parse::<Variant>().is_err());
    }

    #[test]
    fn eval_outputs_are_probabilities_and_deterministic() {
        let m = build_model::<f32>(&ModelConfig::new(&FULL_CLASSES), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ex = MelExample {
            values: Array2::from_shape_fn((40, 400), |_| rng.random::<f32>()),
        };
        let a = m.predict_examples([&ex, &ex], 2).unwrap();
        assert_eq!(a.row(0), a.row(1));
        let sum: f32 = a.row(0).sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(a.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn wrong_input_shape_is_an_error() {
        let m = build_model::<f32>(&ModelConfig::new(&FULL_CLASSES), 1).unwrap();
        let err = m.predict_proba(Array4::zeros((1, 1, 40, 399))).unwrap_err();
        assert!(matches!(err, ModelError::ShapeMismatch { .. }));
    }
}
