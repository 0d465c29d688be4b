//! Binary probe training loop: mini-batch Adam on BCE-with-logits.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::adam::Adam;
use super::metrics::{macro_f1, Metrics, MetricsError};
use super::mlp::{bce_with_logits, sigmoid, Mlp};
use crate::dataset::{CharDataset, SplitPlan, SubstringDataset};
use crate::embedding::FeatureProvider;
use crate::rng;

/// Learning-rate grid searched when tuning probes.
pub const LR_GRID: [f64; 9] = [1e-5, 3e-5, 5e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2];

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (lr {lr})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
        lr: f64,
    },
    #[error("non-finite parameter after epoch {epoch}, batch {batch}")]
    NonFiniteParameters { epoch: usize, batch: usize },
    #[error("the {0} side of the split is empty")]
    EmptySplit(&'static str),
    #[error("token {0} has no features")]
    MissingFeatures(u32),
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Candidate learning rates; empty disables tuning.
    pub lr_grid: Vec<f64>,
    /// Hidden widths; `None` means both equal the input width.
    pub hidden: Option<(usize, usize)>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 128,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            dropout: 0.1,
            seed: 0,
            lr_grid: Vec::new(),
            hidden: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::BadConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::BadConfig("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::BadConfig("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn with_lr(&self, lr: f64) -> Self {
        Self {
            learning_rate: lr,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn optimizer<F: super::mlp::Float>(&self) -> Adam<F> {
        Adam::new(self.learning_rate, self.beta1, self.beta2, self.eps, self.weight_decay)
    }
}

/// Token ids feeding one example: one for character probes, two for
/// substring pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tokens {
    ids: [u32; 2],
    len: usize,
}

impl Tokens {
    pub fn one(id: u32) -> Self {
        Self { ids: [id, 0], len: 1 }
    }

    pub fn two(a: u32, b: u32) -> Self {
        Self { ids: [a, b], len: 2 }
    }
}

impl std::ops::Deref for Tokens {
    type Target = [u32];
    fn deref(&self) -> &[u32] {
        &self.ids[..self.len]
    }
}

/// A labelled dataset whose inputs are built from per-token features.
pub trait ProbeInputs: Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn label(&self, i: usize) -> bool;
    /// Tokens whose features are concatenated to form example `i`'s input.
    fn tokens(&self, i: usize) -> Tokens;
}

impl ProbeInputs for CharDataset {
    fn len(&self) -> usize {
        self.examples.len()
    }

    fn label(&self, i: usize) -> bool {
        self.examples[i].label
    }

    fn tokens(&self, i: usize) -> Tokens {
        Tokens::one(self.examples[i].token_id)
    }
}

/// Input is `[features(u); features(v)]`.
impl ProbeInputs for SubstringDataset {
    fn len(&self) -> usize {
        self.examples.len()
    }

    fn label(&self, i: usize) -> bool {
        self.examples[i].label
    }

    fn tokens(&self, i: usize) -> Tokens {
        let e = &self.examples[i];
        Tokens::two(e.u, e.v)
    }
}

pub fn input_dim(features: &dyn FeatureProvider, data: &impl ProbeInputs) -> usize {
    let arity = if data.is_empty() { 1 } else { data.tokens(0).len() };
    features.dim() * arity
}

/// Assembles the input rows for `indices`.
pub fn gather(features: &dyn FeatureProvider, data: &impl ProbeInputs, indices: &[usize]) -> Array2<f32> {
    let d = features.dim();
    let width = input_dim(features, data);
    let mut x = Array2::<f32>::zeros((indices.len(), width));
    for (row, &i) in indices.iter().enumerate() {
        let mut r = x.row_mut(row);
        let buf = r.as_slice_mut().unwrap();
        for (k, &tok) in data.tokens(i).iter().enumerate() {
            features.write_features(tok, &mut buf[k * d..(k + 1) * d]);
        }
    }
    x
}

#[derive(Debug, Clone)]
pub struct TrainedProbe {
    pub model: Mlp<f32>,
    pub metrics: Metrics,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// (example index, predicted probability) for every test example.
    pub test_predictions: Vec<(usize, f32)>,
    pub learning_rate: f64,
}

/// Runs the model in eval mode and returns positive-class probabilities.
pub fn predict_proba(
    model: &Mlp<f32>,
    features: &dyn FeatureProvider,
    data: &impl ProbeInputs,
    indices: &[usize],
) -> Vec<f32> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(1024) {
        let x = gather(features, data, chunk);
        let logits = model.predict(x.view());
        out.extend(logits.column(0).iter().map(|&z| sigmoid(z)));
    }
    out
}

/// Trains a fresh probe on the split's train side and scores the test side.
pub fn train_binary_probe(
    features: &dyn FeatureProvider,
    data: &impl ProbeInputs,
    split: &SplitPlan,
    config: &TrainConfig,
) -> Result<TrainedProbe, TrainError> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if split.test.is_empty() {
        return Err(TrainError::EmptySplit("test"));
    }
    for &i in split.train.iter().chain(&split.test) {
        if let Some(&t) = data.tokens(i).iter().find(|&&t| !features.covers(t)) {
            return Err(TrainError::MissingFeatures(t));
        }
    }
    let d_in = input_dim(features, data);
    let (h1, h2) = config.hidden.unwrap_or((d_in, d_in));
    let mut init_rng = rng::seeded(rng::derive(config.seed, &[0x1417]));
    let mut model: Mlp<f32> = Mlp::new(d_in, h1, h2, 1, config.dropout, &mut init_rng);
    let mut train_rng = rng::seeded(rng::derive(config.seed, &[0x7EA1]));
    let mut opt = config.optimizer::<f32>();

    let mut order = split.train.clone();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut train_rng);
        let mut total = 0.0f64;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let x = gather(features, data, idx);
            let y: Vec<f32> = idx.iter().map(|&i| if data.label(i) { 1.0 } else { 0.0 }).collect();
            let cache = model.forward(x.view(), Some(&mut train_rng));
            let (loss, d_out) = bce_with_logits(cache.out.view(), &y);
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch,
                    loss: loss as f64,
                    lr: config.learning_rate,
                });
            }
            total += loss as f64 * idx.len() as f64;
            let (grads, _) = model.backward(&cache, d_out.view());
            opt.step(&mut model.tensors_mut(), &grads.tensors());
            if !model.all_finite() {
                return Err(TrainError::NonFiniteParameters { epoch, batch });
            }
        }
        epoch_losses.push(total / order.len() as f64);
    }

    let probs = predict_proba(&model, features, data, &split.test);
    let preds: Vec<bool> = probs.iter().map(|&p| p >= 0.5).collect();
    let labels: Vec<bool> = split.test.iter().map(|&i| data.label(i)).collect();
    let metrics = macro_f1(&preds, &labels)?;
    Ok(TrainedProbe {
        model,
        metrics,
        epoch_losses,
        test_predictions: split.test.iter().copied().zip(probs).collect(),
        learning_rate: config.learning_rate,
    })
}
