//! The AI classifier `f: x -> Δ^{K-1}`, pre-trained on noisy annotations and
//! frozen afterwards.
//!
//! Two recipes are supported. `PlainNoisy` fits cross-entropy to one randomly
//! chosen annotation per sample per epoch and keeps the last epoch.
//! `LnlProxy` stands in for a noise-robust learner: same labels with label
//! smoothing, and the epoch checkpoint with the best held-out agreement with
//! majority-vote labels is kept.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::consensus::{majority_vote, random_label};
use crate::numerics::{argmax, gumbel_softmax_sample, softmax, Checkpoint, Mlp, Rng, Sgd, PROB_FLOOR};
use crate::taskgen::MultiRaterDataset;
use crate::{Error, Result};

/// Default temperature used to normalize AI predictions before fusion.
pub const AI_NORM_TEMPERATURE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingRecipe {
    LnlProxy,
    PlainNoisy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// Gumbel-Softmax sample of the log-probabilities.
    Train,
    /// Deterministic temperature sharpening.
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaseTrainConfig {
    pub epochs: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Only used by `LnlProxy`.
    pub label_smoothing: f64,
    /// Held-out share used for checkpoint selection by `LnlProxy`.
    pub holdout_fraction: f64,
}

impl Default for BaseTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            hidden: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 64,
            label_smoothing: 0.1,
            holdout_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseClassifier {
    params: Mlp,
    pub recipe: TrainingRecipe,
    pub temperature: f64,
    pub num_classes: usize,
    pub dim: usize,
}

/// Per-epoch diagnostics from [`train_base`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BaseTrainReport {
    /// Held-out majority-vote accuracy after each epoch (`LnlProxy` only).
    pub heldout_accuracy: Vec<f64>,
    /// Zero-based epoch whose parameters were returned.
    pub selected_epoch: usize,
}

impl BaseClassifier {
    pub fn from_params(params: Mlp, recipe: TrainingRecipe, temperature: f64) -> Self {
        Self {
            num_classes: params.out_dim(),
            dim: params.in_dim(),
            params,
            recipe,
            temperature,
        }
    }

    pub fn params(&self) -> &Mlp {
        &self.params
    }

    pub fn predict_proba(&self, features: &[f64]) -> Result<Vec<f64>> {
        softmax(&self.params.forward(features)?, 1.0)
    }

    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        Ok(argmax(&self.params.forward(features)?))
    }

    pub fn predict_all(&self, data: &MultiRaterDataset) -> Result<Vec<Vec<f64>>> {
        data.samples.iter().map(|s| self.predict_proba(&s.features)).collect()
    }

    /// Accuracy against hidden true labels.
    pub fn accuracy(&self, data: &MultiRaterDataset) -> Result<f64> {
        let mut hits = 0usize;
        for s in &data.samples {
            let truth = s
                .true_label
                .ok_or_else(|| Error::Input(format!("sample {} has no true label", s.id)))?;
            hits += usize::from(self.predict(&s.features)? == truth);
        }
        Ok(hits as f64 / data.len().max(1) as f64)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            &self.params,
            serde_json::json!({
                "recipe": self.recipe,
                "temperature": self.temperature,
                "num_classes": self.num_classes,
                "dim": self.dim,
            }),
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let params = ck.to_mlp()?;
        let recipe = serde_json::from_value(ck.meta["recipe"].clone())?;
        let temperature = ck.meta["temperature"]
            .as_f64()
            .ok_or_else(|| Error::Input("base checkpoint lacks a temperature".into()))?;
        let out = Self::from_params(params, recipe, temperature);
        if ck.meta["num_classes"].as_u64() != Some(out.num_classes as u64)
            || ck.meta["dim"].as_u64() != Some(out.dim as u64)
        {
            return Err(Error::Input("base checkpoint metadata disagrees with its layers".into()));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Normalizes an AI probability vector before it is fused with annotations.
///
/// `Train` draws `softmax((ln p + g) / τ)` with Gumbel noise `g`; `Test`
/// returns the noiseless `softmax(ln p / τ)`, i.e. `p^{1/τ}` renormalized.
pub fn normalize_ai_prediction(
    probabilities: &[f64],
    temperature: f64,
    mode: NormalizationMode,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let logs: Vec<f64> = probabilities.iter().map(|p| p.max(PROB_FLOOR).ln()).collect();
    match mode {
        NormalizationMode::Train => Ok(gumbel_softmax_sample(&logs, temperature, rng)?.soft),
        NormalizationMode::Test => softmax(&logs, temperature),
    }
}

pub fn train_base(
    data: &MultiRaterDataset,
    recipe: TrainingRecipe,
    config: &BaseTrainConfig,
    rng: &mut Rng,
) -> Result<BaseClassifier> {
    train_base_with_report(data, recipe, config, rng).map(|(m, _)| m)
}

pub fn train_base_with_report(
    data: &MultiRaterDataset,
    recipe: TrainingRecipe,
    config: &BaseTrainConfig,
    rng: &mut Rng,
) -> Result<(BaseClassifier, BaseTrainReport)> {
    if data.is_empty() {
        return Err(Error::Input("cannot train on an empty dataset".into()));
    }
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::Parameter("epochs and batch size must be positive".into()));
    }
    let k = data.num_classes;
    let mut params = Mlp::two_layer(data.dim, config.hidden, k, rng)?;
    let mut sgd = Sgd::new(&params, config.learning_rate, config.momentum, config.weight_decay)?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    let (train_idx, holdout_idx) = match recipe {
        TrainingRecipe::PlainNoisy => (order.clone(), Vec::new()),
        TrainingRecipe::LnlProxy => {
            order.shuffle(rng);
            let n_hold = ((data.len() as f64) * config.holdout_fraction).round() as usize;
            let n_hold = n_hold.min(data.len() - 1);
            (order[n_hold..].to_vec(), order[..n_hold].to_vec())
        }
    };
    let holdout_targets = holdout_idx
        .iter()
        .map(|i| majority_vote(&data.samples[*i].annotations, k))
        .collect::<Result<Vec<_>>>()?;
    let smoothing = match recipe {
        TrainingRecipe::LnlProxy => config.label_smoothing,
        TrainingRecipe::PlainNoisy => 0.0,
    };

    let mut report = BaseTrainReport::default();
    let mut best: Option<(f64, Mlp)> = None;
    let mut order = train_idx;
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        for batch in order.chunks(config.batch_size) {
            let mut grads = Mlp::zeros_like(&params);
            for &i in batch {
                let s = &data.samples[i];
                let label = random_label(&s.annotations, rng)?;
                let trace = params.forward_traced(&s.features)?;
                let probs = softmax(trace.output(), 1.0)?;
                let upstream: Vec<f64> = probs
                    .iter()
                    .enumerate()
                    .map(|(c, p)| {
                        let target = smoothing / k as f64 + if c == label { 1.0 - smoothing } else { 0.0 };
                        p - target
                    })
                    .collect();
                params.backward(&trace, &upstream, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            sgd.step(&mut params, &grads)?;
        }
        if !holdout_idx.is_empty() {
            let mut hits = 0usize;
            for (i, t) in holdout_idx.iter().zip(&holdout_targets) {
                hits += usize::from(argmax(&params.forward(&data.samples[*i].features)?) == *t);
            }
            let acc = hits as f64 / holdout_idx.len() as f64;
            report.heldout_accuracy.push(acc);
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, params.clone()));
                report.selected_epoch = epoch;
            }
        } else {
            report.selected_epoch = epoch;
        }
    }
    let params = match best {
        Some((_, p)) => p,
        None => params,
    };
    Ok((
        BaseClassifier::from_params(params, recipe, AI_NORM_TEMPERATURE),
        report,
    ))
}
