//! Selection and collaboration modules, the cost-weighted training objective,
//! and test-time inference.
//!
//! Modes are indexed `0..2M+1`: index 0 is the AI alone, `1..=M` the AI
//! complemented by `k` users, `M+1..=2M` deferral to `k` users. The
//! collaboration module always sees `M + 1` blocks of width `K`: the
//! (normalized) AI prediction followed by `M` user blocks. Unused blocks are
//! zero, and deferral zeroes the AI block.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::basemodel::{normalize_ai_prediction, BaseClassifier, NormalizationMode, AI_NORM_TEMPERATURE};
use crate::consensus::ConsensusDataset;
use crate::numerics::{
    argmax, cross_entropy_index, gumbel_softmax_with_noise, softmax, softmax_backward, Mlp, MlpGrads, Rng, Sgd,
};
use crate::{Error, Result};

/// Default Gumbel-Softmax temperature of the selection module.
pub const SELECTION_TEMPERATURE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum CollaborationMode {
    AiAlone,
    /// AI prediction plus `k` user annotations.
    Complement(usize),
    /// `k` user annotations only.
    Defer(usize),
}

impl CollaborationMode {
    pub fn count(m: usize) -> usize {
        2 * m + 1
    }

    /// All modes in index order.
    pub fn all(m: usize) -> Vec<Self> {
        (0..Self::count(m))
            .map(|j| Self::from_index(j, m).expect("index in range"))
            .collect()
    }

    pub fn from_index(index: usize, m: usize) -> Result<Self> {
        match index {
            0 => Ok(Self::AiAlone),
            j if j <= m => Ok(Self::Complement(j)),
            j if j <= 2 * m => Ok(Self::Defer(j - m)),
            j => Err(Error::Parameter(format!("mode index {j} outside 0..{}", 2 * m + 1))),
        }
    }

    pub fn index(self, m: usize) -> usize {
        match self {
            Self::AiAlone => 0,
            Self::Complement(k) => k,
            Self::Defer(k) => m + k,
        }
    }

    /// Number of user annotations consumed.
    pub fn users(self) -> usize {
        match self {
            Self::AiAlone => 0,
            Self::Complement(k) | Self::Defer(k) => k,
        }
    }

    pub fn cost(self) -> usize {
        self.users()
    }

    pub fn uses_ai(self) -> bool {
        !matches!(self, Self::Defer(_))
    }

    pub fn validate(self, m: usize) -> Result<()> {
        match self {
            Self::Complement(k) | Self::Defer(k) if k == 0 || k > m => Err(Error::Parameter(format!(
                "mode {self} needs {k} users but the pool has {m}"
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for CollaborationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::AiAlone => write!(f, "ai"),
            Self::Complement(k) => write!(f, "ai+{k}"),
            Self::Defer(k) => write!(f, "defer{k}"),
        }
    }
}

impl FromStr for CollaborationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Input(format!("unknown collaboration mode {s:?}"));
        if s == "ai" {
            Ok(Self::AiAlone)
        } else if let Some(k) = s.strip_prefix("ai+") {
            Ok(Self::Complement(k.parse().map_err(|_| bad())?))
        } else if let Some(k) = s.strip_prefix("defer") {
            Ok(Self::Defer(k.parse().map_err(|_| bad())?))
        } else {
            Err(bad())
        }
    }
}

impl From<CollaborationMode> for String {
    fn from(m: CollaborationMode) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for CollaborationMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Per-mode label cost `[0, 1, .., M, 1, .., M]`.
pub fn mode_costs(m: usize) -> Vec<f64> {
    CollaborationMode::all(m).iter().map(|c| c.cost() as f64).collect()
}

/// `Σ_j g_j · cost(j)` for a distribution over the `2M + 1` modes.
pub fn expected_cost(selection_probs: &[f64]) -> Result<f64> {
    let n = selection_probs.len();
    if n % 2 == 0 {
        return Err(Error::Shape(format!("{n} selection entries is not 2M + 1")));
    }
    Ok(selection_probs
        .iter()
        .zip(mode_costs(n / 2))
        .map(|(g, c)| g * c)
        .sum())
}

/// Uniform random permutation of the annotations.
pub fn shuffle_annotations(annotations: &[usize], rng: &mut Rng) -> Vec<usize> {
    let mut out = annotations.to_vec();
    out.shuffle(rng);
    out
}

/// Builds the `(M + 1)·K` fusion input for `mode`.
///
/// `annotations` holds the (already shuffled) user labels as class indices;
/// at least `mode.users()` and at most `m` of them must be present. Only the
/// first `mode.users()` are placed.
pub fn assemble_input(
    mode: CollaborationMode,
    ai_prediction: &[f64],
    annotations: &[usize],
    m: usize,
) -> Result<Vec<f64>> {
    mode.validate(m)?;
    let k = ai_prediction.len();
    let users = mode.users();
    if annotations.len() < users || annotations.len() > m {
        return Err(Error::Shape(format!(
            "mode {mode} needs {users} of at most {m} annotations, got {}",
            annotations.len()
        )));
    }
    let mut out = vec![0.0; (m + 1) * k];
    if mode.uses_ai() {
        out[..k].copy_from_slice(ai_prediction);
    }
    for (slot, label) in annotations.iter().take(users).enumerate() {
        if *label >= k {
            return Err(Error::Input(format!("annotation {label} outside {k} classes")));
        }
        out[(slot + 1) * k + label] = 1.0;
    }
    Ok(out)
}

/// `g_φ`: features to logits over the `2M + 1` modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionModule {
    pub params: Mlp,
    pub gumbel_temperature: f64,
}

impl SelectionModule {
    pub fn new(dim: usize, hidden: usize, m: usize, gumbel_temperature: f64, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            params: Mlp::two_layer(dim, hidden, CollaborationMode::count(m), rng)?,
            gumbel_temperature,
        })
    }

    /// A selector that always picks `mode` (zero weights, one large bias).
    pub fn constant(dim: usize, m: usize, mode: CollaborationMode) -> Result<Self> {
        mode.validate(m)?;
        let mut rng = Rng::seeded(0);
        let mut params = Mlp::two_layer(dim, 1, CollaborationMode::count(m), &mut rng)?;
        params.fill(0.0);
        let last = params.layers_mut().len() - 1;
        params.layers_mut()[last].bias[mode.index(m)] = 1e3;
        Ok(Self {
            params,
            gumbel_temperature: SELECTION_TEMPERATURE,
        })
    }

    pub fn m(&self) -> usize {
        self.params.out_dim() / 2
    }

    pub fn probabilities(&self, features: &[f64]) -> Result<Vec<f64>> {
        softmax(&self.params.forward(features)?, 1.0)
    }
}

/// `h_ψ`: assembled `(M + 1)·K` input to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct CollaborationModule {
    pub params: Mlp,
}

impl CollaborationModule {
    pub fn new(num_classes: usize, m: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            params: Mlp::two_layer((m + 1) * num_classes, hidden, num_classes, rng)?,
        })
    }

    pub fn probabilities(&self, input: &[f64]) -> Result<Vec<f64>> {
        softmax(&self.params.forward(input)?, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LecoduModel {
    pub base: BaseClassifier,
    pub selector: SelectionModule,
    pub collaborator: CollaborationModule,
    pub m: usize,
    pub ai_norm_temperature: f64,
}

impl LecoduModel {
    pub fn new(
        base: BaseClassifier,
        selector: SelectionModule,
        collaborator: CollaborationModule,
        m: usize,
        ai_norm_temperature: f64,
    ) -> Result<Self> {
        let k = base.num_classes;
        if selector.params.in_dim() != base.dim {
            return Err(Error::Shape(format!(
                "selector reads {} features, base reads {}",
                selector.params.in_dim(),
                base.dim
            )));
        }
        if selector.params.out_dim() != CollaborationMode::count(m) {
            return Err(Error::Shape(format!(
                "selector emits {} logits, expected {}",
                selector.params.out_dim(),
                CollaborationMode::count(m)
            )));
        }
        if collaborator.params.in_dim() != (m + 1) * k || collaborator.params.out_dim() != k {
            return Err(Error::Shape(format!(
                "collaborator must map {} inputs to {k} classes",
                (m + 1) * k
            )));
        }
        Ok(Self {
            base,
            selector,
            collaborator,
            m,
            ai_norm_temperature,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.base.num_classes
    }

    pub fn dim(&self) -> usize {
        self.base.dim
    }

    /// Noiseless mode choice: argmax of the selection softmax.
    pub fn select(&self, features: &[f64]) -> Result<(CollaborationMode, Vec<f64>)> {
        let probs = self.selector.probabilities(features)?;
        Ok((CollaborationMode::from_index(argmax(&probs), self.m)?, probs))
    }

    /// Final label given the mode and the user labels it requires.
    pub fn fuse(&self, features: &[f64], mode: CollaborationMode, labels: &[usize]) -> Result<usize> {
        let ai = self.base.predict_proba(features)?;
        if mode == CollaborationMode::AiAlone {
            return Ok(argmax(&ai));
        }
        let normalized = normalize_ai_prediction(
            &ai,
            self.ai_norm_temperature,
            NormalizationMode::Test,
            &mut Rng::seeded(0),
        )?;
        let input = assemble_input(mode, &normalized, labels, self.m)?;
        Ok(argmax(&self.collaborator.probabilities(&input)?))
    }
}

/// Cross-entropy against the consensus label plus `λ` times the expected cost.
pub fn loss(final_probs: &[f64], target: usize, selection_soft: &[f64], lambda: f64) -> Result<f64> {
    if target >= final_probs.len() {
        return Err(Error::Input(format!("target {target} outside {} classes", final_probs.len())));
    }
    Ok(cross_entropy_index(target, final_probs) + lambda * expected_cost(selection_soft)?)
}

/// Fully specified stochastic inputs of one training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDraw {
    /// Normalized AI prediction fed to the AI block.
    pub ai_input: Vec<f64>,
    /// Shuffled annotations.
    pub annotations: Vec<usize>,
    /// Gumbel noise for the `2M + 1` selection logits.
    pub selection_noise: Vec<f64>,
}

impl SampleDraw {
    pub fn draw(
        model: &LecoduModel,
        ai_probs: &[f64],
        annotations: &[usize],
        ai_mode: NormalizationMode,
        rng: &mut Rng,
    ) -> Result<Self> {
        let ai_input = normalize_ai_prediction(ai_probs, model.ai_norm_temperature, ai_mode, rng)?;
        let annotations = shuffle_annotations(annotations, rng);
        let selection_noise = (0..CollaborationMode::count(model.m)).map(|_| rng.gumbel()).collect();
        Ok(Self {
            ai_input,
            annotations,
            selection_noise,
        })
    }
}

/// Forward values of one training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainForward {
    pub final_probs: Vec<f64>,
    pub selection_soft: Vec<f64>,
    pub mode: CollaborationMode,
    pub collaboration_input: Vec<f64>,
    pub loss: f64,
}

/// Training-time forward pass with fresh randomness drawn from `rng`.
pub fn forward_train(
    model: &LecoduModel,
    features: &[f64],
    annotations: &[usize],
    target: usize,
    lambda: f64,
    rng: &mut Rng,
) -> Result<TrainForward> {
    let ai = model.base.predict_proba(features)?;
    let draw = SampleDraw::draw(model, &ai, annotations, NormalizationMode::Train, rng)?;
    forward_with_draw(model, features, &draw, target, lambda, None)
}

/// Frozen forward values of the straight-through estimator: the hard sample
/// and the soft sample it was detached from.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenSelection {
    pub hard: Vec<f64>,
    pub soft: Vec<f64>,
}

/// Forward pass for a fixed draw.
///
/// With `frozen = None` the collaboration input is the assembly of the hard
/// Gumbel sample. With `frozen = Some(f)` it is
/// `Σ_j (f.hard_j − f.soft_j + soft_j)·a_j`, the straight-through surrogate
/// whose exact gradient at the frozen point is the estimator used in
/// training. The two agree in value whenever `f` comes from the same
/// parameters.
pub fn forward_with_draw(
    model: &LecoduModel,
    features: &[f64],
    draw: &SampleDraw,
    target: usize,
    lambda: f64,
    frozen: Option<&FrozenSelection>,
) -> Result<TrainForward> {
    let logits = model.selector.params.forward(features)?;
    let sample = gumbel_softmax_with_noise(&logits, &draw.selection_noise, model.selector.gumbel_temperature)?;
    let mode = CollaborationMode::from_index(sample.index, model.m)?;
    let collaboration_input = match frozen {
        None => assemble_input(mode, &draw.ai_input, &draw.annotations, model.m)?,
        Some(f) => {
            let mut acc = vec![0.0; (model.m + 1) * model.num_classes()];
            for (j, c) in CollaborationMode::all(model.m).into_iter().enumerate() {
                let w = f.hard[j] - f.soft[j] + sample.soft[j];
                let a = assemble_input(c, &draw.ai_input, &draw.annotations, model.m)?;
                acc.iter_mut().zip(&a).for_each(|(x, y)| *x += w * y);
            }
            acc
        }
    };
    let final_probs = model.collaborator.probabilities(&collaboration_input)?;
    let loss = loss(&final_probs, target, &sample.soft, lambda)?;
    Ok(TrainForward {
        final_probs,
        selection_soft: sample.soft,
        mode,
        collaboration_input,
        loss,
    })
}

/// Loss of one sample and its straight-through gradients, accumulated into
/// `selector_grads` and `collaborator_grads`.
pub fn accumulate_gradients(
    model: &LecoduModel,
    features: &[f64],
    draw: &SampleDraw,
    target: usize,
    lambda: f64,
    selector_grads: &mut MlpGrads,
    collaborator_grads: &mut MlpGrads,
) -> Result<TrainForward> {
    let m = model.m;
    let k = model.num_classes();
    let tau = model.selector.gumbel_temperature;
    let sel_trace = model.selector.params.forward_traced(features)?;
    let sample = gumbel_softmax_with_noise(sel_trace.output(), &draw.selection_noise, tau)?;
    let mode = CollaborationMode::from_index(sample.index, m)?;
    let input = assemble_input(mode, &draw.ai_input, &draw.annotations, m)?;

    let col_trace = model.collaborator.params.forward_traced(&input)?;
    let final_probs = softmax(col_trace.output(), 1.0)?;
    let loss = loss(&final_probs, target, &sample.soft, lambda)?;

    let mut d_logits = final_probs.clone();
    d_logits[target] -= 1.0;
    let d_input = model
        .collaborator
        .params
        .backward(&col_trace, &d_logits, collaborator_grads)?;

    // ⟨d_input, a_j⟩ for every mode from the block-wise contributions.
    let ai_term: f64 = d_input[..k].iter().zip(&draw.ai_input).map(|(d, a)| d * a).sum();
    let mut user_prefix = vec![0.0; m + 1];
    for slot in 0..m {
        let label = draw.annotations[slot];
        user_prefix[slot + 1] = user_prefix[slot] + d_input[(slot + 1) * k + label];
    }
    let costs = mode_costs(m);
    let d_soft: Vec<f64> = CollaborationMode::all(m)
        .into_iter()
        .zip(&costs)
        .map(|(c, cost)| {
            let through_input = match c {
                CollaborationMode::AiAlone => ai_term,
                CollaborationMode::Complement(u) => ai_term + user_prefix[u],
                CollaborationMode::Defer(u) => user_prefix[u],
            };
            through_input + lambda * cost
        })
        .collect();
    let d_sel_logits = softmax_backward(&sample.soft, &d_soft, tau);
    model
        .selector
        .params
        .backward(&sel_trace, &d_sel_logits, selector_grads)?;

    Ok(TrainForward {
        final_probs,
        selection_soft: sample.soft,
        mode,
        collaboration_input: input,
        loss,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub selection_temperature: f64,
    pub ai_norm_temperature: f64,
    /// How AI predictions are normalized during training; inference always
    /// uses the deterministic sharpening.
    pub train_ai_normalization: NormalizationMode,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            epochs: 200,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 128,
            selection_temperature: SELECTION_TEMPERATURE,
            ai_norm_temperature: AI_NORM_TEMPERATURE,
            train_ai_normalization: NormalizationMode::Train,
            hidden: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("selection_temperature", self.selection_temperature),
            ("ai_norm_temperature", self.ai_norm_temperature),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Parameter(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::Parameter("epochs, batch_size and hidden must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Parameter("momentum must lie in [0, 1) and weight decay be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainReport {
    pub mean_loss: Vec<f64>,
    /// Mean soft (expected) cost per sample.
    pub mean_expected_cost: Vec<f64>,
    /// Mean cost of the sampled hard modes per sample.
    pub mean_sampled_cost: Vec<f64>,
}

pub fn train_lecodu(data: &ConsensusDataset, base: &BaseClassifier, config: &TrainConfig) -> Result<LecoduModel> {
    train_lecodu_with_report(data, base, config).map(|(m, _)| m)
}

/// Jointly trains the selection and collaboration modules by mini-batch SGD;
/// the base classifier stays frozen. Every sample gets a fresh annotation
/// shuffle, AI normalization draw and Gumbel noise each epoch.
pub fn train_lecodu_with_report(
    data: &ConsensusDataset,
    base: &BaseClassifier,
    config: &TrainConfig,
) -> Result<(LecoduModel, TrainReport)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Input("consensus training set is empty".into()));
    }
    if data.num_classes != base.num_classes || data.dim != base.dim {
        return Err(Error::Shape("training data and base classifier disagree on shape".into()));
    }
    if data.m == 0 {
        return Err(Error::Input("training samples carry no annotations".into()));
    }
    let mut rng = Rng::seeded(config.seed);
    let selector = SelectionModule::new(data.dim, config.hidden, data.m, config.selection_temperature, &mut rng)?;
    let collaborator = CollaborationModule::new(data.num_classes, data.m, config.hidden, &mut rng)?;
    let mut model = LecoduModel::new(base.clone(), selector, collaborator, data.m, config.ai_norm_temperature)?;

    let ai_probs = data
        .samples
        .iter()
        .map(|s| base.predict_proba(&s.features))
        .collect::<Result<Vec<_>>>()?;

    let mut sel_opt = Sgd::new(&model.selector.params, config.learning_rate, config.momentum, config.weight_decay)?;
    let mut col_opt = Sgd::new(
        &model.collaborator.params,
        config.learning_rate,
        config.momentum,
        config.weight_decay,
    )?;
    let mut sel_grads = Mlp::zeros_like(&model.selector.params);
    let mut col_grads = Mlp::zeros_like(&model.collaborator.params);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();

    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut soft_cost, mut hard_cost) = (0.0, 0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            sel_grads.fill(0.0);
            col_grads.fill(0.0);
            for &i in batch {
                let s = &data.samples[i];
                if s.annotations.len() != data.m {
                    return Err(Error::Input(format!("sample {} lacks {} annotations", s.id, data.m)));
                }
                let draw = SampleDraw::draw(&model, &ai_probs[i], &s.annotations, config.train_ai_normalization, &mut rng)?;
                let out = accumulate_gradients(
                    &model,
                    &s.features,
                    &draw,
                    s.label,
                    config.lambda,
                    &mut sel_grads,
                    &mut col_grads,
                )?;
                loss_sum += out.loss;
                soft_cost += expected_cost(&out.selection_soft)?;
                hard_cost += out.mode.cost() as f64;
            }
            let scale = 1.0 / batch.len() as f64;
            sel_grads.scale(scale);
            col_grads.scale(scale);
            sel_opt.step(&mut model.selector.params, &sel_grads)?;
            col_opt.step(&mut model.collaborator.params, &col_grads)?;
        }
        let n = data.len() as f64;
        report.mean_loss.push(loss_sum / n);
        report.mean_expected_cost.push(soft_cost / n);
        report.mean_sampled_cost.push(hard_cost / n);
    }
    Ok((model, report))
}

/// Supplies user labels on demand at inference time.
pub trait AnnotationProvider {
    /// Returns exactly `count` labels for `sample_id`.
    fn request_labels(&mut self, sample_id: u64, count: usize) -> Result<Vec<usize>>;
}

/// Serves recorded annotations. Each sample's annotations are shuffled with
/// a stream derived from `(seed, sample_id)`, so the answer does not depend
/// on the order in which samples are visited.
#[derive(Debug, Clone)]
pub struct RecordedProvider {
    pool: HashMap<u64, Vec<usize>>,
    seed: u64,
    requested: usize,
}

impl RecordedProvider {
    pub fn new<I>(annotations: I, seed: u64) -> Self
    where
        I: IntoIterator<Item = (u64, Vec<usize>)>,
    {
        Self {
            pool: annotations.into_iter().collect(),
            seed,
            requested: 0,
        }
    }

    pub fn from_dataset(data: &crate::taskgen::MultiRaterDataset, seed: u64) -> Self {
        Self::new(data.samples.iter().map(|s| (s.id, s.annotations.clone())), seed)
    }

    /// Shuffled annotation order for `sample_id`.
    pub fn shuffled(&self, sample_id: u64) -> Option<Vec<usize>> {
        let labels = self.pool.get(&sample_id)?;
        Some(shuffle_annotations(labels, &mut Rng::derived(self.seed, sample_id)))
    }

    /// Total number of labels handed out so far.
    pub fn requested(&self) -> usize {
        self.requested
    }
}

impl AnnotationProvider for RecordedProvider {
    fn request_labels(&mut self, sample_id: u64, count: usize) -> Result<Vec<usize>> {
        let shuffled = self.shuffled(sample_id).ok_or_else(|| Error::Provider {
            sample_id,
            message: "no recorded annotations".into(),
        })?;
        if count > shuffled.len() {
            return Err(Error::Provider {
                sample_id,
                message: format!("{count} labels requested, {} recorded", shuffled.len()),
            });
        }
        self.requested += count;
        Ok(shuffled[..count].to_vec())
    }
}

/// One row of an inference log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceTrace {
    pub id: u64,
    pub human_labels: Vec<usize>,
    pub ai_prediction: usize,
    pub selection_probs: Vec<f64>,
    pub mode: CollaborationMode,
    pub system_prediction: usize,
    pub labels_consumed: usize,
    pub true_label: Option<usize>,
}

/// Test-time prediction: noiseless mode choice, then exactly the labels the
/// mode needs are requested from `provider`.
pub fn infer<P: AnnotationProvider + ?Sized>(
    model: &LecoduModel,
    sample_id: u64,
    features: &[f64],
    provider: &mut P,
) -> Result<InferenceTrace> {
    let (mode, selection_probs) = model.select(features)?;
    let ai_prediction = model.base.predict(features)?;
    let users = mode.users();
    let human_labels = if users > 0 {
        let labels = provider.request_labels(sample_id, users).map_err(|e| match e {
            e @ Error::Provider { .. } => e,
            other => Error::Provider {
                sample_id,
                message: other.to_string(),
            },
        })?;
        if labels.len() != users {
            return Err(Error::Provider {
                sample_id,
                message: format!("asked for {users} labels, received {}", labels.len()),
            });
        }
        labels
    } else {
        Vec::new()
    };
    let system_prediction = model.fuse(features, mode, &human_labels)?;
    Ok(InferenceTrace {
        id: sample_id,
        human_labels,
        ai_prediction,
        selection_probs,
        mode,
        system_prediction,
        labels_consumed: mode.cost(),
        true_label: None,
    })
}
