//! Cost–accuracy evaluation, λ sweeps, ablations, user-pool scaling and the
//! selective-prediction baseline.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basemodel::{train_base, BaseClassifier, BaseTrainConfig, TrainingRecipe};
use crate::collab::{infer, train_lecodu, CollaborationMode, InferenceTrace, LecoduModel, RecordedProvider, TrainConfig};
use crate::consensus::{build_consensus_dataset, majority_labels, majority_vote, random_labels, ConsensusDataset};
use crate::numerics::{derive_seed, Rng};
use crate::taskgen::{synthesize_user_pool, MultiRaterDataset};
use crate::{Error, Result};

/// Default λ grid: zero, then 1 and 3 per decade up to 1.
pub const DEFAULT_LAMBDAS: [f64; 8] = [0.0, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0];

const STREAM_BASE: u64 = 1;
const STREAM_CONSENSUS: u64 = 2;
const STREAM_PROVIDER: u64 = 3;
const STREAM_SINGLE_USER: u64 = 4;
const STREAM_POOL: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostAccuracyPoint {
    pub lambda: f64,
    /// Human labels consumed over the whole test set.
    pub total_cost: usize,
    pub cost_per_sample: f64,
    pub accuracy: f64,
    /// Sample count per mode, in mode-index order.
    pub mode_histogram: Vec<usize>,
}

impl CostAccuracyPoint {
    pub fn m(&self) -> usize {
        self.mode_histogram.len() / 2
    }

    /// `Σ histogram[mode]·cost(mode)`.
    pub fn histogram_cost(&self) -> usize {
        CollaborationMode::all(self.m())
            .iter()
            .zip(&self.mode_histogram)
            .map(|(mode, n)| mode.cost() * n)
            .sum()
    }
}

/// Result of running inference over a test set.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub total_cost: usize,
    pub accuracy: f64,
    pub mode_histogram: Vec<usize>,
    pub traces: Vec<InferenceTrace>,
}

impl Evaluation {
    pub fn point(&self, lambda: f64) -> CostAccuracyPoint {
        let n = self.traces.len().max(1) as f64;
        CostAccuracyPoint {
            lambda,
            total_cost: self.total_cost,
            cost_per_sample: self.total_cost as f64 / n,
            accuracy: self.accuracy,
            mode_histogram: self.mode_histogram.clone(),
        }
    }
}

/// Runs [`infer`] on every test sample against a recorded provider seeded by
/// `provider_seed`.
pub fn evaluate(model: &LecoduModel, test: &MultiRaterDataset, provider_seed: u64) -> Result<Evaluation> {
    let mut provider = RecordedProvider::from_dataset(test, provider_seed);
    evaluate_with(model, test, &mut provider)
}

/// As [`evaluate`] with a caller-owned provider. Fails with
/// [`Error::Accounting`] if the cost recorded by the mode histogram and the
/// provider's request counter disagree.
pub fn evaluate_with(
    model: &LecoduModel,
    test: &MultiRaterDataset,
    provider: &mut RecordedProvider,
) -> Result<Evaluation> {
    if test.m != model.m {
        return Err(Error::Shape(format!("model expects M = {}, test pool has {}", model.m, test.m)));
    }
    let before = provider.requested();
    let mut histogram = vec![0usize; CollaborationMode::count(model.m)];
    let mut traces = Vec::with_capacity(test.len());
    let mut correct = 0usize;
    let mut consumed = 0usize;
    for s in &test.samples {
        let truth = s
            .true_label
            .ok_or_else(|| Error::Input(format!("test sample {} has no true label", s.id)))?;
        let mut trace = infer(model, s.id, &s.features, provider)?;
        trace.true_label = Some(truth);
        histogram[trace.mode.index(model.m)] += 1;
        consumed += trace.labels_consumed;
        correct += usize::from(trace.system_prediction == truth);
        traces.push(trace);
    }
    let counter = provider.requested() - before;
    let from_histogram: usize = CollaborationMode::all(model.m)
        .iter()
        .zip(&histogram)
        .map(|(mode, n)| mode.cost() * n)
        .sum();
    if counter != from_histogram || consumed != from_histogram {
        return Err(Error::Accounting {
            histogram: from_histogram,
            counter,
        });
    }
    Ok(Evaluation {
        total_cost: counter,
        accuracy: correct as f64 / test.len().max(1) as f64,
        mode_histogram: histogram,
        traces,
    })
}

/// Writes inference traces as JSON Lines.
pub fn write_traces<W: Write>(traces: &[InferenceTrace], out: &mut W) -> Result<()> {
    for t in traces {
        serde_json::to_writer(&mut *out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Training label source for the collaboration system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetLabels {
    /// Pooled consensus, filtered by quality.
    Crowdlab,
    Majority,
    Random,
}

/// Datasets and hyperparameters shared by the runs of an experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub train: MultiRaterDataset,
    pub test: MultiRaterDataset,
    pub base_config: BaseTrainConfig,
    pub train_config: TrainConfig,
    pub seed: u64,
}

impl ExperimentSetup {
    pub fn train_base(&self, recipe: TrainingRecipe) -> Result<BaseClassifier> {
        train_base(
            &self.train,
            recipe,
            &self.base_config,
            &mut Rng::derived(self.seed, STREAM_BASE),
        )
    }

    pub fn provider_seed(&self) -> u64 {
        derive_seed(self.seed, STREAM_PROVIDER)
    }
}

/// Training set for the collaboration system under `targets`. Majority and
/// random targets keep every sample.
pub fn target_dataset(
    train: &MultiRaterDataset,
    base: &BaseClassifier,
    targets: TargetLabels,
    seed: u64,
) -> Result<ConsensusDataset> {
    match targets {
        TargetLabels::Crowdlab => Ok(build_consensus_dataset(train, &base.predict_all(train)?)?.dataset),
        TargetLabels::Majority => ConsensusDataset::with_labels(train, &majority_labels(train)?),
        TargetLabels::Random => ConsensusDataset::with_labels(
            train,
            &random_labels(train, &mut Rng::derived(seed, STREAM_CONSENSUS))?,
        ),
    }
}

/// Everything a λ sweep needs besides λ.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub base: BaseClassifier,
    pub training: ConsensusDataset,
    pub test: MultiRaterDataset,
    pub train_config: TrainConfig,
    pub provider_seed: u64,
}

impl PreparedRun {
    pub fn new(setup: &ExperimentSetup, recipe: TrainingRecipe, targets: TargetLabels) -> Result<Self> {
        let base = setup.train_base(recipe)?;
        let training = target_dataset(&setup.train, &base, targets, setup.seed)?;
        Ok(Self {
            base,
            training,
            test: setup.test.clone(),
            train_config: setup.train_config.clone(),
            provider_seed: setup.provider_seed(),
        })
    }

    pub fn train(&self, lambda: f64) -> Result<LecoduModel> {
        let config = TrainConfig {
            lambda,
            ..self.train_config.clone()
        };
        train_lecodu(&self.training, &self.base, &config)
    }

    pub fn run(&self, lambda: f64) -> Result<CostAccuracyPoint> {
        let model = self.train(lambda)?;
        Ok(evaluate(&model, &self.test, self.provider_seed)?.point(lambda))
    }
}

/// Trains and evaluates one model per λ, in parallel, from identical seeds.
/// Points come back sorted by λ.
pub fn sweep_lambda(run: &PreparedRun, lambdas: &[f64]) -> Result<Vec<CostAccuracyPoint>> {
    if lambdas.is_empty() {
        return Err(Error::Parameter("lambda list is empty".into()));
    }
    let mut points = lambdas
        .par_iter()
        .map(|l| run.run(*l))
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationSpec {
    Full,
    NoLnl,
    SingleUserAggregation,
    SingleUserRandom,
    ConsensusMajority,
    ConsensusRandom,
}

impl AblationSpec {
    pub const ALL: [AblationSpec; 6] = [
        Self::Full,
        Self::NoLnl,
        Self::SingleUserAggregation,
        Self::SingleUserRandom,
        Self::ConsensusMajority,
        Self::ConsensusRandom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoLnl => "no_lnl",
            Self::SingleUserAggregation => "single_user_aggregation",
            Self::SingleUserRandom => "single_user_random",
            Self::ConsensusMajority => "consensus_majority",
            Self::ConsensusRandom => "consensus_random",
        }
    }
}

/// Builds the prepared run of an ablation variant.
///
/// Single-user variants keep the pooled-consensus targets of the full
/// system but expose one annotation per training sample (the majority vote,
/// or one annotator drawn at random) and one randomly drawn annotation per
/// test sample.
pub fn prepare_ablation(spec: AblationSpec, setup: &ExperimentSetup) -> Result<PreparedRun> {
    match spec {
        AblationSpec::Full => PreparedRun::new(setup, TrainingRecipe::LnlProxy, TargetLabels::Crowdlab),
        AblationSpec::NoLnl => PreparedRun::new(setup, TrainingRecipe::PlainNoisy, TargetLabels::Crowdlab),
        AblationSpec::ConsensusMajority => {
            PreparedRun::new(setup, TrainingRecipe::LnlProxy, TargetLabels::Majority)
        }
        AblationSpec::ConsensusRandom => PreparedRun::new(setup, TrainingRecipe::LnlProxy, TargetLabels::Random),
        AblationSpec::SingleUserAggregation | AblationSpec::SingleUserRandom => {
            let mut run = PreparedRun::new(setup, TrainingRecipe::LnlProxy, TargetLabels::Crowdlab)?;
            let mut rng = Rng::derived(setup.seed, STREAM_SINGLE_USER);
            let k = run.training.num_classes;
            for s in &mut run.training.samples {
                let single = if spec == AblationSpec::SingleUserAggregation {
                    majority_vote(&s.annotations, k)?
                } else {
                    crate::consensus::random_label(&s.annotations, &mut rng)?
                };
                s.annotations = vec![single];
            }
            run.training.m = 1;
            run.test = setup.test.map_annotations(1, |s| {
                vec![crate::consensus::random_label(&s.annotations, &mut rng).expect("non-empty pool")]
            });
            Ok(run)
        }
    }
}

pub fn run_ablation(spec: AblationSpec, setup: &ExperimentSetup, lambdas: &[f64]) -> Result<Vec<CostAccuracyPoint>> {
    sweep_lambda(&prepare_ablation(spec, setup)?, lambdas)
}

/// Best accuracy reached at a per-sample cost of at most `cost_per_sample`.
pub fn accuracy_at_cost(curve: &[CostAccuracyPoint], cost_per_sample: f64) -> Option<f64> {
    curve
        .iter()
        .filter(|p| p.cost_per_sample <= cost_per_sample)
        .map(|p| p.accuracy)
        .max_by(f64::total_cmp)
}

/// Accuracy at `cost_per_sample` on the piecewise-linear curve through the
/// points sorted by cost (best accuracy where several points share a cost).
/// Held constant outside the realized cost range.
pub fn interpolated_accuracy(curve: &[CostAccuracyPoint], cost_per_sample: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = Vec::new();
    let mut sorted: Vec<&CostAccuracyPoint> = curve.iter().collect();
    sorted.sort_by(|a, b| a.cost_per_sample.total_cmp(&b.cost_per_sample));
    for p in sorted {
        match pts.last_mut() {
            Some(last) if last.0 == p.cost_per_sample => last.1 = last.1.max(p.accuracy),
            _ => pts.push((p.cost_per_sample, p.accuracy)),
        }
    }
    let first = *pts.first()?;
    let last = *pts.last()?;
    if cost_per_sample <= first.0 {
        return Some(first.1);
    }
    if cost_per_sample >= last.0 {
        return Some(last.1);
    }
    let hi = pts.iter().position(|p| p.0 >= cost_per_sample)?;
    let (c0, a0) = pts[hi - 1];
    let (c1, a1) = pts[hi];
    Some(a0 + (a1 - a0) * (cost_per_sample - c0) / (c1 - c0))
}

/// `accuracy(a) − accuracy(b)` at each per-sample cost level, both curves
/// read through [`interpolated_accuracy`].
pub fn matched_cost_gaps(a: &[CostAccuracyPoint], b: &[CostAccuracyPoint], levels: &[f64]) -> Option<Vec<f64>> {
    levels
        .iter()
        .map(|c| Some(interpolated_accuracy(a, *c)? - interpolated_accuracy(b, *c)?))
        .collect()
}

/// Drops points above a per-sample cost ceiling.
pub fn truncate_curve(curve: &[CostAccuracyPoint], max_cost_per_sample: f64) -> Vec<CostAccuracyPoint> {
    curve
        .iter()
        .filter(|p| p.cost_per_sample <= max_cost_per_sample)
        .cloned()
        .collect()
}

/// Writes a curve as CSV with one count column per mode.
pub fn write_curve_csv<W: Write>(curve: &[CostAccuracyPoint], m: usize, out: &mut W) -> Result<()> {
    let mut header = String::from("lambda,total_cost,cost_per_sample,accuracy,n_ai");
    for k in 1..=m {
        header.push_str(&format!(",n_comp_{k}"));
    }
    for k in 1..=m {
        header.push_str(&format!(",n_defer_{k}"));
    }
    writeln!(out, "{header}")?;
    for p in curve {
        if p.mode_histogram.len() != CollaborationMode::count(m) {
            return Err(Error::Shape(format!(
                "histogram of {} modes in a curve with M = {m}",
                p.mode_histogram.len()
            )));
        }
        let counts: Vec<String> = p.mode_histogram.iter().map(|n| n.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{},{}",
            p.lambda,
            p.total_cost,
            p.cost_per_sample,
            p.accuracy,
            counts.join(",")
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpPoint {
    pub budget: usize,
    pub cost_per_sample: f64,
    pub accuracy: f64,
}

/// Selective-prediction baseline: the `b` samples with the highest rejection
/// score `1 − max_c p_c` take one human label, the rest the AI argmax. The
/// human label is the first entry of the provider's shuffled order, so it is
/// the same annotation [`evaluate`] would hand out first.
pub fn sp_baseline(
    base: &BaseClassifier,
    test: &MultiRaterDataset,
    budgets: &[usize],
    provider_seed: u64,
) -> Result<Vec<SpPoint>> {
    let n = test.len();
    if let Some(b) = budgets.iter().find(|b| **b > n) {
        return Err(Error::Parameter(format!("budget {b} exceeds the {n} test samples")));
    }
    let provider = RecordedProvider::from_dataset(test, provider_seed);
    let mut rows = Vec::with_capacity(n);
    for s in &test.samples {
        let truth = s
            .true_label
            .ok_or_else(|| Error::Input(format!("test sample {} has no true label", s.id)))?;
        let p = base.predict_proba(&s.features)?;
        let (ai, top) = p
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| if *v > best.1 { (i, *v) } else { best });
        let human = provider
            .shuffled(s.id)
            .and_then(|v| v.first().copied())
            .ok_or_else(|| Error::Provider {
                sample_id: s.id,
                message: "no recorded annotations".into(),
            })?;
        rows.push((1.0 - top, ai == truth, human == truth));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| rows[*b].0.total_cmp(&rows[*a].0));
    Ok(budgets
        .iter()
        .map(|b| {
            let correct = order
                .iter()
                .enumerate()
                .filter(|(rank, i)| if *rank < *b { rows[**i].2 } else { rows[**i].1 })
                .count();
            SpPoint {
                budget: *b,
                cost_per_sample: *b as f64 / n.max(1) as f64,
                accuracy: correct as f64 / n.max(1) as f64,
            }
        })
        .collect())
}

/// Pool of exactly `m` annotators derived from `base`: the first `m`
/// annotators when `m` does not exceed the base size, synthetic users
/// otherwise.
pub fn resize_pool(base: &MultiRaterDataset, m: usize, rng: &mut Rng) -> Result<MultiRaterDataset> {
    if m == 0 {
        return Err(Error::Parameter("pool size must be positive".into()));
    }
    if m == base.m {
        Ok(base.clone())
    } else if m < base.m {
        Ok(base.map_annotations(m, |s| s.annotations[..m].to_vec()))
    } else {
        synthesize_user_pool(base, m, rng)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingRow {
    pub m: usize,
    /// Summed wall-clock seconds of the collaboration-system training runs.
    pub train_seconds: f64,
    pub curve: Vec<CostAccuracyPoint>,
    /// Envelope accuracy at each requested per-sample cost level.
    pub accuracy_at_cost: Vec<Option<f64>>,
}

/// Trains and evaluates a λ sweep for each pool size. The base classifier is
/// trained once on the original pool and shared.
pub fn scale_user_pool(
    setup: &ExperimentSetup,
    target_ms: &[usize],
    lambdas: &[f64],
    cost_levels: &[f64],
) -> Result<Vec<ScalingRow>> {
    let base = setup.train_base(TrainingRecipe::LnlProxy)?;
    let mut rows = Vec::with_capacity(target_ms.len());
    for &m in target_ms {
        let mut rng = Rng::derived(setup.seed, derive_seed(STREAM_POOL, m as u64));
        let train = resize_pool(&setup.train, m, &mut rng)?;
        let test = resize_pool(&setup.test, m, &mut rng)?;
        let run = PreparedRun {
            training: target_dataset(&train, &base, TargetLabels::Crowdlab, setup.seed)?,
            base: base.clone(),
            test,
            train_config: setup.train_config.clone(),
            provider_seed: setup.provider_seed(),
        };
        let timed = lambdas
            .par_iter()
            .map(|l| {
                let start = Instant::now();
                let model = run.train(*l)?;
                let seconds = start.elapsed().as_secs_f64();
                Ok((evaluate(&model, &run.test, run.provider_seed)?.point(*l), seconds))
            })
            .collect::<Result<Vec<_>>>()?;
        let train_seconds = timed.iter().map(|(_, s)| s).sum();
        let mut curve: Vec<CostAccuracyPoint> = timed.into_iter().map(|(p, _)| p).collect();
        curve.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        rows.push(ScalingRow {
            m,
            train_seconds,
            accuracy_at_cost: cost_levels.iter().map(|c| accuracy_at_cost(&curve, *c)).collect(),
            curve,
        });
    }
    Ok(rows)
}
