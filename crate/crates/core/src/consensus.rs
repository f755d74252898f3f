//! Consensus training labels from multi-rater annotations.
//!
//! The consensus label is a weighted linear opinion pool over the AI
//! prediction and the one-hot annotations. Weights are each source's
//! agreement rate with the majority vote over the whole dataset; the quality
//! score α is the top pooled probability. Only samples with α > 0.5 are kept
//! for training. Majority-vote and random-annotation labels are provided as
//! baselines.

use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::numerics::{argmax, Rng};
use crate::taskgen::MultiRaterDataset;
use crate::{Error, Result};

/// Samples are kept only when their quality strictly exceeds this.
pub const ALPHA_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusRecord {
    pub id: u64,
    pub consensus_label: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorQuality {
    pub annotator_weights: Vec<f64>,
    pub classifier_weight: f64,
}

/// A training sample carrying its target label and the raw annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: usize,
    pub annotations: Vec<usize>,
    pub alpha: f64,
    pub true_label: Option<usize>,
}

/// Training set for the collaboration system: features, target label and
/// the `M` annotations of every retained sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusDataset {
    pub num_classes: usize,
    pub dim: usize,
    pub m: usize,
    pub samples: Vec<TrainingSample>,
}

impl ConsensusDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Every sample of `data` with an externally supplied target label and α = 1.
    pub fn with_labels(data: &MultiRaterDataset, labels: &[usize]) -> Result<Self> {
        if labels.len() != data.len() {
            return Err(Error::Input(format!(
                "{} labels for {} samples",
                labels.len(),
                data.len()
            )));
        }
        Ok(Self {
            num_classes: data.num_classes,
            dim: data.dim,
            m: data.m,
            samples: data
                .samples
                .iter()
                .zip(labels)
                .map(|(s, l)| TrainingSample {
                    id: s.id,
                    features: s.features.clone(),
                    label: *l,
                    annotations: s.annotations.clone(),
                    alpha: 1.0,
                    true_label: s.true_label,
                })
                .collect(),
        })
    }

    /// Fraction of target labels that equal the hidden truth.
    pub fn label_accuracy(&self) -> Option<f64> {
        let mut hits = 0usize;
        for s in &self.samples {
            hits += usize::from(s.label == s.true_label?);
        }
        Some(hits as f64 / self.samples.len().max(1) as f64)
    }
}

/// Modal class; ties go to the lowest class index.
pub fn majority_vote(annotations: &[usize], num_classes: usize) -> Result<usize> {
    if annotations.is_empty() {
        return Err(Error::Input("majority vote over an empty annotation set".into()));
    }
    let counts = class_counts(annotations, num_classes)?;
    Ok(argmax(&counts))
}

fn class_counts(annotations: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0.0; num_classes];
    for a in annotations {
        *counts
            .get_mut(*a)
            .ok_or_else(|| Error::Input(format!("annotation {a} outside {num_classes} classes")))? += 1.0;
    }
    Ok(counts)
}

/// Uniform pick among the annotations.
pub fn random_label(annotations: &[usize], rng: &mut Rng) -> Result<usize> {
    if annotations.is_empty() {
        return Err(Error::Input("no annotations to sample from".into()));
    }
    Ok(annotations[rng.random_range(0..annotations.len())])
}

fn check_predictions(data: &MultiRaterDataset, ai_predictions: &[Vec<f64>]) -> Result<()> {
    if ai_predictions.len() != data.len() {
        return Err(Error::Input(format!(
            "{} AI predictions for {} samples",
            ai_predictions.len(),
            data.len()
        )));
    }
    if let Some(bad) = ai_predictions.iter().position(|p| p.len() != data.num_classes) {
        return Err(Error::Shape(format!("AI prediction {bad} has the wrong width")));
    }
    Ok(())
}

/// Agreement rates with the majority vote, for every annotator and the AI argmax.
pub fn estimate_quality(data: &MultiRaterDataset, ai_predictions: &[Vec<f64>]) -> Result<AnnotatorQuality> {
    check_predictions(data, ai_predictions)?;
    let n = data.len().max(1) as f64;
    let mut agree = vec![0usize; data.m];
    let mut ai_agree = 0usize;
    for (s, p) in data.samples.iter().zip(ai_predictions) {
        let mv = majority_vote(&s.annotations, data.num_classes)?;
        for (j, a) in s.annotations.iter().enumerate() {
            agree[j] += usize::from(*a == mv);
        }
        ai_agree += usize::from(argmax(p) == mv);
    }
    Ok(AnnotatorQuality {
        annotator_weights: agree.iter().map(|c| *c as f64 / n).collect(),
        classifier_weight: ai_agree as f64 / n,
    })
}

/// Pooled consensus for one sample: `s = w_clf·p + Σ_j w_j·m_j`, normalized;
/// label = argmax s, α = max s. With all weights zero, falls back to the
/// majority vote with α equal to the modal fraction.
pub fn crowdlab_consensus(
    id: u64,
    annotations: &[usize],
    ai_prediction: &[f64],
    quality: &AnnotatorQuality,
) -> Result<ConsensusRecord> {
    let k = ai_prediction.len();
    if quality.annotator_weights.len() != annotations.len() {
        return Err(Error::Shape(format!(
            "{} annotator weights for {} annotations",
            quality.annotator_weights.len(),
            annotations.len()
        )));
    }
    let mut scores: Vec<f64> = ai_prediction.iter().map(|p| quality.classifier_weight * p).collect();
    for (a, w) in annotations.iter().zip(&quality.annotator_weights) {
        *scores
            .get_mut(*a)
            .ok_or_else(|| Error::Input(format!("annotation {a} outside {k} classes")))? += w;
    }
    let total: f64 = scores.iter().sum();
    if !(total > 0.0) {
        let label = majority_vote(annotations, k)?;
        let modal = annotations.iter().filter(|a| **a == label).count();
        return Ok(ConsensusRecord {
            id,
            consensus_label: label,
            alpha: modal as f64 / annotations.len() as f64,
        });
    }
    scores.iter_mut().for_each(|s| *s /= total);
    let label = argmax(&scores);
    Ok(ConsensusRecord {
        id,
        consensus_label: label,
        alpha: scores[label],
    })
}

/// Outcome of consensus labeling: one record per source sample, and the
/// retained training set.
#[derive(Debug, Clone)]
pub struct ConsensusOutcome {
    pub quality: AnnotatorQuality,
    pub records: Vec<ConsensusRecord>,
    pub dataset: ConsensusDataset,
}

impl ConsensusOutcome {
    pub fn retained_fraction(&self) -> f64 {
        self.dataset.len() as f64 / self.records.len().max(1) as f64
    }
}

pub fn build_consensus_dataset(data: &MultiRaterDataset, ai_predictions: &[Vec<f64>]) -> Result<ConsensusOutcome> {
    let quality = estimate_quality(data, ai_predictions)?;
    let mut records = Vec::with_capacity(data.len());
    let mut samples = Vec::new();
    for (s, p) in data.samples.iter().zip(ai_predictions) {
        let record = crowdlab_consensus(s.id, &s.annotations, p, &quality)?;
        if record.alpha > ALPHA_THRESHOLD {
            samples.push(TrainingSample {
                id: s.id,
                features: s.features.clone(),
                label: record.consensus_label,
                annotations: s.annotations.clone(),
                alpha: record.alpha,
                true_label: s.true_label,
            });
        }
        records.push(record);
    }
    let dataset = ConsensusDataset {
        num_classes: data.num_classes,
        dim: data.dim,
        m: data.m,
        samples,
    };
    let outcome = ConsensusOutcome {
        quality,
        records,
        dataset,
    };
    if outcome.retained_fraction() < 0.5 {
        log::warn!(
            "consensus filter dropped {:.1}% of {} samples (alpha <= {ALPHA_THRESHOLD})",
            100.0 * (1.0 - outcome.retained_fraction()),
            data.len()
        );
    }
    Ok(outcome)
}

/// Majority-vote label of every sample.
pub fn majority_labels(data: &MultiRaterDataset) -> Result<Vec<usize>> {
    data.samples
        .iter()
        .map(|s| majority_vote(&s.annotations, data.num_classes))
        .collect()
}

/// One uniformly drawn annotation per sample.
pub fn random_labels(data: &MultiRaterDataset, rng: &mut Rng) -> Result<Vec<usize>> {
    data.samples
        .iter()
        .map(|s| random_label(&s.annotations, rng))
        .collect()
}

/// Fraction of `labels` matching the hidden truth of `data`.
pub fn accuracy_against_truth(data: &MultiRaterDataset, labels: &[usize]) -> Option<f64> {
    let mut hits = 0usize;
    for (s, l) in data.samples.iter().zip(labels) {
        hits += usize::from(*l == s.true_label?);
    }
    Some(hits as f64 / data.len().max(1) as f64)
}

/// One row of the consensus-accuracy comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusAccuracyRow {
    pub method: String,
    pub dataset: String,
    pub consensus_accuracy: f64,
}

/// Majority vote vs pooled consensus label accuracy over the full training set.
pub fn consensus_accuracy_table(
    dataset_name: &str,
    data: &MultiRaterDataset,
    ai_predictions: &[Vec<f64>],
) -> Result<Vec<ConsensusAccuracyRow>> {
    let outcome = build_consensus_dataset(data, ai_predictions)?;
    let pooled: Vec<usize> = outcome.records.iter().map(|r| r.consensus_label).collect();
    let missing = || Error::Input("consensus accuracy needs hidden true labels".into());
    let rows = vec![
        ("majority_vote", accuracy_against_truth(data, &majority_labels(data)?).ok_or_else(missing)?),
        ("crowdlab", accuracy_against_truth(data, &pooled).ok_or_else(missing)?),
    ];
    Ok(rows
        .into_iter()
        .map(|(method, acc)| ConsensusAccuracyRow {
            method: method.to_string(),
            dataset: dataset_name.to_string(),
            consensus_accuracy: acc,
        })
        .collect())
}

pub fn write_consensus_table<W: Write>(rows: &[ConsensusAccuracyRow], out: &mut W) -> Result<()> {
    writeln!(out, "method,dataset,consensus_accuracy")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.method, r.dataset, r.consensus_accuracy)?;
    }
    Ok(())
}

/// JSON Lines `{"id","consensus_label","alpha"}`, one per source sample.
pub fn save_consensus_records(records: &[ConsensusRecord], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_consensus_records(path: &Path) -> Result<Vec<ConsensusRecord>> {
    std::fs::read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Rebuilds the retained training set from saved records.
pub fn dataset_from_records(data: &MultiRaterDataset, records: &[ConsensusRecord]) -> Result<ConsensusDataset> {
    if records.len() != data.len() {
        return Err(Error::Input(format!(
            "{} consensus records for {} samples",
            records.len(),
            data.len()
        )));
    }
    let mut samples = Vec::new();
    for (s, r) in data.samples.iter().zip(records) {
        if s.id != r.id {
            return Err(Error::Input(format!("record id {} does not match sample {}", r.id, s.id)));
        }
        if r.alpha > ALPHA_THRESHOLD {
            samples.push(TrainingSample {
                id: s.id,
                features: s.features.clone(),
                label: r.consensus_label,
                annotations: s.annotations.clone(),
                alpha: r.alpha,
                true_label: s.true_label,
            });
        }
    }
    Ok(ConsensusDataset {
        num_classes: data.num_classes,
        dim: data.dim,
        m: data.m,
        samples,
    })
}
