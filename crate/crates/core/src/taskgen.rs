//! Synthetic classification tasks and simulated annotator pools.
//!
//! A task is a mixture of isotropic unit-variance Gaussians whose means sit on
//! the vertices of a regular simplex, so a single separation parameter sets
//! the Bayes error. Annotators corrupt the true label under one of three
//! noise models; [`build_multirater`] stacks `M` of them into the multi-rater
//! training set.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::numerics::Rng;
use crate::{Error, Result};

/// Maximum per-sample flip probability under instance-dependent noise.
pub const IDN_FLIP_CAP: f64 = 0.95;

/// Pseudo-count added to every cell when estimating transition matrices.
pub const TRANSITION_SMOOTHING: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub num_classes: usize,
    pub dim: usize,
    pub samples: Vec<LabeledSample>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnnotatorModel {
    /// Keeps the true label with probability `1 - noise_rate`, otherwise
    /// picks uniformly among the other classes.
    Symmetric { noise_rate: f64 },
    /// Samples the annotation from row `true_label` of a row-stochastic matrix.
    ConfusionMatrix { matrix: Vec<Vec<f64>> },
    /// Flip probability `ρ·σ(⟨w, x⟩) / mean σ(⟨w, x_j⟩)`, capped at
    /// [`IDN_FLIP_CAP`]; flips go uniformly to the other classes.
    InstanceDependent { projection: Vec<f64>, noise_rate: f64 },
}

impl AnnotatorModel {
    /// Instance-dependent annotator with a fresh `N(0, 1/dim)` projection.
    pub fn instance_dependent(dim: usize, noise_rate: f64, rng: &mut Rng) -> Self {
        let scale = 1.0 / (dim.max(1) as f64).sqrt();
        let projection = (0..dim)
            .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect();
        Self::InstanceDependent {
            projection,
            noise_rate,
        }
    }

    pub fn validate(&self, num_classes: usize, dim: usize) -> Result<()> {
        match self {
            Self::Symmetric { noise_rate } => check_rate(*noise_rate),
            Self::InstanceDependent {
                projection,
                noise_rate,
            } => {
                check_rate(*noise_rate)?;
                if projection.len() != dim {
                    return Err(Error::Parameter(format!(
                        "projection has {} entries for {dim}-dimensional features",
                        projection.len()
                    )));
                }
                Ok(())
            }
            Self::ConfusionMatrix { matrix } => {
                if matrix.len() != num_classes || matrix.iter().any(|r| r.len() != num_classes) {
                    return Err(Error::Parameter(format!(
                        "confusion matrix must be {num_classes}x{num_classes}"
                    )));
                }
                for (i, row) in matrix.iter().enumerate() {
                    let total: f64 = row.iter().sum();
                    if row.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                        return Err(Error::Parameter(format!(
                            "confusion matrix row {i} is not a probability vector"
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Parameter(format!("noise rate must lie in [0, 1), got {rate}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiRaterSample {
    pub id: u64,
    pub features: Vec<f64>,
    /// One class index per annotator, in annotator order.
    pub annotations: Vec<usize>,
    pub true_label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiRaterDataset {
    pub num_classes: usize,
    pub dim: usize,
    /// Annotations per sample.
    pub m: usize,
    pub samples: Vec<MultiRaterSample>,
}

impl MultiRaterDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Fraction of annotator `j`'s labels that match the hidden truth.
    pub fn annotator_accuracy(&self, j: usize) -> Option<f64> {
        let mut hits = 0usize;
        for s in &self.samples {
            hits += usize::from(s.annotations[j] == s.true_label?);
        }
        Some(hits as f64 / self.samples.len().max(1) as f64)
    }

    /// Replaces every sample's annotations by `f(sample)`; `m` becomes `new_m`.
    pub fn map_annotations<F>(&self, new_m: usize, mut f: F) -> MultiRaterDataset
    where
        F: FnMut(&MultiRaterSample) -> Vec<usize>,
    {
        MultiRaterDataset {
            num_classes: self.num_classes,
            dim: self.dim,
            m: new_m,
            samples: self
                .samples
                .iter()
                .map(|s| MultiRaterSample {
                    annotations: f(s),
                    ..s.clone()
                })
                .collect(),
        }
    }
}

/// Parameters of a Gaussian-mixture task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianTask {
    pub num_classes: usize,
    pub dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub class_separation: f64,
}

/// Vertices of a regular simplex in `dim` dimensions with the given pairwise
/// distance, centered at the origin.
pub fn simplex_means(num_classes: usize, dim: usize, separation: f64) -> Result<Vec<Vec<f64>>> {
    if num_classes < 2 {
        return Err(Error::Parameter("need at least two classes".into()));
    }
    if dim + 1 < num_classes {
        return Err(Error::Parameter(format!(
            "a {num_classes}-class simplex needs at least {} dimensions, got {dim}",
            num_classes - 1
        )));
    }
    let k = num_classes;
    let centered: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|c| f64::from(u8::from(c == i)) - 1.0 / k as f64).collect())
        .collect();
    // Orthonormal basis of the centered subspace (Gram-Schmidt on k-1 vertices).
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k - 1);
    for v in centered.iter().take(k - 1) {
        let mut u = v.clone();
        for b in &basis {
            let proj: f64 = u.iter().zip(b).map(|(x, y)| x * y).sum();
            u.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        u.iter_mut().for_each(|x| *x /= norm);
        basis.push(u);
    }
    let scale = separation / std::f64::consts::SQRT_2;
    Ok(centered
        .iter()
        .map(|v| {
            let mut mean = vec![0.0; dim];
            for (slot, b) in mean.iter_mut().zip(&basis) {
                *slot = scale * v.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            }
            mean
        })
        .collect())
}

/// Balanced train/test splits drawn from the simplex Gaussian mixture.
/// Train ids are `0..n_train`, test ids follow.
pub fn make_gaussian_task(task: &GaussianTask, rng: &mut Rng) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(task.class_separation >= 0.0) {
        return Err(Error::Parameter("class separation must be non-negative".into()));
    }
    let means = simplex_means(task.num_classes, task.dim, task.class_separation)?;
    let draw = |offset: u64, n: usize, rng: &mut Rng| -> LabeledDataset {
        let samples = (0..n)
            .map(|i| {
                let label = i % task.num_classes;
                let features = means[label]
                    .iter()
                    .map(|mu| mu + Distribution::<f64>::sample(&StandardNormal, rng))
                    .collect::<Vec<f64>>();
                LabeledSample {
                    id: offset + i as u64,
                    features,
                    label,
                }
            })
            .collect();
        LabeledDataset {
            num_classes: task.num_classes,
            dim: task.dim,
            samples,
        }
    };
    let train = draw(0, task.n_train, rng);
    let test = draw(task.n_train as u64, task.n_test, rng);
    Ok((train, test))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn flip_uniform(label: usize, num_classes: usize, rng: &mut Rng) -> usize {
    let other = rng.random_range(0..num_classes - 1);
    if other >= label {
        other + 1
    } else {
        other
    }
}

fn sample_row(row: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    row.iter().rposition(|p| *p > 0.0).unwrap_or(row.len() - 1)
}

/// One label per sample from `annotator`.
pub fn annotate(dataset: &LabeledDataset, annotator: &AnnotatorModel, rng: &mut Rng) -> Result<Vec<usize>> {
    annotator.validate(dataset.num_classes, dataset.dim)?;
    let k = dataset.num_classes;
    let labels = match annotator {
        AnnotatorModel::Symmetric { noise_rate } => dataset
            .samples
            .iter()
            .map(|s| {
                if rng.random::<f64>() < *noise_rate {
                    flip_uniform(s.label, k, rng)
                } else {
                    s.label
                }
            })
            .collect(),
        AnnotatorModel::ConfusionMatrix { matrix } => dataset
            .samples
            .iter()
            .map(|s| sample_row(&matrix[s.label], rng))
            .collect(),
        AnnotatorModel::InstanceDependent {
            projection,
            noise_rate,
        } => {
            let scores: Vec<f64> = dataset
                .samples
                .iter()
                .map(|s| sigmoid(s.features.iter().zip(projection).map(|(x, w)| x * w).sum()))
                .collect();
            let mean = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
            dataset
                .samples
                .iter()
                .zip(&scores)
                .map(|(s, score)| {
                    let flip = (noise_rate * score / mean).clamp(0.0, IDN_FLIP_CAP);
                    if rng.random::<f64>() < flip {
                        flip_uniform(s.label, k, rng)
                    } else {
                        s.label
                    }
                })
                .collect()
        }
    };
    Ok(labels)
}

/// Attaches one annotation per annotator to every sample.
pub fn build_multirater(
    dataset: &LabeledDataset,
    annotators: &[AnnotatorModel],
    rng: &mut Rng,
) -> Result<MultiRaterDataset> {
    if annotators.is_empty() {
        return Err(Error::Parameter("annotator pool is empty".into()));
    }
    let columns = annotators
        .iter()
        .map(|a| annotate(dataset, a, rng))
        .collect::<Result<Vec<_>>>()?;
    let samples = dataset
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| MultiRaterSample {
            id: s.id,
            features: s.features.clone(),
            annotations: columns.iter().map(|c| c[i]).collect(),
            true_label: Some(s.label),
        })
        .collect();
    Ok(MultiRaterDataset {
        num_classes: dataset.num_classes,
        dim: dataset.dim,
        m: annotators.len(),
        samples,
    })
}

/// Row-stochastic `true class -> annotated class` matrix.
pub type TransitionMatrix = Vec<Vec<f64>>;

/// Laplace-smoothed empirical transition matrix of every annotator.
pub fn estimate_transition_matrices(data: &MultiRaterDataset) -> Result<Vec<TransitionMatrix>> {
    let k = data.num_classes;
    let mut counts = vec![vec![vec![TRANSITION_SMOOTHING; k]; k]; data.m];
    for s in &data.samples {
        let truth = s
            .true_label
            .ok_or_else(|| Error::Input(format!("sample {} has no true label", s.id)))?;
        for (j, a) in s.annotations.iter().enumerate() {
            counts[j][truth][*a] += 1.0;
        }
    }
    for matrix in &mut counts {
        for row in matrix.iter_mut() {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
        }
    }
    Ok(counts)
}

/// Grows the annotator pool to `target_m` synthetic users. Each synthetic
/// annotation picks one estimated base transition matrix uniformly at random
/// and samples from its row for the true class.
pub fn synthesize_user_pool(base: &MultiRaterDataset, target_m: usize, rng: &mut Rng) -> Result<MultiRaterDataset> {
    if base.m == 0 {
        return Err(Error::Input("base pool has no annotators".into()));
    }
    if target_m <= base.m {
        return Err(Error::Parameter(format!(
            "target pool size {target_m} must exceed the base pool size {}",
            base.m
        )));
    }
    let matrices = estimate_transition_matrices(base)?;
    let mut samples = Vec::with_capacity(base.len());
    for s in &base.samples {
        let truth = s.true_label.expect("checked by estimate_transition_matrices");
        let annotations = (0..target_m)
            .map(|_| {
                let m = matrices.choose(rng).expect("non-empty pool");
                sample_row(&m[truth], rng)
            })
            .collect();
        samples.push(MultiRaterSample {
            annotations,
            ..s.clone()
        });
    }
    Ok(MultiRaterDataset {
        num_classes: base.num_classes,
        dim: base.dim,
        m: target_m,
        samples,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileHeader {
    num_classes: usize,
    #[serde(rename = "M")]
    m: usize,
    dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileRecord {
    id: u64,
    features: Vec<f64>,
    annotations: Vec<usize>,
    true_label: Option<usize>,
}

/// JSON Lines: a header `{"num_classes","M","dim"}` followed by one record per sample.
pub fn save_dataset(data: &MultiRaterDataset, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    write_dataset(data, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_dataset<W: Write>(data: &MultiRaterDataset, out: &mut W) -> Result<()> {
    let header = FileHeader {
        num_classes: data.num_classes,
        m: data.m,
        dim: data.dim,
    };
    serde_json::to_writer(&mut *out, &header)?;
    out.write_all(b"\n")?;
    for s in &data.samples {
        let record = FileRecord {
            id: s.id,
            features: s.features.clone(),
            annotations: s.annotations.clone(),
            true_label: s.true_label,
        };
        serde_json::to_writer(&mut *out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<MultiRaterDataset> {
    read_dataset(BufReader::new(std::fs::File::open(path)?))
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<MultiRaterDataset> {
    let mut lines = input.lines().enumerate();
    let header: FileHeader = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line?).map_err(|e| Error::Parse {
            line: 1,
            message: format!("header: {e}"),
        })?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "missing header".into(),
            })
        }
    };
    let mut samples = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: FileRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let invalid = |message: String| Error::Validation {
            line: line_no,
            message,
        };
        if r.annotations.len() != header.m {
            return Err(invalid(format!(
                "{} annotations but header declares M = {}",
                r.annotations.len(),
                header.m
            )));
        }
        if r.features.len() != header.dim {
            return Err(invalid(format!(
                "{} features but header declares dim = {}",
                r.features.len(),
                header.dim
            )));
        }
        if r.annotations.iter().chain(r.true_label.iter()).any(|c| *c >= header.num_classes) {
            return Err(invalid("class index out of range".into()));
        }
        if !seen.insert(r.id) {
            return Err(invalid(format!("duplicate id {}", r.id)));
        }
        samples.push(MultiRaterSample {
            id: r.id,
            features: r.features,
            annotations: r.annotations,
            true_label: r.true_label,
        });
    }
    Ok(MultiRaterDataset {
        num_classes: header.num_classes,
        dim: header.dim,
        m: header.m,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(sep: f64, n: usize) -> GaussianTask {
        GaussianTask {
            num_classes: 3,
            dim: 8,
            n_train: n,
            n_test: n,
            class_separation: sep,
        }
    }

    fn nearest_mean_accuracy(data: &LabeledDataset, means: &[Vec<f64>]) -> f64 {
        let hits = data
            .samples
            .iter()
            .filter(|s| {
                let d: Vec<f64> = means
                    .iter()
                    .map(|m| m.iter().zip(&s.features).map(|(a, b)| (a - b).powi(2)).sum())
                    .collect();
                crate::numerics::argmax(&d.iter().map(|v| -v).collect::<Vec<_>>()) == s.label
            })
            .count();
        hits as f64 / data.len() as f64
    }

    #[test]
    fn simplex_means_are_equidistant() {
        for k in 2..6 {
            let means = simplex_means(k, k + 2, 4.0).unwrap();
            for i in 0..k {
                for j in i + 1..k {
                    let d: f64 = means[i]
                        .iter()
                        .zip(&means[j])
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    assert!((d - 4.0).abs() < 1e-12, "k={k}: {d}");
                }
            }
        }
    }

    #[test]
    fn well_separated_task_is_nearly_linearly_separable() {
        let mut rng = Rng::seeded(1);
        let (train, test) = make_gaussian_task(&task(10.0, 3000), &mut rng).unwrap();
        let means = simplex_means(3, 8, 10.0).unwrap();
        assert!(nearest_mean_accuracy(&test, &means) > 0.99);
        assert!(train.samples.iter().all(|s| s.id < 3000));
        assert!(test.samples.iter().all(|s| s.id >= 3000));
    }

    #[test]
    fn zero_separation_is_chance() {
        let mut rng = Rng::seeded(2);
        let (_, test) = make_gaussian_task(&task(0.0, 6000), &mut rng).unwrap();
        let means = simplex_means(3, 8, 3.0).unwrap();
        let acc = nearest_mean_accuracy(&test, &means);
        assert!((acc - 1.0 / 3.0).abs() < 0.03, "{acc}");
    }

    #[test]
    fn too_few_dimensions_rejected() {
        let t = GaussianTask {
            num_classes: 5,
            dim: 3,
            n_train: 10,
            n_test: 10,
            class_separation: 1.0,
        };
        assert!(matches!(make_gaussian_task(&t, &mut Rng::seeded(0)), Err(Error::Parameter(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = make_gaussian_task(&task(3.0, 100), &mut Rng::seeded(9)).unwrap();
        let b = make_gaussian_task(&task(3.0, 100), &mut Rng::seeded(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_annotators_copy_truth() {
        let mut rng = Rng::seeded(3);
        let (train, _) = make_gaussian_task(&task(3.0, 500), &mut rng).unwrap();
        let sym = annotate(&train, &AnnotatorModel::Symmetric { noise_rate: 0.0 }, &mut rng).unwrap();
        let identity = AnnotatorModel::ConfusionMatrix {
            matrix: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        };
        let cm = annotate(&train, &identity, &mut rng).unwrap();
        for (i, s) in train.samples.iter().enumerate() {
            assert_eq!(sym[i], s.label);
            assert_eq!(cm[i], s.label);
        }
    }

    #[test]
    fn symmetric_noise_rate_is_respected() {
        let mut rng = Rng::seeded(4);
        let (train, _) = make_gaussian_task(&task(3.0, 10_000), &mut rng).unwrap();
        let labels = annotate(&train, &AnnotatorModel::Symmetric { noise_rate: 0.25 }, &mut rng).unwrap();
        let acc = labels
            .iter()
            .zip(&train.samples)
            .filter(|(a, s)| **a == s.label)
            .count() as f64
            / 10_000.0;
        assert!((acc - 0.75).abs() <= 0.02, "{acc}");
        // 3-sigma Monte Carlo band.
        assert!((acc - 0.75).abs() < 3.0 * (0.25f64 * 0.75 / 10_000.0).sqrt());
    }

    #[test]
    fn instance_dependent_noise_has_requested_mean_rate() {
        let mut rng = Rng::seeded(5);
        let (train, _) = make_gaussian_task(&task(3.0, 10_000), &mut rng).unwrap();
        let annotator = AnnotatorModel::instance_dependent(8, 0.3, &mut rng);
        let labels = annotate(&train, &annotator, &mut rng).unwrap();
        let err = labels
            .iter()
            .zip(&train.samples)
            .filter(|(a, s)| **a != s.label)
            .count() as f64
            / 10_000.0;
        assert!((err - 0.3).abs() < 0.03, "{err}");
    }

    #[test]
    fn invalid_annotators_rejected() {
        assert!(AnnotatorModel::Symmetric { noise_rate: 1.0 }.validate(3, 8).is_err());
        let bad = AnnotatorModel::ConfusionMatrix {
            matrix: vec![vec![0.5, 0.4], vec![0.0, 1.0]],
        };
        assert!(bad.validate(2, 8).is_err());
    }

    #[test]
    fn multirater_examples() {
        let mut rng = Rng::seeded(6);
        let (train, _) = make_gaussian_task(&task(3.0, 10_000), &mut rng).unwrap();
        let clean = vec![AnnotatorModel::Symmetric { noise_rate: 0.0 }; 3];
        let data = build_multirater(&train, &clean, &mut rng).unwrap();
        assert!(data
            .samples
            .iter()
            .all(|s| s.annotations.iter().all(|a| Some(*a) == s.true_label)));

        let noisy = vec![AnnotatorModel::Symmetric { noise_rate: 0.2 }; 3];
        let data = build_multirater(&train, &noisy, &mut rng).unwrap();
        for j in 0..3 {
            let acc = data.annotator_accuracy(j).unwrap();
            assert!((acc - 0.8).abs() <= 0.02, "annotator {j}: {acc}");
        }
        for (s, orig) in data.samples.iter().zip(&train.samples) {
            assert_eq!(s.features, orig.features);
            assert_eq!(s.true_label, Some(orig.label));
        }

        let single = build_multirater(&train, &noisy[..1], &mut rng).unwrap();
        assert_eq!(single.m, 1);
        assert!(single.samples.iter().all(|s| s.annotations.len() == 1));

        assert!(build_multirater(&train, &[], &mut rng).is_err());
    }

    #[test]
    fn synthetic_users_follow_base_noise() {
        let mut rng = Rng::seeded(7);
        let (train, _) = make_gaussian_task(&task(3.0, 10_000), &mut rng).unwrap();
        let base = build_multirater(&train, &[AnnotatorModel::Symmetric { noise_rate: 0.3 }], &mut rng).unwrap();
        let grown = synthesize_user_pool(&base, 10, &mut rng).unwrap();
        assert_eq!(grown.m, 10);
        for j in 0..10 {
            let acc = grown.annotator_accuracy(j).unwrap();
            assert!((acc - 0.7).abs() <= 0.03, "user {j}: {acc}");
        }
        assert!(synthesize_user_pool(&base, 1, &mut rng).is_err());
    }

    #[test]
    fn noiseless_base_gives_near_noiseless_users() {
        let mut rng = Rng::seeded(8);
        let (train, _) = make_gaussian_task(&task(3.0, 9_000), &mut rng).unwrap();
        let base =
            build_multirater(&train, &vec![AnnotatorModel::Symmetric { noise_rate: 0.0 }; 2], &mut rng).unwrap();
        let grown = synthesize_user_pool(&base, 4, &mut rng).unwrap();
        // Smoothing leaves (K-1)/(n_c + K) off-diagonal mass per row: ~0.07% here.
        for j in 0..4 {
            assert!(grown.annotator_accuracy(j).unwrap() > 0.997);
        }
    }

    #[test]
    fn synthesis_needs_true_labels() {
        let data = MultiRaterDataset {
            num_classes: 2,
            dim: 1,
            m: 1,
            samples: vec![MultiRaterSample {
                id: 0,
                features: vec![0.0],
                annotations: vec![1],
                true_label: None,
            }],
        };
        assert!(matches!(synthesize_user_pool(&data, 3, &mut Rng::seeded(0)), Err(Error::Input(_))));
    }
}
