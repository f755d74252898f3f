//! Experiment configuration (TOML). Unknown keys anywhere are errors.

use std::path::{Path, PathBuf};

use lecodu::basemodel::{BaseTrainConfig, TrainingRecipe};
use lecodu::collab::TrainConfig;
use lecodu::eval::{AblationSpec, DEFAULT_LAMBDAS};
use lecodu::numerics::{derive_seed, Rng};
use lecodu::taskgen::{AnnotatorModel, GaussianTask};
use serde::{Deserialize, Serialize};

/// Stream used to derive the collaboration-training seed from the master seed.
const STREAM_TRAIN: u64 = 6;
/// Stream for drawing instance-dependent projections.
const STREAM_ANNOTATORS: u64 = 7;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn one() -> usize {
    1
}

/// Annotator group; `count` identical annotators of this kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnnotatorSpec {
    Symmetric {
        noise_rate: f64,
        #[serde(default = "one")]
        count: usize,
    },
    ConfusionMatrix {
        matrix: Vec<Vec<f64>>,
        #[serde(default = "one")]
        count: usize,
    },
    /// Each of the `count` annotators gets its own random projection.
    InstanceDependent {
        noise_rate: f64,
        #[serde(default = "one")]
        count: usize,
    },
}

impl AnnotatorSpec {
    fn count(&self) -> usize {
        match self {
            Self::Symmetric { count, .. } | Self::ConfusionMatrix { count, .. } | Self::InstanceDependent { count, .. } => {
                *count
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub lambdas: Vec<f64>,
    pub ablations: Vec<AblationSpec>,
    pub user_pool_sizes: Vec<usize>,
    /// Per-sample cost levels reported by `scale-users`.
    pub cost_levels: Vec<f64>,
    /// Number of budget points for the selective-prediction baseline.
    pub sp_points: usize,
    /// Drop curve points above this per-sample cost.
    pub truncate_cost_per_sample: Option<f64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            ablations: AblationSpec::ALL.to_vec(),
            user_pool_sizes: vec![3, 5, 10, 20],
            cost_levels: vec![0.25, 0.5, 1.0],
            sp_points: 11,
            truncate_cost_per_sample: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub task: GaussianTask,
    pub annotators: Vec<AnnotatorSpec>,
    #[serde(default = "default_recipe")]
    pub base_recipe: TrainingRecipe,
    #[serde(default)]
    pub base: BaseTrainConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

fn default_recipe() -> TrainingRecipe {
    TrainingRecipe::LnlProxy
}

impl ExperimentConfig {
    /// Parses, applies overrides and validates. The collaboration-training
    /// seed follows the master seed unless `[train] seed` is given.
    pub fn load(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::parse(&text, seed, out).map_err(|ConfigError(m)| ConfigError(format!("{}: {m}", path.display())))
    }

    pub fn parse(text: &str, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self, ConfigError> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        let explicit_train_seed = raw
            .get("train")
            .and_then(|t| t.as_table())
            .is_some_and(|t| t.contains_key("seed"));
        let mut config: Self = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        if let Some(s) = seed {
            config.seed = s;
        }
        if let Some(o) = out {
            config.out = o;
        }
        if !explicit_train_seed {
            config.train.seed = derive_seed(config.seed, STREAM_TRAIN);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn m(&self) -> usize {
        self.annotators.iter().map(AnnotatorSpec::count).sum()
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.task;
        if t.num_classes < 2 || t.dim == 0 || t.n_train == 0 || t.n_test == 0 {
            return Err(ConfigError(
                "task: num_classes must be at least 2 and dim, n_train, n_test positive".into(),
            ));
        }
        if !(t.class_separation > 0.0) {
            return Err(ConfigError("task.class_separation must be positive".into()));
        }
        if self.m() == 0 {
            return Err(ConfigError("annotators: at least one annotator is required".into()));
        }
        for (i, a) in self.annotators.iter().enumerate() {
            if a.count() == 0 {
                return Err(ConfigError(format!("annotators[{i}].count must be positive")));
            }
            let model = match a {
                AnnotatorSpec::Symmetric { noise_rate, .. } => AnnotatorModel::Symmetric {
                    noise_rate: *noise_rate,
                },
                AnnotatorSpec::ConfusionMatrix { matrix, .. } => AnnotatorModel::ConfusionMatrix { matrix: matrix.clone() },
                AnnotatorSpec::InstanceDependent { noise_rate, .. } => AnnotatorModel::InstanceDependent {
                    projection: vec![0.0; t.dim],
                    noise_rate: *noise_rate,
                },
            };
            model
                .validate(t.num_classes, t.dim)
                .map_err(|e| ConfigError(format!("annotators[{i}]: {e}")))?;
        }
        if self.base.epochs == 0 || self.base.batch_size == 0 || self.base.hidden == 0 {
            return Err(ConfigError("base: epochs, batch_size and hidden must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.base.holdout_fraction) {
            return Err(ConfigError("base.holdout_fraction must lie in [0, 1)".into()));
        }
        self.train.validate().map_err(|e| ConfigError(format!("train: {e}")))?;
        let x = &self.experiment;
        if x.lambdas.is_empty() {
            return Err(ConfigError("experiment.lambdas must not be empty".into()));
        }
        if let Some(l) = x.lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(ConfigError(format!("experiment.lambdas: {l} is not a finite non-negative value")));
        }
        if x.user_pool_sizes.contains(&0) {
            return Err(ConfigError("experiment.user_pool_sizes entries must be positive".into()));
        }
        if x.sp_points < 2 {
            return Err(ConfigError("experiment.sp_points must be at least 2".into()));
        }
        Ok(())
    }

    /// Concrete annotator models, one per annotator.
    pub fn annotator_models(&self) -> Vec<AnnotatorModel> {
        let mut rng = Rng::derived(self.seed, STREAM_ANNOTATORS);
        let mut out = Vec::with_capacity(self.m());
        for a in &self.annotators {
            for _ in 0..a.count() {
                out.push(match a {
                    AnnotatorSpec::Symmetric { noise_rate, .. } => AnnotatorModel::Symmetric {
                        noise_rate: *noise_rate,
                    },
                    AnnotatorSpec::ConfusionMatrix { matrix, .. } => {
                        AnnotatorModel::ConfusionMatrix { matrix: matrix.clone() }
                    }
                    AnnotatorSpec::InstanceDependent { noise_rate, .. } => {
                        AnnotatorModel::instance_dependent(self.task.dim, *noise_rate, &mut rng)
                    }
                });
            }
        }
        out
    }
}
