//! One function per subcommand. Each reads its inputs from the output
//! directory, writes its artifacts plus a `manifest.json` next to them.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lecodu::basemodel::BaseClassifier;
use lecodu::bundle::{load_bundle, save_bundle, CONFIG_FILE};
use lecodu::collab::{train_lecodu, LecoduModel, TrainConfig};
use lecodu::consensus::{
    build_consensus_dataset, consensus_accuracy_table, dataset_from_records, load_consensus_records,
    save_consensus_records, write_consensus_table,
};
use lecodu::eval::{
    evaluate, matched_cost_gaps, run_ablation, scale_user_pool, sp_baseline, sweep_lambda,
    truncate_curve, write_curve_csv, write_traces, AblationSpec, CostAccuracyPoint, ExperimentSetup, PreparedRun,
    TargetLabels,
};
use lecodu::numerics::Rng;
use lecodu::taskgen::{build_multirater, load_dataset, make_gaussian_task, save_dataset, MultiRaterDataset};
use lecodu_service::AppState;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;

/// An input produced by an earlier subcommand is absent.
#[derive(Debug)]
pub struct MissingArtifact {
    pub command: &'static str,
    pub path: PathBuf,
}

impl std::fmt::Display for MissingArtifact {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "missing {}; run `lecodu {}` first",
            self.path.display(),
            self.command
        )
    }
}

impl std::error::Error for MissingArtifact {}

fn require(path: PathBuf, command: &'static str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(MissingArtifact { command, path }.into())
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    artifacts: Vec<String>,
    metrics: Value,
    config: &'a ExperimentConfig,
}

fn write_manifest(config: &ExperimentConfig, dir: &Path, command: &str, artifacts: &[PathBuf], metrics: Value) -> Result<()> {
    let manifest = Manifest {
        command,
        seed: config.seed,
        artifacts: artifacts
            .iter()
            .map(|p| p.strip_prefix(dir).unwrap_or(p).display().to_string())
            .collect(),
        metrics,
        config,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn stage_dir(config: &ExperimentConfig, name: &str) -> Result<PathBuf> {
    let dir = config.out.join(name);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_curve(curve: &[CostAccuracyPoint], m: usize, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    write_curve_csv(curve, m, &mut out)?;
    out.flush()?;
    Ok(())
}

fn bundle_name(lambda: f64) -> String {
    format!("lambda-{lambda}")
}

fn load_data(config: &ExperimentConfig) -> Result<(MultiRaterDataset, MultiRaterDataset)> {
    let train = require(config.out.join("data/train.jsonl"), "gen")?;
    let test = require(config.out.join("data/test.jsonl"), "gen")?;
    Ok((load_dataset(&train)?, load_dataset(&test)?))
}

fn setup(config: &ExperimentConfig) -> Result<ExperimentSetup> {
    let (train, test) = load_data(config)?;
    Ok(ExperimentSetup {
        train,
        test,
        base_config: config.base.clone(),
        train_config: config.train.clone(),
        seed: config.seed,
    })
}

fn load_base(config: &ExperimentConfig) -> Result<BaseClassifier> {
    let path = require(config.out.join("base/base.json"), "train-base")?;
    Ok(BaseClassifier::load(&path)?)
}

fn finish_curve(config: &ExperimentConfig, curve: Vec<CostAccuracyPoint>) -> Vec<CostAccuracyPoint> {
    match config.experiment.truncate_cost_per_sample {
        Some(max) => truncate_curve(&curve, max),
        None => curve,
    }
}

pub fn gen(config: &ExperimentConfig) -> Result<()> {
    let dir = stage_dir(config, "data")?;
    let mut rng = Rng::derived(config.seed, 0);
    let (train, test) = make_gaussian_task(&config.task, &mut rng)?;
    let annotators = config.annotator_models();
    let train = build_multirater(&train, &annotators, &mut rng)?;
    let test = build_multirater(&test, &annotators, &mut rng)?;
    let paths = [dir.join("train.jsonl"), dir.join("test.jsonl")];
    save_dataset(&train, &paths[0])?;
    save_dataset(&test, &paths[1])?;
    let accuracy: Vec<Option<f64>> = (0..train.m).map(|j| train.annotator_accuracy(j)).collect();
    write_manifest(config, &dir, "gen", &paths, json!({ "annotator_accuracy": accuracy }))?;
    log::info!("wrote {} train and {} test samples", train.len(), test.len());
    Ok(())
}

pub fn train_base(config: &ExperimentConfig) -> Result<()> {
    let setup = setup(config)?;
    let dir = stage_dir(config, "base")?;
    let base = setup.train_base(config.base_recipe)?;
    let path = dir.join("base.json");
    base.save(&path)?;
    let test_accuracy = base.accuracy(&setup.test)?;
    log::info!("base classifier test accuracy {test_accuracy:.4}");
    write_manifest(config, &dir, "train-base", &[path], json!({ "test_accuracy": test_accuracy }))
}

pub fn consensus(config: &ExperimentConfig) -> Result<()> {
    let (train, _) = load_data(config)?;
    let base = load_base(config)?;
    let dir = stage_dir(config, "consensus")?;
    let predictions = base.predict_all(&train)?;
    let outcome = build_consensus_dataset(&train, &predictions)?;
    let records = dir.join("records.jsonl");
    save_consensus_records(&outcome.records, &records)?;
    let table = dir.join("table.csv");
    let mut out = create(&table)?;
    write_consensus_table(&consensus_accuracy_table("train", &train, &predictions)?, &mut out)?;
    out.flush()?;
    write_manifest(
        config,
        &dir,
        "consensus",
        &[records, table],
        json!({
            "retained_fraction": outcome.retained_fraction(),
            "annotator_weights": outcome.quality.annotator_weights,
            "classifier_weight": outcome.quality.classifier_weight,
        }),
    )
}

pub fn train(config: &ExperimentConfig) -> Result<()> {
    let (train, _) = load_data(config)?;
    let base = load_base(config)?;
    let records = require(config.out.join("consensus/records.jsonl"), "consensus")?;
    let training = dataset_from_records(&train, &load_consensus_records(&records)?)?;
    let dir = stage_dir(config, "bundles")?;
    let written = config
        .experiment
        .lambdas
        .par_iter()
        .map(|lambda| {
            let train_config = TrainConfig {
                lambda: *lambda,
                ..config.train.clone()
            };
            let model = train_lecodu(&training, &base, &train_config)?;
            let path = dir.join(bundle_name(*lambda));
            save_bundle(&model, &train_config, &path)?;
            log::info!("trained bundle {}", path.display());
            Ok(path)
        })
        .collect::<Result<Vec<_>>>()?;
    write_manifest(config, &dir, "train", &written, json!({ "training_samples": training.len() }))
}

/// Bundles under `out/bundles`, sorted by λ.
fn load_bundles(config: &ExperimentConfig) -> Result<Vec<(LecoduModel, TrainConfig)>> {
    let dir = require(config.out.join("bundles"), "train")?;
    let mut bundles = Vec::new();
    for entry in fs::read_dir(&dir)? {
        let path = entry?.path();
        if path.join(CONFIG_FILE).is_file() {
            bundles.push(load_bundle(&path).with_context(|| format!("loading {}", path.display()))?);
        }
    }
    if bundles.is_empty() {
        return Err(MissingArtifact {
            command: "train",
            path: dir,
        }
        .into());
    }
    bundles.sort_by(|a, b| a.1.lambda.total_cmp(&b.1.lambda));
    Ok(bundles)
}

pub fn eval(config: &ExperimentConfig) -> Result<()> {
    let setup = setup(config)?;
    let base = load_base(config)?;
    let bundles = load_bundles(config)?;
    let dir = stage_dir(config, "eval")?;
    let traces_dir = dir.join("traces");
    fs::create_dir_all(&traces_dir)?;
    let provider_seed = setup.provider_seed();
    let mut artifacts = Vec::new();
    let mut curve = Vec::new();
    for (model, train_config) in &bundles {
        let evaluation = evaluate(model, &setup.test, provider_seed)?;
        let path = traces_dir.join(format!("{}.jsonl", bundle_name(train_config.lambda)));
        let mut out = create(&path)?;
        write_traces(&evaluation.traces, &mut out)?;
        out.flush()?;
        artifacts.push(path);
        curve.push(evaluation.point(train_config.lambda));
    }
    let curve = finish_curve(config, curve);
    let curve_path = dir.join("curve.csv");
    write_curve(&curve, setup.test.m, &curve_path)?;
    artifacts.push(curve_path);

    let n = setup.test.len();
    let steps = config.experiment.sp_points - 1;
    let budgets: Vec<usize> = (0..=steps).map(|i| i * n / steps).collect();
    let sp = sp_baseline(&base, &setup.test, &budgets, provider_seed)?;
    let sp_path = dir.join("sp_baseline.csv");
    let mut out = create(&sp_path)?;
    writeln!(out, "budget,cost_per_sample,accuracy")?;
    for p in &sp {
        writeln!(out, "{},{},{}", p.budget, p.cost_per_sample, p.accuracy)?;
    }
    out.flush()?;
    artifacts.push(sp_path);
    write_manifest(
        config,
        &dir,
        "eval",
        &artifacts,
        json!({ "provider_seed": provider_seed, "curve": curve }),
    )
}

pub fn sweep(config: &ExperimentConfig) -> Result<()> {
    let setup = setup(config)?;
    let dir = stage_dir(config, "sweep")?;
    let run = PreparedRun::new(&setup, config.base_recipe, TargetLabels::Crowdlab)?;
    let curve = finish_curve(config, sweep_lambda(&run, &config.experiment.lambdas)?);
    let path = dir.join("curve.csv");
    write_curve(&curve, setup.test.m, &path)?;
    write_manifest(config, &dir, "sweep", &[path], json!({ "curve": curve }))
}

pub fn ablate(config: &ExperimentConfig) -> Result<()> {
    let setup = setup(config)?;
    let dir = stage_dir(config, "ablate")?;
    let lambdas = &config.experiment.lambdas;
    let mut specs = config.experiment.ablations.clone();
    if !specs.contains(&AblationSpec::Full) {
        specs.insert(0, AblationSpec::Full);
    }
    let mut curves = Vec::new();
    let mut artifacts = Vec::new();
    for spec in specs {
        let curve = finish_curve(config, run_ablation(spec, &setup, lambdas)?);
        let m = prepare_m(spec, &setup);
        let path = dir.join(format!("{}.csv", spec.name()));
        write_curve(&curve, m, &path)?;
        artifacts.push(path);
        log::info!("ablation {} done", spec.name());
        curves.push((spec, curve));
    }
    let full = curves[0].1.clone();
    let levels = &config.experiment.cost_levels;
    let gaps: serde_json::Map<String, Value> = curves[1..]
        .iter()
        .map(|(spec, curve)| (spec.name().to_string(), json!(matched_cost_gaps(&full, curve, levels))))
        .collect();
    write_manifest(
        config,
        &dir,
        "ablate",
        &artifacts,
        json!({ "cost_levels": levels, "full_minus_variant": gaps }),
    )
}

fn prepare_m(spec: AblationSpec, setup: &ExperimentSetup) -> usize {
    match spec {
        AblationSpec::SingleUserAggregation | AblationSpec::SingleUserRandom => 1,
        _ => setup.test.m,
    }
}

pub fn scale_users(config: &ExperimentConfig) -> Result<()> {
    let setup = setup(config)?;
    let dir = stage_dir(config, "scale")?;
    let x = &config.experiment;
    let rows = scale_user_pool(&setup, &x.user_pool_sizes, &x.lambdas, &x.cost_levels)?;
    let mut artifacts = Vec::new();
    let summary = dir.join("scaling.csv");
    let mut out = create(&summary)?;
    write!(out, "m,train_seconds")?;
    for c in &x.cost_levels {
        write!(out, ",accuracy_at_{c}")?;
    }
    writeln!(out)?;
    for row in &rows {
        write!(out, "{},{:.3}", row.m, row.train_seconds)?;
        for a in &row.accuracy_at_cost {
            match a {
                Some(v) => write!(out, ",{v}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out)?;
        let path = dir.join(format!("curve-m{}.csv", row.m));
        write_curve(&finish_curve(config, row.curve.clone()), row.m, &path)?;
        artifacts.push(path);
    }
    out.flush()?;
    artifacts.insert(0, summary);
    write_manifest(config, &dir, "scale-users", &artifacts, json!({ "rows": rows }))
}

pub fn serve(config: &ExperimentConfig, addr: SocketAddr) -> Result<()> {
    let (_, test) = load_data(config)?;
    let bundles = require(config.out.join("bundles"), "train")?;
    let mut state = AppState::new(test, Some(config.out.join("sessions")));
    let count = state.load_bundles(&bundles)?;
    if count == 0 {
        return Err(MissingArtifact {
            command: "train",
            path: bundles,
        }
        .into());
    }
    log::info!("serving {count} bundles");
    let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    runtime.block_on(lecodu_service::serve(state, addr))?;
    Ok(())
}
