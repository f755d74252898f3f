use lecodu::basemodel::{train_base, BaseClassifier, BaseTrainConfig, NormalizationMode, TrainingRecipe};
use lecodu::collab::{
    infer, train_lecodu, CollaborationMode, CollaborationModule, LecoduModel, RecordedProvider, SelectionModule,
    TrainConfig,
};
use lecodu::consensus::build_consensus_dataset;
use lecodu::eval::{evaluate, sp_baseline};
use lecodu::numerics::{Mlp, Rng};
use lecodu::taskgen::{
    build_multirater, make_gaussian_task, read_dataset, write_dataset, AnnotatorModel, GaussianTask, MultiRaterDataset,
};
use lecodu::Error;

struct Fixture {
    train: MultiRaterDataset,
    test: MultiRaterDataset,
    base: BaseClassifier,
}

fn fixture(separation: f64, noise_rate: f64, seed: u64) -> Fixture {
    let mut rng = Rng::seeded(seed);
    let task = GaussianTask {
        num_classes: 3,
        dim: 4,
        n_train: 800,
        n_test: 400,
        class_separation: separation,
    };
    let (train, test) = make_gaussian_task(&task, &mut rng).unwrap();
    let pool = vec![AnnotatorModel::Symmetric { noise_rate }; 3];
    let train = build_multirater(&train, &pool, &mut rng).unwrap();
    let test = build_multirater(&test, &pool, &mut rng).unwrap();
    let config = BaseTrainConfig {
        epochs: 20,
        hidden: 16,
        ..Default::default()
    };
    let base = train_base(&train, TrainingRecipe::LnlProxy, &config, &mut rng).unwrap();
    Fixture { train, test, base }
}

fn small_config(lambda: f64) -> TrainConfig {
    TrainConfig {
        lambda,
        epochs: 30,
        hidden: 16,
        seed: 5,
        train_ai_normalization: NormalizationMode::Test,
        ..Default::default()
    }
}

fn train(f: &Fixture, lambda: f64) -> LecoduModel {
    let consensus = build_consensus_dataset(&f.train, &f.base.predict_all(&f.train).unwrap()).unwrap();
    train_lecodu(&consensus.dataset, &f.base, &small_config(lambda)).unwrap()
}

#[test]
fn training_is_deterministic_under_a_seed() {
    let f = fixture(2.5, 0.25, 1);
    let a = train(&f, 0.1);
    let b = train(&f, 0.1);
    assert_eq!(a, b);
    assert_eq!(
        evaluate(&a, &f.test, 3).unwrap().accuracy,
        evaluate(&b, &f.test, 3).unwrap().accuracy
    );
}

#[test]
fn huge_lambda_almost_never_asks_users() {
    let f = fixture(2.5, 0.25, 2);
    let model = train(&f, 1e3);
    let eval = evaluate(&model, &f.test, 1).unwrap();
    let per_sample = eval.total_cost as f64 / f.test.len() as f64;
    assert!(per_sample < 0.05 * 3.0, "cost per sample {per_sample}");
}

#[test]
fn free_labels_from_reliable_users_get_used() {
    let f = fixture(2.2, 0.01, 3);
    let ai = f.base.accuracy(&f.test).unwrap();
    assert!((0.75..0.95).contains(&ai), "base accuracy {ai}");
    let model = train(&f, 0.0);
    let eval = evaluate(&model, &f.test, 1).unwrap();
    assert!(eval.total_cost > 0);
    assert!(eval.accuracy > ai, "{} vs AI {ai}", eval.accuracy);
}

#[test]
fn selective_prediction_midpoint_beats_the_worse_endpoint() {
    let f = fixture(2.5, 0.2, 4);
    let n = f.test.len();
    let sp = sp_baseline(&f.base, &f.test, &[0, n / 2, n], 9).unwrap();
    assert_eq!(sp[0].cost_per_sample, 0.0);
    assert_eq!(sp[2].cost_per_sample, 1.0);
    assert!((sp[0].accuracy - f.base.accuracy(&f.test).unwrap()).abs() < 1e-12);
    assert!(sp[1].accuracy >= sp[0].accuracy.min(sp[2].accuracy));
}

#[test]
fn dataset_round_trip_and_line_numbered_errors() {
    let f = fixture(2.5, 0.2, 5);
    let mut bytes = Vec::new();
    write_dataset(&f.test, &mut bytes).unwrap();
    assert_eq!(read_dataset(bytes.as_slice()).unwrap(), f.test);

    let text = String::from_utf8(bytes).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut record: serde_json::Value = serde_json::from_str(&lines[2]).unwrap();
    record.as_object_mut().unwrap().remove("annotations");
    lines[2] = record.to_string();
    match read_dataset(lines.join("\n").as_bytes()) {
        Err(Error::Parse { line, message }) => {
            assert_eq!(line, 3);
            assert!(message.contains("annotations"), "{message}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }

    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut record: serde_json::Value = serde_json::from_str(&lines[4]).unwrap();
    record["annotations"] = serde_json::json!([0, 1]);
    lines[4] = record.to_string();
    match read_dataset(lines.join("\n").as_bytes()) {
        Err(Error::Validation { line, .. }) => assert_eq!(line, 5),
        other => panic!("expected a validation error, got {other:?}"),
    }
}

/// Over many provider shuffles the final-label distribution does not depend
/// on the order the annotations were recorded in.
#[test]
fn final_labels_are_invariant_to_recorded_order() {
    let mut rng = Rng::seeded(11);
    let base = BaseClassifier::from_params(Mlp::two_layer(4, 6, 3, &mut rng).unwrap(), TrainingRecipe::LnlProxy, 0.5);
    let model = LecoduModel::new(
        base,
        SelectionModule::constant(4, 3, CollaborationMode::Complement(2)).unwrap(),
        CollaborationModule::new(3, 3, 8, &mut rng).unwrap(),
        3,
        0.5,
    )
    .unwrap();
    let features = [0.3, -0.2, 0.5, 0.1];
    let trials = 10_000u64;
    let counts = |annotations: Vec<usize>| {
        let mut c = [0f64; 3];
        for seed in 0..trials {
            let mut provider = RecordedProvider::new([(0, annotations.clone())], seed);
            c[infer(&model, 0, &features, &mut provider).unwrap().system_prediction] += 1.0;
        }
        c
    };
    let a = counts(vec![0, 1, 2]);
    let b = counts(vec![2, 0, 1]);
    let mut chi2 = 0.0;
    for k in 0..3 {
        let total = a[k] + b[k];
        if total > 0.0 {
            let expected = total / 2.0;
            chi2 += (a[k] - expected).powi(2) / expected + (b[k] - expected).powi(2) / expected;
        }
    }
    // 0.999 quantile of chi-squared with 2 degrees of freedom.
    assert!(chi2 < 13.82, "chi2 {chi2}, counts {a:?} vs {b:?}");
    assert!(a.iter().filter(|c| **c > 0.0).count() > 1, "fixture is degenerate: {a:?}");
}
