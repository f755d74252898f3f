use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use lecodu::basemodel::{train_base, BaseClassifier, BaseTrainConfig, NormalizationMode, TrainingRecipe};
use lecodu::bundle::save_bundle;
use lecodu::collab::{
    train_lecodu, CollaborationMode, CollaborationModule, LecoduModel, RecordedProvider, SelectionModule,
    TrainConfig,
};
use lecodu::consensus::build_consensus_dataset;
use lecodu::eval::evaluate;
use lecodu::numerics::{Dense, Matrix, Mlp, Rng};
use lecodu::taskgen::{build_multirater, make_gaussian_task, AnnotatorModel, GaussianTask, MultiRaterDataset};
use lecodu_service::events::{read_events, replay};
use lecodu_service::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

fn pool(n_test: usize, seed: u64) -> (MultiRaterDataset, MultiRaterDataset) {
    let mut rng = Rng::seeded(seed);
    let task = GaussianTask {
        num_classes: 3,
        dim: 4,
        n_train: 600,
        n_test,
        class_separation: 2.5,
    };
    let (train, test) = make_gaussian_task(&task, &mut rng).unwrap();
    let annotators = vec![AnnotatorModel::Symmetric { noise_rate: 0.25 }; 3];
    (
        build_multirater(&train, &annotators, &mut rng).unwrap(),
        build_multirater(&test, &annotators, &mut rng).unwrap(),
    )
}

fn random_base(dim: usize) -> BaseClassifier {
    let mut rng = Rng::seeded(8);
    BaseClassifier::from_params(Mlp::two_layer(dim, 6, 3, &mut rng).unwrap(), TrainingRecipe::LnlProxy, 0.5)
}

fn forced(mode: CollaborationMode) -> LecoduModel {
    let mut rng = Rng::seeded(9);
    LecoduModel::new(
        random_base(4),
        SelectionModule::constant(4, 3, mode).unwrap(),
        CollaborationModule::new(3, 3, 8, &mut rng).unwrap(),
        3,
        0.5,
    )
    .unwrap()
}

/// Complement(1) with a collaborator that copies the first user block.
fn copy_first_user() -> LecoduModel {
    let mut w = Matrix::zeros(3, 12);
    for c in 0..3 {
        w.set(c, 3 + c, 10.0);
    }
    LecoduModel::new(
        random_base(4),
        SelectionModule::constant(4, 3, CollaborationMode::Complement(1)).unwrap(),
        CollaborationModule {
            params: Mlp::from_layers(vec![Dense::new(w, vec![0.0; 3]).unwrap()]).unwrap(),
        },
        3,
        0.5,
    )
    .unwrap()
}

fn app_with(models: Vec<(&str, LecoduModel)>, test: MultiRaterDataset, log_dir: Option<std::path::PathBuf>) -> Router {
    let mut state = AppState::new(test, log_dir);
    for (id, m) in models {
        state.add_bundle(id, m, TrainConfig::default());
    }
    router(Arc::new(state))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn create(app: &Router, bundle: &str, overrides: Value) -> u64 {
    let (status, body) = call(app, "POST", "/sessions", Some(json!({ "bundle": bundle, "overrides": overrides }))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["id"].as_u64().unwrap()
}

#[tokio::test]
async fn lists_bundles() {
    let (_, test) = pool(20, 1);
    let app = app_with(vec![("b", forced(CollaborationMode::AiAlone))], test, None);
    let (status, body) = call(&app, "GET", "/bundles", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body[0]["id"], "b");
    assert_eq!(body[0]["m"], 3);
}

#[tokio::test]
async fn unknown_bundle_is_not_found() {
    let (_, test) = pool(20, 1);
    let app = app_with(vec![("b", forced(CollaborationMode::AiAlone))], test, None);
    let (status, body) = call(&app, "POST", "/sessions", Some(json!({ "bundle": "nope" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "not_found");
    let (status, body) = call(&app, "GET", "/sessions/77/stats", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "not_found");
}

#[tokio::test]
async fn same_seed_gives_same_order() {
    let (_, test) = pool(30, 1);
    let app = app_with(vec![("ai", forced(CollaborationMode::AiAlone))], test, None);
    let mut orders = Vec::new();
    for seed in [5, 5, 6] {
        let id = create(&app, "ai", json!({ "seed": seed })).await;
        let mut ids = Vec::new();
        loop {
            let (status, body) = call(&app, "GET", &format!("/sessions/{id}/next"), None).await;
            assert_eq!(status, StatusCode::OK);
            if body["done"] == true {
                assert_eq!(body["stats"]["n"], 30);
                assert_eq!(body["stats"]["cost"], 0);
                break;
            }
            assert_eq!(body["labels_needed"], 0);
            assert!(body["result"].is_object());
            ids.push(body["sample_id"].as_u64().unwrap());
        }
        orders.push(ids);
    }
    assert_eq!(orders[0], orders[1]);
    assert_ne!(orders[0], orders[2]);
}

#[tokio::test]
async fn human_slots_split_with_recorded_pool() {
    let (_, test) = pool(10, 2);
    let app = app_with(vec![("defer3", forced(CollaborationMode::Defer(3)))], test, None);
    let id = create(&app, "defer3", json!({ "human_slots": 1 })).await;
    let (_, q) = call(&app, "GET", &format!("/sessions/{id}/next"), None).await;
    assert_eq!(q["decision"], "defer3");
    assert_eq!(q["labels_needed"], 1);
    assert_eq!(q["labels_total"], 3);
    assert!(q["ai_argmax"].is_null());
    assert!(q["result"].is_null());
    assert!(!q.to_string().contains("true_label"));

    let sid = q["sample_id"].as_u64().unwrap();
    let (status, r) = call(&app, "POST", &format!("/sessions/{id}/labels"), Some(json!({ "sample_id": sid, "labels": [2] }))).await;
    assert_eq!(status, StatusCode::OK, "{r}");
    assert_eq!(r["stats"]["cost"], 3);
    assert_eq!(r["stats"]["human_labels"], 1);
    assert_eq!(r["stats"]["recorded_labels"], 2);
}

#[tokio::test]
async fn request_guards() {
    let (_, test) = pool(10, 3);
    let app = app_with(vec![("c2", forced(CollaborationMode::Complement(2)))], test, None);
    let id = create(&app, "c2", json!({ "human_slots": 2 })).await;
    let (_, q) = call(&app, "GET", &format!("/sessions/{id}/next"), None).await;
    let sid = q["sample_id"].as_u64().unwrap();
    assert!(q["ai_argmax"].is_u64());
    assert_eq!(q["labels_needed"], 2);

    let (status, body) = call(&app, "GET", &format!("/sessions/{id}/next"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "conflict");

    let labels_uri = format!("/sessions/{id}/labels");
    let (status, _) = call(&app, "POST", &labels_uri, Some(json!({ "sample_id": sid + 1000, "labels": [0, 1] }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, body) = call(&app, "POST", &labels_uri, Some(json!({ "sample_id": sid, "labels": [0, 3] }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "validation");
    let (status, _) = call(&app, "POST", &labels_uri, Some(json!({ "sample_id": sid, "labels": [0] }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, "POST", &labels_uri, Some(json!({ "sample_id": sid, "label": [0] }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, first) = call(&app, "POST", &labels_uri, Some(json!({ "sample_id": sid, "labels": [0, 1] }))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(&app, "POST", &labels_uri, Some(json!({ "sample_id": sid, "labels": [0, 1] }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (_, stats) = call(&app, "GET", &format!("/sessions/{id}/stats"), None).await;
    assert_eq!(stats["n"], 1);
    assert_eq!(stats["cost"], first["stats"]["cost"]);
    assert_eq!(stats["cost"], 2);
}

#[tokio::test]
async fn human_label_can_fix_an_ai_mistake() {
    let (_, test) = pool(60, 4);
    let model = copy_first_user();
    let base = model.base.clone();
    let app = app_with(vec![("copy", model)], test.clone(), None);
    let id = create(&app, "copy", json!({ "seed": 1 })).await;
    let mut fixed = 0;
    loop {
        let (_, q) = call(&app, "GET", &format!("/sessions/{id}/next"), None).await;
        if q["done"] == true {
            break;
        }
        let sid = q["sample_id"].as_u64().unwrap();
        let sample = test.samples.iter().find(|s| s.id == sid).unwrap();
        let truth = sample.true_label.unwrap();
        let (_, before) = call(&app, "GET", &format!("/sessions/{id}/stats"), None).await;
        let (_, r) = call(&app, "POST", &format!("/sessions/{id}/labels"), Some(json!({ "sample_id": sid, "labels": [truth] }))).await;
        assert_eq!(r["prediction"], truth);
        assert_eq!(r["correct"], true);
        assert_eq!(r["stats"]["correct"], before["correct"].as_u64().unwrap() + 1);
        if base.predict(&sample.features).unwrap() != truth {
            fixed += 1;
        }
    }
    assert!(fixed > 0, "fixture base never erred");
}

#[tokio::test]
async fn event_log_replays_to_reported_stats() {
    let (_, test) = pool(25, 5);
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(
        vec![("c1", forced(CollaborationMode::Complement(1))), ("ai", forced(CollaborationMode::AiAlone))],
        test,
        Some(dir.path().to_path_buf()),
    );
    let id = create(&app, "c1", json!({ "seed": 3 })).await;
    for i in 0..25 {
        let (_, q) = call(&app, "GET", &format!("/sessions/{id}/next"), None).await;
        let sid = q["sample_id"].as_u64().unwrap();
        call(&app, "POST", &format!("/sessions/{id}/labels"), Some(json!({ "sample_id": sid, "labels": [i % 3] }))).await;
    }
    let (_, stats) = call(&app, "GET", &format!("/sessions/{id}/stats"), None).await;
    assert_eq!(stats["finished"], true);
    let file = std::fs::File::open(dir.path().join(format!("session-{id}.jsonl"))).unwrap();
    let events = read_events(std::io::BufReader::new(file)).unwrap();
    let replayed = replay(&events);
    assert_eq!(replayed.cost as u64, stats["cost"].as_u64().unwrap());
    assert_eq!(replayed.n as u64, stats["n"].as_u64().unwrap());
    assert_eq!(replayed.correct as u64, stats["correct"].as_u64().unwrap());
}

#[tokio::test]
async fn bundles_load_from_directory() {
    let (_, test) = pool(10, 6);
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig {
        lambda: 0.3,
        ..Default::default()
    };
    save_bundle(&forced(CollaborationMode::AiAlone), &config, &dir.path().join("lambda-0.3")).unwrap();
    let mut state = AppState::new(test, None);
    assert_eq!(state.load_bundles(dir.path()).unwrap(), 1);
    assert_eq!(state.bundles()[0].id, "lambda-0.3");
    assert_eq!(state.bundles()[0].lambda, 0.3);
}

#[tokio::test]
async fn scripted_client_matches_offline_evaluation() {
    let (train, test) = pool(240, 7);
    let mut rng = Rng::seeded(10);
    let base = train_base(
        &train,
        TrainingRecipe::LnlProxy,
        &BaseTrainConfig {
            epochs: 15,
            ..Default::default()
        },
        &mut rng,
    )
    .unwrap();
    let consensus = build_consensus_dataset(&train, &base.predict_all(&train).unwrap()).unwrap();
    let config = TrainConfig {
        lambda: 0.2,
        epochs: 40,
        hidden: 16,
        seed: 3,
        train_ai_normalization: NormalizationMode::Test,
        ..Default::default()
    };
    let model = train_lecodu(&consensus.dataset, &base, &config).unwrap();
    let provider_seed = 17;
    let app = app_with(vec![("m", model.clone())], test.clone(), None);
    let id = create(&app, "m", json!({ "seed": 2, "provider_seed": provider_seed, "limit": 200, "human_slots": 1 })).await;

    let provider = RecordedProvider::from_dataset(&test, provider_seed);
    let mut served = Vec::new();
    loop {
        let (_, q) = call(&app, "GET", &format!("/sessions/{id}/next"), None).await;
        if q["done"] == true {
            break;
        }
        let sid = q["sample_id"].as_u64().unwrap();
        served.push(sid);
        let needed = q["labels_needed"].as_u64().unwrap() as usize;
        if needed > 0 {
            let answer = provider.shuffled(sid).unwrap()[..needed].to_vec();
            let (status, _) = call(&app, "POST", &format!("/sessions/{id}/labels"), Some(json!({ "sample_id": sid, "labels": answer }))).await;
            assert_eq!(status, StatusCode::OK);
        }
    }
    assert_eq!(served.len(), 200);
    let (_, stats) = call(&app, "GET", &format!("/sessions/{id}/stats"), None).await;

    let subset = MultiRaterDataset {
        samples: test
            .samples
            .iter()
            .filter(|s| served.contains(&s.id))
            .cloned()
            .collect(),
        ..test.clone()
    };
    let offline = evaluate(&model, &subset, provider_seed).unwrap();
    assert_eq!(stats["cost"].as_u64().unwrap() as usize, offline.total_cost);
    assert_eq!(stats["accuracy"].as_f64().unwrap(), offline.accuracy);
    assert!(offline.total_cost > 0, "policy never consulted users");
}
