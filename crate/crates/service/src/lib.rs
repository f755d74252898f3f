//! HTTP service for live deferral sessions.
//!
//! Routes: `POST /sessions`, `GET /sessions/{id}/next`,
//! `POST /sessions/{id}/labels`, `GET /sessions/{id}/stats`, `GET /bundles`.
//! Every body is JSON; errors are `{"code", "message"}`.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lecodu::bundle::{load_bundle, CONFIG_FILE};
use lecodu::collab::{LecoduModel, TrainConfig};
use lecodu::taskgen::MultiRaterDataset;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub mod events;
pub mod session;

pub use session::{NextResponse, Query, Resolution, Session, SessionOptions, Stats, StatsView};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    fn status_and_code(&self) -> (StatusCode, &'static str) {
        match self {
            Self::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Self::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            Self::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            Self::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            Self::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, code) = self.status_and_code();
        (status, Json(json!({ "code": code, "message": self.to_string() }))).into_response()
    }
}

/// A trained model offered to sessions.
#[derive(Debug, Clone)]
pub struct BundleEntry {
    pub model: Arc<LecoduModel>,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleInfo {
    pub id: String,
    pub lambda: f64,
    pub m: usize,
    pub num_classes: usize,
}

pub struct AppState {
    bundles: BTreeMap<String, BundleEntry>,
    pool: Arc<MultiRaterDataset>,
    sessions: Mutex<HashMap<u64, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
    log_dir: Option<PathBuf>,
}

impl AppState {
    /// `pool` is the recorded test pool every session draws from.
    pub fn new(pool: MultiRaterDataset, log_dir: Option<PathBuf>) -> Self {
        Self {
            bundles: BTreeMap::new(),
            pool: Arc::new(pool),
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            log_dir,
        }
    }

    pub fn add_bundle(&mut self, id: impl Into<String>, model: LecoduModel, config: TrainConfig) {
        self.bundles.insert(
            id.into(),
            BundleEntry {
                model: Arc::new(model),
                config,
            },
        );
    }

    /// Registers every subdirectory of `dir` that holds a bundle, keyed by
    /// directory name.
    pub fn load_bundles(&mut self, dir: &Path) -> lecodu::Result<usize> {
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(CONFIG_FILE).is_file())
            .collect();
        entries.sort();
        for path in &entries {
            let (model, config) = load_bundle(path)?;
            let id = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            self.add_bundle(id, model, config);
        }
        Ok(entries.len())
    }

    pub fn bundles(&self) -> Vec<BundleInfo> {
        self.bundles
            .iter()
            .map(|(id, b)| BundleInfo {
                id: id.clone(),
                lambda: b.config.lambda,
                m: b.model.m,
                num_classes: b.model.num_classes(),
            })
            .collect()
    }

    pub fn create_session(&self, bundle: &str, options: SessionOptions) -> Result<u64, ServiceError> {
        let entry = self
            .bundles
            .get(bundle)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown bundle {bundle:?}")))?;
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let log = match &self.log_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| ServiceError::Internal(e.to_string()))?;
                Some(
                    File::create(dir.join(format!("session-{id}.jsonl")))
                        .map_err(|e| ServiceError::Internal(e.to_string()))?,
                )
            }
            None => None,
        };
        let session = Session::new(
            id,
            bundle.to_string(),
            entry.model.clone(),
            self.pool.clone(),
            options,
            log,
        )?;
        self.sessions
            .lock()
            .expect("session map poisoned")
            .insert(id, Arc::new(Mutex::new(session)));
        Ok(id)
    }

    pub fn session(&self, id: u64) -> Result<Arc<Mutex<Session>>, ServiceError> {
        self.sessions
            .lock()
            .expect("session map poisoned")
            .get(&id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("unknown session {id}")))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    bundle: String,
    #[serde(default)]
    overrides: SessionOptions,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelsBody {
    sample_id: u64,
    labels: Vec<usize>,
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::Validation(format!("invalid request body: {e}")))
}

fn parse_id(raw: &str) -> Result<u64, ServiceError> {
    raw.parse()
        .map_err(|_| ServiceError::NotFound(format!("unknown session {raw:?}")))
}

async fn list_bundles(State(state): State<Arc<AppState>>) -> Json<Vec<BundleInfo>> {
    Json(state.bundles())
}

async fn create(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ServiceError> {
    let body: CreateBody = parse_body(&body)?;
    let id = state.create_session(&body.bundle, body.overrides)?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id })).into_response()).into_response())
}

async fn next(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<NextResponse>, ServiceError> {
    let session = state.session(parse_id(&id)?)?;
    let mut session = session.lock().expect("session poisoned");
    session.next().map(Json)
}

async fn labels(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<Resolution>, ServiceError> {
    let session = state.session(parse_id(&id)?)?;
    let body: LabelsBody = parse_body(&body)?;
    let mut session = session.lock().expect("session poisoned");
    session.submit(body.sample_id, &body.labels).map(Json)
}

async fn stats(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<StatsView>, ServiceError> {
    let session = state.session(parse_id(&id)?)?;
    let session = session.lock().expect("session poisoned");
    Ok(Json(session.stats()))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/bundles", get(list_bundles))
        .route("/sessions", post(create))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/labels", post(labels))
        .route("/sessions/{id}/stats", get(stats))
        .fallback(|| async { ServiceError::NotFound("no such route".into()) })
        .with_state(state)
}

/// Binds `addr` and serves until the task is cancelled.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state))).await
}
