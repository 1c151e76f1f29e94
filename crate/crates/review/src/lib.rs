//! HTTP front end for the review queues.
//!
//! Reads open their own read-only view of the store, so they never wait
//! on a decision being written. Writes go through one shared writer.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use comt_core::review::{self, ReviewError, ReviewKind, DEFAULT_PAGE_SIZE};
use comt_core::RecordStore;
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;
use tower_http::services::ServeDir;

pub const REVIEWER_HEADER: &str = "x-reviewer-id";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("reviewer list is empty")]
    NoReviewers,
}

/// Reviewer list file:
///
/// ```toml
/// reviewers = ["dr-a", "dr-b"]
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewerConfig {
    pub reviewers: BTreeSet<String>,
}

impl ReviewerConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let cfg: ReviewerConfig = toml::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        if cfg.reviewers.iter().all(|r| r.trim().is_empty()) {
            return Err(ConfigError::NoReviewers);
        }
        Ok(cfg)
    }
}

#[derive(Clone)]
pub struct AppState {
    root: PathBuf,
    writer: Arc<Mutex<RecordStore>>,
    reviewers: Arc<BTreeSet<String>>,
}

impl AppState {
    /// Takes ownership of the store writer.
    pub fn new(store: RecordStore, reviewers: impl IntoIterator<Item = String>) -> Self {
        AppState {
            root: store.root().to_path_buf(),
            writer: Arc::new(Mutex::new(store)),
            reviewers: Arc::new(reviewers.into_iter().collect()),
        }
    }

    fn reader(&self) -> Result<RecordStore, ApiError> {
        RecordStore::open_read(&self.root).map_err(|e| ApiError(ReviewError::Store(e)))
    }
}

struct ApiError(ReviewError);

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let message = self.0.to_string();
        let (status, body) = match self.0 {
            ReviewError::UnknownKind(_) | ReviewError::Invalid(_) | ReviewError::UnknownReviewer(_) => {
                (StatusCode::BAD_REQUEST, json!({ "error": message }))
            }
            ReviewError::NotFound(_) => (StatusCode::NOT_FOUND, json!({ "error": message })),
            ReviewError::Conflict { current_version, state, .. } => {
                (StatusCode::CONFLICT, json!({ "error": message, "current_version": current_version, "state": state }))
            }
            ReviewError::Store(_) => {
                log::error!("{message}");
                (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": message }))
            }
        };
        (status, Json(body)).into_response()
    }
}

fn reviewer(state: &AppState, headers: &HeaderMap) -> Result<String, ApiError> {
    let id = headers
        .get(REVIEWER_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .ok_or_else(|| ReviewError::Invalid(format!("missing {REVIEWER_HEADER} header")))?;
    if !state.reviewers.contains(id) {
        return Err(ReviewError::UnknownReviewer(id.to_string()).into());
    }
    Ok(id.to_string())
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.expect("store task panicked")
}

#[derive(Debug, Deserialize)]
struct QueueQuery {
    kind: Option<String>,
    cursor: Option<String>,
    limit: Option<usize>,
}

async fn queue(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<QueueQuery>,
) -> Result<Json<Value>, ApiError> {
    reviewer(&state, &headers)?;
    let kind: ReviewKind = q.kind.as_deref().unwrap_or("").parse()?;
    blocking(move || {
        let store = state.reader()?;
        let page = review::list_queue(&store, kind, q.cursor.as_deref(), q.limit.unwrap_or(DEFAULT_PAGE_SIZE))?;
        Ok(Json(serde_json::to_value(page).expect("page serializes")))
    })
    .await
}

async fn item(
    State(state): State<AppState>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Value>, ApiError> {
    reviewer(&state, &headers)?;
    blocking(move || {
        let store = state.reader()?;
        Ok(Json(serde_json::to_value(review::get_item(&store, &id)?).expect("item serializes")))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionBody {
    version: u64,
    reviewer_id: String,
    decision: Value,
}

async fn decide(
    State(state): State<AppState>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<DecisionBody>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<Value>, ApiError> {
    let who = reviewer(&state, &headers)?;
    let Json(body) = body.map_err(|e| ReviewError::Invalid(e.body_text()))?;
    if body.reviewer_id != who {
        return Err(ReviewError::Invalid(format!(
            "body reviewer_id {:?} does not match the {REVIEWER_HEADER} header",
            body.reviewer_id
        ))
        .into());
    }
    blocking(move || {
        let mut store = state.writer.lock().expect("writer lock poisoned");
        let item = review::submit_decision(&mut store, &id, body.version, &who, &body.decision)?;
        log::info!("{who} decided {id} at v{}", body.version);
        Ok(Json(serde_json::to_value(item).expect("item serializes")))
    })
    .await
}

async fn progress(State(state): State<AppState>, headers: HeaderMap) -> Result<Json<Value>, ApiError> {
    reviewer(&state, &headers)?;
    blocking(move || {
        let store = state.reader()?;
        Ok(Json(serde_json::to_value(review::progress(&store)?).expect("progress serializes")))
    })
    .await
}

async fn advance(State(state): State<AppState>, headers: HeaderMap) -> Result<Json<Value>, ApiError> {
    let who = reviewer(&state, &headers)?;
    blocking(move || {
        let mut store = state.writer.lock().expect("writer lock poisoned");
        let outcome = review::advance_round(&mut store, &who)?;
        log::info!("{who} promoted {} records to round 2", outcome.promoted.len());
        Ok(Json(serde_json::to_value(outcome).expect("outcome serializes")))
    })
    .await
}

/// The API under `/api`, plus static files from `static_dir` for any
/// other path.
pub fn router(state: AppState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/queue", get(queue))
        .route("/api/items/{id}", get(item))
        .route("/api/items/{id}/decision", post(decide))
        .route("/api/progress", get(progress))
        .route("/api/rounds/advance", post(advance))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(addr: SocketAddr, app: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("review service listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await
}
