//! HTTP facade over the session engine.
//!
//! Three endpoints drive a live session:
//!
//! - `GET /next-hit?worker=ID` returns the worker's open HIT, assigning one if needed.
//! - `POST /submit` with `{worker, hit_id, boxes, elapsed, contribution?}` scores and settles it.
//! - `GET /status?worker=ID` returns the ledger snapshot behind the banner.
//!
//! One mutex guards the engine, so requests are serialized across all
//! workers and the event log has a single writer. Errors are JSON
//! `{"error": message}` bodies.

use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;
use vgold_core::dataset::Corpus;
use vgold_core::session::{
    read_log, ConditionSpec, Engine, EngineError, NdjsonSink, NextHit, Submission, SystemClock,
};

pub type SharedEngine = Arc<Mutex<Engine>>;

#[derive(Debug, Clone, Deserialize)]
pub struct WorkerQuery {
    pub worker: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub worker: String,
    pub hit_id: String,
    #[serde(flatten)]
    pub submission: Submission,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

/// A request failure with its HTTP status.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::UnknownWorker(_) => StatusCode::NOT_FOUND,
            EngineError::Blocked(_) => StatusCode::FORBIDDEN,
            EngineError::Departed(_) | EngineError::StaleHit { .. } => StatusCode::CONFLICT,
            EngineError::InvalidSubmission(_) => StatusCode::UNPROCESSABLE_ENTITY,
            EngineError::Config(_) | EngineError::Replay { .. } | EngineError::Log { .. } | EngineError::Io { .. } => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        Self::new(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(status = %self.status, "{}", self.message);
        }
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

/// Rebuilds the engine from the log at `log` if it exists, then appends to it.
pub fn open_engine(spec: ConditionSpec, corpus: Arc<Corpus>, log: &Path) -> Result<Engine, EngineError> {
    let events = if log.exists() { read_log(log)? } else { Vec::new() };
    let sink = NdjsonSink::open(log)?;
    Engine::from_log(spec, corpus, &events, Box::new(SystemClock), Box::new(sink))
}

/// The three endpoints; `cors` adds a permissive CORS layer for browser clients.
pub fn router(engine: SharedEngine, cors: bool) -> Router {
    let app = Router::new()
        .route("/next-hit", get(next_hit))
        .route("/submit", post(submit))
        .route("/status", get(status))
        .with_state(engine);
    if cors {
        app.layer(CorsLayer::permissive())
    } else {
        app
    }
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, engine: SharedEngine, cors: bool) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, "task service listening");
    }
    axum::serve(listener, router(engine, cors)).await
}

fn lock(engine: &SharedEngine) -> Result<std::sync::MutexGuard<'_, Engine>, ApiError> {
    engine
        .lock()
        .map_err(|_| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "engine state poisoned by an earlier failure"))
}

fn worker_id(raw: &str) -> Result<&str, ApiError> {
    let id = raw.trim();
    if id.is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "worker must be non-empty"));
    }
    Ok(id)
}

async fn next_hit(
    State(engine): State<SharedEngine>,
    query: Result<Query<WorkerQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query?;
    let worker = worker_id(&q.worker)?;
    let next = lock(&engine)?.next_hit(worker)?;
    let status = match next {
        NextHit::Blocked { .. } => StatusCode::FORBIDDEN,
        NextHit::Assigned { .. } | NextHit::NoWork => StatusCode::OK,
    };
    Ok((status, Json(next)).into_response())
}

async fn submit(
    State(engine): State<SharedEngine>,
    body: Result<Json<SubmitRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    let worker = worker_id(&req.worker)?;
    let outcome = lock(&engine)?.submit(worker, &req.hit_id, req.submission)?;
    Ok(Json(outcome).into_response())
}

async fn status(
    State(engine): State<SharedEngine>,
    query: Result<Query<WorkerQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query?;
    let worker = worker_id(&q.worker)?;
    let view = lock(&engine)?.status(worker)?;
    Ok(Json(view).into_response())
}
