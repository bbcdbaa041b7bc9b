//! HTTP/JSON control plane over `forge-core`: a graph store, stepwise
//! training sessions with pollable metrics, and battles.
//!
//! | method | path                      | success |
//! |--------|---------------------------|---------|
//! | POST   | `/graphs`                 | 201 `{id, node_count, shapes, topo_order}` |
//! | GET    | `/graphs/{id}`            | 200 `{dsl, node_count, complexity}` |
//! | POST   | `/sessions`               | 201 `{session_id}` |
//! | GET    | `/sessions/{id}`          | 200 session summary |
//! | POST   | `/sessions/{id}/step`     | 200 `{step, latest}` |
//! | GET    | `/sessions/{id}/metrics`  | 200 `{points}` |
//! | POST   | `/battles`                | 201 `BattleResult` |
//! | GET    | `/healthz`                | 200 `ok` |

mod error;
mod state;

use std::io;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use forge_core::arena::{run_battle, BattleConfig, BattleResult, Metric, DEFAULT_PRIORITY};
use forge_core::data::DatasetSpec;
use forge_core::engine::TrainConfig;
use forge_core::metrics::MetricPoint;
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

pub use error::{ApiError, FieldError};
pub use state::SessionState;
use state::{AppState, Session};

/// Upper bound on `n` for a single step request.
pub const MAX_STEPS_PER_CALL: u64 = 10_000;

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateGraph {
    pub dsl: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub graph_id: String,
    pub train_config: TrainConfig,
    pub dataset: DatasetSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRequest {
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResponse {
    pub step: u64,
    pub latest: MetricPoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BattleRequestConfig {
    pub train_config: TrainConfig,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub priority: Option<Vec<Metric>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BattleRequest {
    pub graph_a: String,
    pub graph_b: String,
    pub config: BattleRequestConfig,
}

#[derive(Debug, Deserialize)]
struct MetricsQuery {
    since_step: Option<u64>,
}

/// A router over a fresh, empty store.
pub fn router() -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/graphs", post(create_graph))
        .route("/graphs/{id}", get(get_graph))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/step", post(step_session))
        .route("/sessions/{id}/metrics", get(session_metrics))
        .route("/battles", post(create_battle))
        .with_state(Arc::new(AppState::default()))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
}

async fn create_graph(
    State(app): State<Arc<AppState>>,
    body: Result<Json<CreateGraph>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let Json(body) = body?;
    let stored = app.insert_graph(body.dsl)?;
    let g = &stored.graph;
    Ok((
        StatusCode::CREATED,
        Json(serde_json::json!({
            "id": stored.id,
            "node_count": g.node_count(),
            "shapes": g.node_shapes(),
            "topo_order": g.topo_names().collect::<Vec<_>>(),
        })),
    ))
}

async fn get_graph(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<serde_json::Value>> {
    let stored = app.graph(&id)?;
    Ok(Json(serde_json::json!({
        "dsl": stored.dsl,
        "node_count": stored.graph.node_count(),
        "complexity": stored.complexity,
    })))
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let Json(body) = body?;
    let stored = app.graph(&body.graph_id)?;
    let session = blocking(move || {
        let data = app.dataset(&body.dataset)?;
        app.insert_session(stored, data, body.train_config, body.dataset)
    })
    .await?;
    Ok((
        StatusCode::CREATED,
        Json(serde_json::json!({ "session_id": session.id })),
    ))
}

async fn get_session(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<serde_json::Value>> {
    let s = app.session(&id)?;
    Ok(Json(serde_json::json!({
        "session_id": s.id,
        "graph_id": s.graph_id,
        "state": s.state(),
        "step": s.step(),
        "train_config": s.config,
        "dataset": s.dataset,
        "error": s.failure(),
    })))
}

async fn step_session(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<StepRequest>, JsonRejection>,
) -> ApiResult<Json<StepResponse>> {
    let session: Arc<Session> = app.session(&id)?;
    let Json(StepRequest { n }) = body?;
    if !(1..=MAX_STEPS_PER_CALL).contains(&n) {
        return Err(ApiError::invalid(
            "request",
            format!("n must be in 1..={MAX_STEPS_PER_CALL}, got {n}"),
        ));
    }
    let (step, latest) = blocking(move || session.step_by(n)).await?;
    Ok(Json(StepResponse { step, latest }))
}

async fn session_metrics(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    query: Result<Query<MetricsQuery>, QueryRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let session = app.session(&id)?;
    let Query(q) = query?;
    Ok(Json(
        serde_json::json!({ "points": session.points_after(q.since_step) }),
    ))
}

async fn create_battle(
    State(app): State<Arc<AppState>>,
    body: Result<Json<BattleRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<BattleResult>)> {
    let Json(req) = body?;
    let a = app.graph(&req.graph_a)?;
    let b = app.graph(&req.graph_b)?;
    let result = blocking(move || {
        let data = app.dataset(&req.config.dataset)?;
        let config = BattleConfig {
            train_config: req.config.train_config,
            dataset: req.config.dataset.label(),
            priority: req
                .config
                .priority
                .unwrap_or_else(|| DEFAULT_PRIORITY.to_vec()),
        };
        if config.priority.is_empty() {
            return Err(ApiError::invalid(
                "config",
                "priority must name at least one metric",
            ));
        }
        Ok(run_battle(
            (&a.id, a.graph.clone()),
            (&b.id, b.graph.clone()),
            data,
            &config,
        )?)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(result)))
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener) -> io::Result<()> {
    axum::serve(listener, router()).await
}

/// Binds `addr` and serves on a fresh multi-threaded runtime, blocking the
/// calling thread.
pub fn run(addr: SocketAddr) -> io::Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        serve(listener).await
    })
}

/// A server running on a background thread. Dropping it shuts it down.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// `http://host:port` with no trailing slash.
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Starts a server on `addr` (port 0 picks a free port) in a background
/// thread and returns once it is accepting connections.
pub fn spawn(addr: SocketAddr) -> io::Result<ServerHandle> {
    let std_listener = std::net::TcpListener::bind(addr)?;
    std_listener.set_nonblocking(true)?;
    let bound = std_listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new()
        .name("forge-service".into())
        .spawn(move || {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::from_std(std_listener)?;
                axum::serve(listener, router())
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
            })
        })?;
    Ok(ServerHandle {
        addr: bound,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
