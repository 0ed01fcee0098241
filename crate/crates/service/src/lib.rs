//! HTTP adapter over an archface workspace.
//!
//! | method | path                                  | body                      |
//! |--------|---------------------------------------|---------------------------|
//! | GET    | `/api/entities`                       |                           |
//! | GET    | `/api/entities/{id}/faces`            |                           |
//! | POST   | `/api/entities/{id}/reference`        | `{"face_id": ..}`         |
//! | POST   | `/api/entities/{id}/filter-preview`   | `{"strategy", "lambda1"}` |
//! | GET    | `/api/session`                        |                           |
//! | GET    | `/api/graph?min_edge_weight=n`        |                           |
//!
//! Face crops are served from `/crops/`, the UI bundle from `/`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use archface_core::cooccurrence::{export_graph, GraphFormat};
use archface_core::dictionary::{preview_filter, TargetStrategy};
use archface_core::pipeline::relation_graph;
use archface_core::workspace::Workspace;
use archface_core::Error;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;
use tracing::{info, warn};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::MissingReference(_) | Error::EmptySampleSet(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Config(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: &self.message })).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

pub struct AppState {
    root: PathBuf,
    entity_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl AppState {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            entity_locks: Mutex::new(HashMap::new()),
        }
    }

    fn workspace(&self) -> ApiResult<Workspace> {
        Workspace::open(&self.root).map_err(|e| ApiError::new(StatusCode::CONFLICT, e.to_string()))
    }

    fn entity_lock(&self, entity_id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.entity_locks.lock().unwrap_or_else(|p| p.into_inner());
        locks.entry(entity_id.to_string()).or_default().clone()
    }
}

/// Runs file-system work off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn list_entities(State(state): State<Arc<AppState>>) -> ApiResult<Response> {
    blocking(move || {
        let ws = state.workspace()?;
        Ok(Json(ws.entity_summaries()?).into_response())
    })
    .await
}

async fn list_faces(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(move || {
        let ws = state.workspace()?;
        Ok(Json(ws.face_listing(&id)?).into_response())
    })
    .await
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceRequest {
    pub face_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceResponse {
    pub entity_id: String,
    pub reference_face_id: String,
}

async fn set_reference(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<ReferenceRequest>,
) -> ApiResult<Response> {
    blocking(move || {
        let ws = state.workspace()?;
        let lock = state.entity_lock(&id);
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
        ws.set_reference(&id, &body.face_id)?;
        info!(entity = %id, face = %body.face_id, "reference face set");
        Ok(Json(ReferenceResponse {
            entity_id: id,
            reference_face_id: body.face_id,
        })
        .into_response())
    })
    .await
}

/// Omitted fields fall back to the workspace session.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PreviewRequest {
    pub strategy: Option<TargetStrategy>,
    pub lambda1: Option<f64>,
}

async fn filter_preview(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<PreviewRequest>,
) -> ApiResult<Response> {
    blocking(move || {
        let ws = state.workspace()?;
        let session = ws.load_session()?;
        let set = ws.load_sample_set(&id)?;
        let preview = preview_filter(
            &set,
            body.strategy.unwrap_or(session.strategy),
            body.lambda1.unwrap_or(session.lambda1),
        )?;
        Ok(Json(preview).into_response())
    })
    .await
}

async fn session(State(state): State<Arc<AppState>>) -> ApiResult<Response> {
    blocking(move || {
        let ws = state.workspace()?;
        Ok(Json(ws.load_session()?).into_response())
    })
    .await
}

#[derive(Debug, Clone, Copy, Deserialize)]
struct GraphQuery {
    min_edge_weight: Option<u64>,
}

async fn graph(State(state): State<Arc<AppState>>, Query(q): Query<GraphQuery>) -> ApiResult<Response> {
    blocking(move || {
        let ws = Workspace::new(&state.root);
        let results = ws.load_results()?;
        let (_, graph) = relation_graph(&results, &ws.entity_names()?, q.min_edge_weight.unwrap_or(1));
        let bytes = export_graph(&graph, GraphFormat::Json);
        Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
    })
    .await
}

/// The full application: API routes, crop files and the UI bundle.
pub fn router(root: impl Into<PathBuf>, ui_dir: Option<PathBuf>) -> Router {
    let root = root.into();
    let ws = Workspace::new(&root);
    let ui_dir = ui_dir.unwrap_or_else(|| root.join("ui"));
    let state = Arc::new(AppState::new(root));
    let api = Router::new()
        .route("/entities", get(list_entities))
        .route("/entities/{id}/faces", get(list_faces))
        .route("/entities/{id}/reference", post(set_reference))
        .route("/entities/{id}/filter-preview", post(filter_preview))
        .route("/session", get(session))
        .route("/graph", get(graph))
        .with_state(state);
    Router::new()
        .nest("/api", api)
        .nest_service("/crops", ServeDir::new(ws.crops_dir()))
        .fallback_service(ServeDir::new(ui_dir).append_index_html_on_directories(true))
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub workspace: PathBuf,
    pub addr: SocketAddr,
    pub ui_dir: Option<PathBuf>,
}

/// Binds and serves until Ctrl-C.
pub async fn serve(config: ServeConfig) -> std::io::Result<()> {
    if !config.addr.ip().is_loopback() {
        warn!(addr = %config.addr, "binding to a non-loopback address; the service has no authentication");
        eprintln!(
            "warning: serving on {} without authentication; anyone who can reach this address can modify the workspace",
            config.addr
        );
    }
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    info!(addr = %listener.local_addr()?, workspace = %config.workspace.display(), "serving");
    axum::serve(listener, router(config.workspace, config.ui_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
