//! Localhost HTTP service for interactive handle-based editing.
//!
//! Endpoints:
//! - `GET /health`
//! - `POST /session` with an OBJ body, answering `{id}`
//! - `POST /session/{id}/handles` with `{indices}`
//! - `POST /session/{id}/edit` with `{transforms}`, answering
//!   `{vertices, faceEnergy}`
//! - `GET /session/{id}/mesh`, answering OBJ text
//!
//! Errors are `{code, message, detail}`. Requests on one session are
//! serialized by a per-session lock; solves run on the blocking pool.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use deformkit::editing::{EditConfig, Editor, HandleSet, HandleTransform};
use deformkit::mesh::{parse_obj, write_obj};
use deformkit::net::Ljn;
use deformkit::Error as CoreError;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{Mutex, RwLock};

/// Error body `{code, message, detail}` with its status.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>, detail: Value) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            detail,
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no session {id}"), json!({ "id": id }))
    }

    fn bad_json(e: serde_json::Error) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", "malformed JSON body", json!(e.to_string()))
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let message = e.to_string();
        match e {
            CoreError::Parse { line, message: m } => Self::new(
                StatusCode::BAD_REQUEST,
                "parse_error",
                message,
                json!({ "line": line, "reason": m }),
            ),
            CoreError::IndexOutOfRange { face, index, count } => Self::new(
                StatusCode::BAD_REQUEST,
                "parse_error",
                message,
                json!({ "face": face, "index": index, "count": count }),
            ),
            CoreError::DegenerateFaces { faces } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_mesh", message, json!({ "faces": faces }))
            }
            CoreError::IsolatedVertices { vertices } => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid_mesh",
                message,
                json!({ "vertices": vertices }),
            ),
            CoreError::Disconnected { components } => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid_mesh",
                message,
                json!({ "components": components }),
            ),
            CoreError::SingularFrame { face } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_mesh", message, json!({ "faces": [face] }))
            }
            CoreError::InvalidHandles { indices, count } => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid_handles",
                message,
                json!({ "indices": indices, "vertexCount": count }),
            ),
            CoreError::SingularJacobian { faces } => {
                Self::new(StatusCode::CONFLICT, "singular_jacobian", message, json!({ "faces": faces }))
            }
            CoreError::InvalidArgument(m) | CoreError::DimensionMismatch(m) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_argument", message, json!(m))
            }
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message, Value::Null),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "code": self.code, "message": self.message, "detail": self.detail });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// One editing session. The editor and handle factorizations are immutable
/// and shared with the blocking solver tasks.
struct Session {
    editor: Arc<Editor>,
    handles: Option<Arc<HandleSet>>,
    current: Vec<Vector3<f64>>,
}

/// Shared service state.
pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    net: Option<Ljn>,
    config: EditConfig,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(net: Option<Ljn>, config: EditConfig) -> Arc<Self> {
        Arc::new(Self {
            sessions: RwLock::new(HashMap::new()),
            net,
            config,
            next_id: AtomicU64::new(1),
        })
    }

    /// Creates a session from OBJ text and returns its id.
    pub async fn create_session(&self, obj: String) -> ApiResult<String> {
        let net = self.net.clone();
        let config = self.config.clone();
        let editor = tokio::task::spawn_blocking(move || -> Result<Editor, CoreError> {
            let mesh = parse_obj(&obj)?;
            Editor::new(mesh, net, config)
        })
        .await
        .map_err(join_error)??;
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let current = editor.mesh().vertices().to_vec();
        let session = Session {
            editor: Arc::new(editor),
            handles: None,
            current,
        };
        self.sessions.write().await.insert(id.clone(), Arc::new(Mutex::new(session)));
        log::info!("created session {id}");
        Ok(id)
    }

    async fn session(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        self.sessions.read().await.get(id).cloned().ok_or_else(|| ApiError::not_found(id))
    }

    pub async fn session_count(&self) -> usize {
        self.sessions.read().await.len()
    }
}

fn join_error(e: tokio::task::JoinError) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "solver task failed", json!(e.to_string()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HandlesRequest {
    indices: Vec<usize>,
}

/// Wire form of a transform: `indices` or `all: true`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformRequest {
    #[serde(default)]
    indices: Option<Vec<usize>>,
    #[serde(default)]
    all: bool,
    rotation: [f64; 9],
    translation: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EditRequest {
    transforms: Vec<TransformRequest>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct EditResponse {
    vertices: Vec<f64>,
    /// Per-face symmetric Dirichlet; `null` on singular faces.
    face_energy: Vec<Option<f64>>,
    energy: f64,
    provisional_energy: f64,
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(ApiError::bad_json)
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "sessions": state.session_count().await,
        "network": state.net.is_some(),
    }))
}

async fn create(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Value>> {
    let obj = String::from_utf8(body.to_vec()).map_err(|e| {
        ApiError::new(StatusCode::BAD_REQUEST, "parse_error", "mesh body is not UTF-8", json!(e.to_string()))
    })?;
    let id = state.create_session(obj).await?;
    Ok(Json(json!({ "id": id })))
}

async fn set_handles(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let req: HandlesRequest = parse_json(&body)?;
    let session = state.session(&id).await?;
    let mut s = session.lock().await;
    let editor = Arc::clone(&s.editor);
    let set = tokio::task::spawn_blocking(move || editor.handle_set(&req.indices))
        .await
        .map_err(join_error)??;
    let indices = set.indices().to_vec();
    s.handles = if indices.is_empty() { None } else { Some(Arc::new(set)) };
    Ok(Json(json!({ "indices": indices })))
}

async fn edit(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<EditResponse>> {
    let req: EditRequest = parse_json(&body)?;
    let mut transforms = Vec::with_capacity(req.transforms.len());
    for t in req.transforms {
        let indices = match (t.indices, t.all) {
            (Some(_), true) => {
                return Err(ApiError::new(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    "invalid_argument",
                    "a transform takes either indices or all",
                    Value::Null,
                ))
            }
            (None, false) => {
                return Err(ApiError::new(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    "invalid_argument",
                    "a transform needs indices or all: true",
                    Value::Null,
                ))
            }
            (i, _) => i,
        };
        transforms.push(HandleTransform {
            indices,
            rotation: t.rotation,
            translation: t.translation,
        });
    }
    let session = state.session(&id).await?;
    let mut s = session.lock().await;
    let handles = s.handles.clone().ok_or_else(|| {
        ApiError::new(StatusCode::CONFLICT, "no_handles", "set handles before editing", Value::Null)
    })?;
    let editor = Arc::clone(&s.editor);
    let result = tokio::task::spawn_blocking(move || editor.apply(&handles, &transforms))
        .await
        .map_err(join_error)??;
    let vertices = result.vertices.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
    let face_energy = result
        .energy
        .per_face
        .iter()
        .map(|&e| if e.is_finite() { Some(e) } else { None })
        .collect();
    s.current = result.vertices;
    Ok(Json(EditResponse {
        vertices,
        face_energy,
        energy: result.energy.mean,
        provisional_energy: result.provisional_energy.mean,
    }))
}

async fn mesh(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = state.session(&id).await?;
    let s = session.lock().await;
    let obj = write_obj(&s.current, s.editor.mesh().faces());
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], obj).into_response())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/session", post(create))
        .route("/session/{id}/handles", post(set_handles))
        .route("/session/{id}/edit", post(edit))
        .route("/session/{id}/mesh", get(mesh))
        .with_state(state)
}

/// Binds `addr`, failing cleanly when the port is taken.
pub async fn bind(addr: SocketAddr) -> std::io::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr).await
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
