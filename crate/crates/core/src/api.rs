//! JSON-over-HTTP service for co-writing sessions.
//!
//! | method | path                          | body                          |
//! |--------|-------------------------------|-------------------------------|
//! | POST   | `/sessions`                   | session config (optional)     |
//! | GET    | `/sessions/{id}[?debug=true]` |                               |
//! | GET    | `/sessions/{id}/log`          |                               |
//! | POST   | `/sessions/{id}/edit`         | `{field, text}`               |
//! | POST   | `/sessions/{id}/switch_field` | `{field}`                     |
//! | POST   | `/sessions/{id}/leave_field`  |                               |
//! | POST   | `/sessions/{id}/skip`         |                               |
//! | POST   | `/sessions/{id}/feedback`     | `{action?, content?}`         |
//!
//! Agent turns run in the background after the request that triggered them
//! returns; clients poll `GET /sessions/{id}`. Requests for one session are
//! applied in arrival order through a per-session async mutex. GET never
//! waits on that mutex: it reads the view published after the last change.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex as AsyncMutex;

use crate::comms::{Generator, GeneratorBackend};
use crate::log::{Clock, SystemClock};
use crate::session::{FeedbackParts, Phase, Session, SessionConfig, SessionError, SessionView};
use crate::story::{SessionId, StoryField};

/// Server-wide settings.
#[derive(Clone)]
pub struct ServerOptions {
    /// Directory for per-session JSONL logs and the index file. `None` keeps
    /// logs in memory only.
    pub data_dir: Option<PathBuf>,
    pub generator: GeneratorBackend,
    /// Allow `?debug=true` views that expose the bandit state.
    pub allow_debug: bool,
    pub clock: Arc<dyn Clock>,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self {
            data_dir: None,
            generator: GeneratorBackend::default(),
            allow_debug: true,
            clock: Arc::new(SystemClock),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHandle {
    pub session_id: SessionId,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    pub config: SessionConfig,
}

struct SessionSlot {
    handle: SessionHandle,
    session: Arc<AsyncMutex<Session>>,
    generator: Arc<dyn Generator>,
    view: RwLock<SessionView>,
}

impl SessionSlot {
    fn publish(&self, session: &Session) {
        let view = session.view(true);
        *self.view.write().unwrap_or_else(|e| e.into_inner()) = view;
    }

    fn current_view(&self, debug: bool) -> SessionView {
        let mut v = self.view.read().unwrap_or_else(|e| e.into_inner()).clone();
        if !debug {
            v.bandit = None;
        }
        v
    }
}

struct Inner {
    options: ServerOptions,
    sessions: RwLock<HashMap<SessionId, Arc<SessionSlot>>>,
    index: Mutex<Option<File>>,
}

/// Shared server state. Cheap to clone.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(options: ServerOptions) -> std::io::Result<Self> {
        let index = match &options.data_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                Some(
                    OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(dir.join("index.jsonl"))?,
                )
            }
            None => None,
        };
        Ok(Self {
            inner: Arc::new(Inner {
                options,
                sessions: RwLock::new(HashMap::new()),
                index: Mutex::new(index),
            }),
        })
    }

    fn slot(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        self.inner
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(&SessionId(id.to_string()))
            .cloned()
            .ok_or(ApiError::NotFound)
    }

    /// Path of a session's log file, if logs are persisted.
    pub fn log_path(&self, id: &SessionId) -> Option<PathBuf> {
        self.inner
            .options
            .data_dir
            .as_deref()
            .map(|d| log_file(d, id))
    }

    /// Current view of a session.
    pub fn view(&self, id: &SessionId, debug: bool) -> Option<SessionView> {
        self.slot(&id.0).ok().map(|s| s.current_view(debug))
    }

    fn create(&self, config: SessionConfig) -> Result<(SessionHandle, SessionView), ApiError> {
        let id = SessionId::new_random();
        let mut session = Session::with_clock(id.clone(), config.clone(), self.inner.options.clock.clone())
            .map_err(|e| ApiError::BadRequest(e.to_string()))?;
        let created_at = session.records()[0].ts;
        if let Some(dir) = &self.inner.options.data_dir {
            let path = log_file(dir, &id);
            match File::create(&path) {
                Ok(f) => session.log_mut().set_sink(Box::new(f)),
                Err(e) => tracing::error!(path = %path.display(), error = %e, "cannot create session log"),
            }
            let mut index = self.inner.index.lock().unwrap_or_else(|e| e.into_inner());
            if let Some(index) = index.as_mut() {
                let line = json!({"session_id": id, "file": path.file_name().map(|f| f.to_string_lossy()), "created_at": created_at});
                if let Err(e) = writeln!(index, "{line}") {
                    tracing::error!(error = %e, "cannot append to session index");
                }
            }
        }
        let handle = SessionHandle {
            session_id: id.clone(),
            created_at,
            config,
        };
        let view = session.view(true);
        let slot = Arc::new(SessionSlot {
            handle: handle.clone(),
            generator: Arc::from(self.inner.options.generator.build()),
            view: RwLock::new(view),
            session: Arc::new(AsyncMutex::new(session)),
        });
        let out = slot.current_view(false);
        self.inner
            .sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id, slot);
        Ok((handle, out))
    }

    /// Applies `op` under the session's lock, publishes the new view and
    /// starts an agent turn if the session entered agent initiative.
    async fn mutate<F>(&self, id: &str, op: F) -> Result<SessionView, ApiError>
    where
        F: FnOnce(&mut Session) -> Result<(), SessionError>,
    {
        let slot = self.slot(id)?;
        let mut session = slot.session.clone().lock_owned().await;
        let result = op(&mut session);
        slot.publish(&session);
        result?;
        let view = slot.current_view(false);
        if session.phase() == Phase::AgentInitiative {
            spawn_agent_turn(slot.clone(), session);
        }
        Ok(view)
    }
}

fn log_file(dir: &Path, id: &SessionId) -> PathBuf {
    dir.join(format!("{id}.jsonl"))
}

fn spawn_agent_turn(slot: Arc<SessionSlot>, mut session: tokio::sync::OwnedMutexGuard<Session>) {
    tokio::task::spawn_blocking(move || {
        if session.phase() != Phase::AgentInitiative {
            return;
        }
        if let Err(e) = session.run_agent_turn(slot.generator.as_ref()) {
            tracing::warn!(session = %session.id(), error = %e, "agent turn failed");
        }
        slot.publish(&session);
    });
}

#[derive(Debug)]
pub enum ApiError {
    NotFound,
    BadRequest(String),
    Conflict { phase: Phase, message: String },
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::WrongPhase { actual } => ApiError::Conflict {
                phase: actual,
                message: e.to_string(),
            },
            other => ApiError::BadRequest(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        match self {
            ApiError::NotFound => (
                StatusCode::NOT_FOUND,
                Json(json!({"error": "unknown session"})),
            )
                .into_response(),
            ApiError::BadRequest(msg) => {
                (StatusCode::BAD_REQUEST, Json(json!({"error": msg}))).into_response()
            }
            ApiError::Conflict { phase, message } => (
                StatusCode::CONFLICT,
                Json(json!({"error": message, "phase": phase})),
            )
                .into_response(),
        }
    }
}

fn parse_body<T: for<'de> Deserialize<'de> + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("invalid body: {e}")))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EditBody {
    field: Option<String>,
    text: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SwitchBody {
    field: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackBody {
    action: Option<String>,
    content: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct ViewQuery {
    #[serde(default)]
    debug: bool,
}

fn field_of(name: Option<String>) -> Result<StoryField, ApiError> {
    name.ok_or_else(|| ApiError::BadRequest("missing field".into()))?
        .parse()
        .map_err(|e: crate::story::StoryError| ApiError::BadRequest(e.to_string()))
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let config: SessionConfig = parse_body(&body)?;
    let (handle, state) = app.create(config)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({"session": handle, "state": state})),
    )
        .into_response())
}

async fn get_session(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<ViewQuery>,
) -> Result<Json<SessionView>, ApiError> {
    let slot = app.slot(&id)?;
    Ok(Json(slot.current_view(q.debug && app.inner.options.allow_debug)))
}

async fn get_handle(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionHandle>, ApiError> {
    Ok(Json(app.slot(&id)?.handle.clone()))
}

async fn get_log(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let slot = app.slot(&id)?;
    let session = slot.session.lock().await;
    Ok((
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        session.log().to_jsonl(),
    )
        .into_response())
}

async fn edit(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<SessionView>, ApiError> {
    let b: EditBody = parse_body(&body)?;
    let field = field_of(b.field)?;
    let text = b.text.ok_or_else(|| ApiError::BadRequest("missing text".into()))?;
    app.mutate(&id, |s| s.edit(field, &text).map(|_| ())).await.map(Json)
}

async fn switch_field(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<SessionView>, ApiError> {
    let b: SwitchBody = parse_body(&body)?;
    let field = field_of(b.field)?;
    app.mutate(&id, |s| s.switch_field(field).map(|_| ())).await.map(Json)
}

async fn leave_field(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionView>, ApiError> {
    app.mutate(&id, |s| s.leave_field().map(|_| ())).await.map(Json)
}

async fn skip(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionView>, ApiError> {
    app.mutate(&id, Session::skip).await.map(Json)
}

async fn feedback(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<SessionView>, ApiError> {
    let b: FeedbackBody = parse_body(&body)?;
    let parse = |v: Option<String>| {
        v.map(|s| s.parse().map_err(ApiError::BadRequest))
            .transpose()
    };
    let parts = FeedbackParts {
        action: parse(b.action)?,
        content: parse(b.content)?,
    };
    app.mutate(&id, |s| s.submit_feedback(parts).map(|_| ())).await.map(Json)
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/handle", get(get_handle))
        .route("/sessions/{id}/log", get(get_log))
        .route("/sessions/{id}/edit", post(edit))
        .route("/sessions/{id}/switch_field", post(switch_field))
        .route("/sessions/{id}/leave_field", post(leave_field))
        .route("/sessions/{id}/skip", post(skip))
        .route("/sessions/{id}/feedback", post(feedback))
        .with_state(app)
}

/// Serves the API until ctrl-c.
pub async fn serve(addr: std::net::SocketAddr, app: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
