//! HTTP and websocket front for [`SessionHost`].
//!
//! Routes:
//! - `GET /healthz`
//! - `POST /session` issues a session token
//! - `GET /ws?session=<token>` runs one session over a websocket
//! - `GET /session/{id}/log` downloads a finished session's JSONL log
//! - `GET /transient/{material}?velocity=<m/s>` renders a transient as WAV

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::Rng;
use serde::Deserialize;
use serde_json::json;

use tapstroop::service::{HostConfig, SessionHost};
use tapstroop::signal::{render_transient, Material};
use tapstroop::storage::{encode_wav, write_log_file};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub host: HostConfig,
    pub logs_dir: PathBuf,
    pub max_active: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionState {
    /// Token handed out, nobody connected yet.
    Issued,
    Active,
    /// Log written; `complete` is false for sessions cut short.
    Done { path: PathBuf, complete: bool },
}

#[derive(Debug)]
pub struct Busy;

impl std::fmt::Display for Busy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("too many active sessions")
    }
}

impl std::error::Error for Busy {}

struct Shared {
    config: ServerConfig,
    sessions: Mutex<HashMap<String, SessionState>>,
    epoch: Instant,
}

/// Cheaply clonable handle to the server's session table.
#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(config: ServerConfig) -> Self {
        Self(Arc::new(Shared {
            config,
            sessions: Mutex::new(HashMap::new()),
            epoch: Instant::now(),
        }))
    }

    fn now_us(&self) -> u64 {
        self.0.epoch.elapsed().as_micros() as u64
    }

    /// Issues a fresh session token unless the active limit is reached.
    pub fn issue_token(&self) -> Result<String, Busy> {
        let mut sessions = self.0.sessions.lock().expect("session table poisoned");
        let open = sessions
            .values()
            .filter(|s| matches!(s, SessionState::Issued | SessionState::Active))
            .count();
        if open >= self.0.config.max_active {
            return Err(Busy);
        }
        let token = format!("{:032x}", rand::rng().random::<u128>());
        sessions.insert(token.clone(), SessionState::Issued);
        Ok(token)
    }

    pub fn session_state(&self, id: &str) -> Option<SessionState> {
        self.0.sessions.lock().expect("session table poisoned").get(id).cloned()
    }

    fn set_state(&self, id: &str, state: SessionState) {
        self.0
            .sessions
            .lock()
            .expect("session table poisoned")
            .insert(id.to_string(), state);
    }

    fn claim(&self, id: &str) -> Result<(), StatusCode> {
        let mut sessions = self.0.sessions.lock().expect("session table poisoned");
        match sessions.get_mut(id) {
            None => Err(StatusCode::NOT_FOUND),
            Some(s @ SessionState::Issued) => {
                *s = SessionState::Active;
                Ok(())
            }
            Some(_) => Err(StatusCode::CONFLICT),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/session", post(new_session))
        .route("/session/{id}/log", get(session_log))
        .route("/transient/{material}", get(transient))
        .route("/ws", get(ws_upgrade))
        .with_state(state)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn healthz(State(state): State<AppState>) -> Response {
    let active = state
        .0
        .sessions
        .lock()
        .expect("session table poisoned")
        .values()
        .filter(|s| **s == SessionState::Active)
        .count();
    Json(json!({ "status": "ok", "active_sessions": active })).into_response()
}

async fn new_session(State(state): State<AppState>) -> Response {
    match state.issue_token() {
        Ok(token) => (
            StatusCode::CREATED,
            Json(json!({ "session_id": token, "ws": format!("/ws?session={token}") })),
        )
            .into_response(),
        Err(e) => error(StatusCode::SERVICE_UNAVAILABLE, e.to_string()),
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

async fn session_log(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    if !valid_id(&id) {
        return error(StatusCode::NOT_FOUND, "unknown session");
    }
    let path = match state.session_state(&id) {
        Some(SessionState::Done { path, .. }) => path,
        Some(_) => return error(StatusCode::CONFLICT, "session still in progress"),
        // logs from earlier server runs
        None => state.0.config.logs_dir.join(format!("{id}.jsonl")),
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "application/x-ndjson")], bytes).into_response(),
        Err(_) => error(StatusCode::NOT_FOUND, "unknown session"),
    }
}

#[derive(Debug, Deserialize)]
struct TransientQuery {
    velocity: f64,
}

async fn transient(
    State(state): State<AppState>,
    Path(material): Path<String>,
    Query(q): Query<TransientQuery>,
) -> Response {
    let material: Material = match material.parse() {
        Ok(m) => m,
        Err(e) => return error(StatusCode::NOT_FOUND, format!("{e}")),
    };
    if !(q.velocity.is_finite() && q.velocity >= 0.0) {
        return error(StatusCode::BAD_REQUEST, format!("velocity must be >= 0, got {}", q.velocity));
    }
    let host = &state.0.config.host;
    let v = q.velocity.min(host.session.velocity_limit);
    let buf = match render_transient(host.materials.get(material), v, &host.synthesis) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let mut bytes = Vec::with_capacity(44 + 2 * buf.len());
    if let Err(e) = encode_wav(&buf, &mut bytes) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    }
    ([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response()
}

async fn ws_upgrade(
    State(state): State<AppState>,
    Query(q): Query<HashMap<String, String>>,
    ws: WebSocketUpgrade,
) -> Response {
    let Some(id) = q.get("session").cloned() else {
        return error(StatusCode::BAD_REQUEST, "missing session token");
    };
    if let Err(status) = state.claim(&id) {
        let message = if status == StatusCode::NOT_FOUND {
            "unknown session token"
        } else {
            "session already used"
        };
        return error(status, message);
    }
    ws.on_upgrade(move |socket| run_session(socket, id, state))
}

async fn send_all(socket: &mut WebSocket, messages: &[tapstroop::service::WireMessage]) -> bool {
    for m in messages {
        if socket.send(Message::Text(m.to_text().into())).await.is_err() {
            return false;
        }
    }
    true
}

/// One session, frames handled strictly in arrival order.
async fn run_session(mut socket: WebSocket, id: String, state: AppState) {
    let mut host = match SessionHost::new(id.clone(), state.0.config.host.clone()) {
        Ok(h) => h,
        Err(e) => {
            log::error!("session {id}: {e}");
            state.set_state(&id, SessionState::Issued);
            return;
        }
    };
    log::info!("session {id}: connected");
    let mut open = send_all(&mut socket, &host.start().messages).await;
    while open {
        let Some(Ok(frame)) = socket.recv().await else {
            break;
        };
        let reply = match frame {
            Message::Text(text) => host.handle_text(text.as_str(), state.now_us()),
            Message::Binary(_) => host.handle_text("", state.now_us()),
            Message::Close(_) => break,
            Message::Ping(_) | Message::Pong(_) => continue,
        };
        open = send_all(&mut socket, &reply.messages).await && !reply.close;
    }
    let _ = socket.send(Message::Close(None)).await;
    if let Err(e) = host.disconnect() {
        log::warn!("session {id}: {e}");
    }

    let complete = host.is_finished();
    let path = state.0.config.logs_dir.join(format!("{id}.jsonl"));
    let log = host.log();
    match write_log_file(log.records(), &path) {
        Ok(()) => log::info!(
            "session {id}: {} records written to {} ({})",
            log.len(),
            path.display(),
            if complete { "complete" } else { "partial" }
        ),
        Err(e) => log::error!("session {id}: {e}"),
    }
    state.set_state(&id, SessionState::Done { path, complete });
}
