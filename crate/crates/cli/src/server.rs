//! HTTP inference service. Sessions live in memory only.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kbdialog::corpus::Speaker;
use kbdialog::model::Model;
use kbdialog::session::{ChatSession, KbInput, Reply};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub struct AppState {
    model: Model,
    sessions: Mutex<HashMap<String, Arc<Mutex<ChatSession>>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }
    }
}

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }

    fn not_found(id: &str) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            message: format!("unknown session `{id}`"),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

#[derive(Deserialize)]
pub struct NewSession {
    pub kb: KbInput,
}

#[derive(Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
}

#[derive(Deserialize)]
pub struct ChatRequest {
    pub session_id: String,
    pub utterance: String,
}

#[derive(Serialize, Deserialize)]
pub struct HistoryEntry {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub kb: KbInput,
    pub history: Vec<HistoryEntry>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/session", post(create_session))
        .route("/session/{id}", get(get_session))
        .route("/chat", post(chat))
        .with_state(state)
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<NewSession>, JsonRejection>,
) -> Result<Json<SessionCreated>, ApiError> {
    let Json(req) = body?;
    let kb = req
        .kb
        .to_table(&state.model.config.columns)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let id = format!("s{}", state.next_id.fetch_add(1, Ordering::Relaxed));
    let session = ChatSession::new(id.clone(), kb, &state.model).map_err(|e| ApiError::bad_request(e.to_string()))?;
    state
        .sessions
        .lock()
        .expect("session map poisoned")
        .insert(id.clone(), Arc::new(Mutex::new(session)));
    log::info!("created session {id}");
    Ok(Json(SessionCreated { session_id: id }))
}

fn lookup(state: &AppState, id: &str) -> Result<Arc<Mutex<ChatSession>>, ApiError> {
    state
        .sessions
        .lock()
        .expect("session map poisoned")
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(id))
}

async fn chat(
    State(state): State<Arc<AppState>>,
    body: Result<Json<ChatRequest>, JsonRejection>,
) -> Result<Json<Reply>, ApiError> {
    let Json(req) = body?;
    let session = lookup(&state, &req.session_id)?;
    let reply = tokio::task::spawn_blocking(move || {
        let mut s = session.lock().expect("session poisoned");
        s.respond(&state.model, &req.utterance)
    })
    .await
    .map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        message: e.to_string(),
    })?
    .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(reply))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    let session = lookup(&state, &id)?;
    let s = session.lock().expect("session poisoned");
    Ok(Json(SessionView {
        session_id: id,
        kb: KbInput {
            columns: s.kb().columns().to_vec(),
            rows: s.kb().rows().to_vec(),
        },
        history: s
            .history()
            .iter()
            .map(|t| HistoryEntry {
                speaker: t.speaker,
                text: t.tokens.join(" "),
            })
            .collect(),
    }))
}

pub async fn serve(model: Model, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let app = router(Arc::new(AppState::new(model)));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
