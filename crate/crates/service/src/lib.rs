//! HTTP+JSON facade over the multi-session chat orchestrator.
//!
//! Routes:
//!
//! | method | path | |
//! |---|---|---|
//! | `POST` | `/episodes` | create, body `{"relationship": "..."}` |
//! | `GET` | `/episodes` | all episodes in creation order |
//! | `GET` | `/episodes/{id}` | one episode |
//! | `POST` | `/episodes/{id}/messages` | user turn plus bot reply, body `{"text": "..."}` |
//! | `POST` | `/episodes/{id}/close` | close the open session without `[END]` |
//! | `POST` | `/episodes/{id}/advance` | open the next session, body `{"interval": "..."}` |
//! | `POST` | `/episodes/{id}/end` | end after the fifth session |
//! | `GET` | `/episodes/{id}/debug/input` | serialized generator input, only with `debug_inputs` |
//! | `GET` | `/healthz` | liveness |
//!
//! Mutating routes honour an `Idempotency-Key` header: a repeated request
//! with the same key gets the first response back without re-running.

mod error;
mod store;
mod view;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use forge_core::chronology::{Relationship, TimeInterval};
use forge_core::llm_backend::LlmBackend;
use forge_core::rebot::{ChatConfig, ChatEpisodeState, ChatError, ChatEvent};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;

pub use error::ApiError;
pub use store::Store;
pub use view::{ApiMemoryEntry, ApiSessionView, ApiTurn};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub chat: ChatConfig,
    /// Exposes `/episodes/{id}/debug/input`.
    pub debug_inputs: bool,
    /// Directory of UI assets served for unmatched paths.
    pub static_dir: Option<PathBuf>,
    /// Allowed CORS origins; empty allows any.
    pub cors_origins: Vec<String>,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            chat: ChatConfig::default(),
            debug_inputs: false,
            static_dir: None,
            cors_origins: Vec::new(),
        }
    }
}

type Cached = Arc<tokio::sync::Mutex<Option<(StatusCode, Value)>>>;

struct Inner {
    store: Store,
    backend: Arc<dyn LlmBackend>,
    cfg: ServiceConfig,
    idempotency: std::sync::Mutex<HashMap<String, Cached>>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn open(cfg: ServiceConfig, backend: Arc<dyn LlmBackend>) -> Result<Self, ChatError> {
        let store = Store::open(&cfg.data_dir)?;
        Ok(Self {
            inner: Arc::new(Inner {
                store,
                backend,
                cfg,
                idempotency: Default::default(),
            }),
        })
    }

    pub fn store(&self) -> &Store {
        &self.inner.store
    }
}

pub fn router(state: AppState) -> Router {
    let cors = if state.inner.cfg.cors_origins.is_empty() {
        CorsLayer::permissive()
    } else {
        let origins = state
            .inner
            .cfg
            .cors_origins
            .iter()
            .filter_map(|o| o.parse().ok())
            .collect::<Vec<_>>();
        CorsLayer::new()
            .allow_origin(AllowOrigin::list(origins))
            .allow_methods(tower_http::cors::Any)
            .allow_headers(tower_http::cors::Any)
    };
    let mut app = Router::new()
        .route("/healthz", get(healthz))
        .route("/episodes", post(create_episode).get(list_episodes))
        .route("/episodes/{id}", get(get_episode))
        .route("/episodes/{id}/messages", post(post_message))
        .route("/episodes/{id}/close", post(close_session))
        .route("/episodes/{id}/advance", post(advance))
        .route("/episodes/{id}/end", post(end_episode))
        .route("/episodes/{id}/debug/input", get(debug_input));
    if let Some(dir) = &state.inner.cfg.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app.layer(cors).with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

type ApiResult = Result<(StatusCode, Value), ApiError>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "bad_request", e.body_text()))
}

fn respond(result: ApiResult) -> Response {
    match result {
        Ok((status, value)) => (status, Json(value)).into_response(),
        Err(e) => e.into_response(),
    }
}

/// Runs `op` at most once per idempotency key; 5xx outcomes are not kept so
/// the client can retry them.
async fn idempotent<F>(state: &AppState, headers: &HeaderMap, scope: String, op: F) -> Response
where
    F: std::future::Future<Output = ApiResult>,
{
    let Some(key) = headers.get(IDEMPOTENCY_HEADER).and_then(|v| v.to_str().ok()) else {
        return respond(op.await);
    };
    let cell = {
        let mut map = state.inner.idempotency.lock().expect("idempotency lock poisoned");
        map.entry(format!("{scope}\u{1f}{key}")).or_default().clone()
    };
    let mut guard = cell.lock().await;
    if let Some((status, value)) = guard.as_ref() {
        return (*status, Json(value.clone())).into_response();
    }
    let result = op.await;
    let (status, value) = match &result {
        Ok((s, v)) => (*s, v.clone()),
        Err(e) => (e.status, e.body()),
    };
    if !status.is_server_error() {
        *guard = Some((status, value.clone()));
    }
    (status, Json(value)).into_response()
}

fn slot(state: &AppState, id: &str) -> Result<Arc<store::Slot>, ApiError> {
    state.inner.store.get(id).ok_or_else(|| ApiError::not_found(id))
}

async fn healthz() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

#[derive(Deserialize)]
struct CreateBody {
    relationship: String,
}

async fn create_episode(
    State(state): State<AppState>,
    headers: HeaderMap,
    payload: Result<Json<CreateBody>, JsonRejection>,
) -> Response {
    idempotent(&state, &headers, "create".into(), async {
        let req = body(payload)?;
        let relationship = Relationship::from_label(&req.relationship).map_err(|e| {
            ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "unknown_relationship",
                e.to_string(),
            )
        })?;
        let id = format!("ep-{}", uuid::Uuid::new_v4().simple());
        let slot = state.inner.store.create(id.clone(), relationship)?;
        let view = ApiSessionView::from_state(&slot.snapshot());
        Ok((StatusCode::CREATED, json!({"episode_id": id, "state": view})))
    })
    .await
}

async fn list_episodes(State(state): State<AppState>) -> Json<Value> {
    let views: Vec<ApiSessionView> = state
        .inner
        .store
        .list()
        .iter()
        .map(|s| ApiSessionView::from_state(s))
        .collect();
    Json(json!({ "episodes": views }))
}

async fn get_episode(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    respond(slot(&state, &id).map(|s| (StatusCode::OK, json!(ApiSessionView::from_state(&s.snapshot())))))
}

/// Runs a possibly slow operation on a copy of the state without holding
/// the writer lock, then commits its events if nothing changed meanwhile.
async fn run_on_copy<T, F>(state: &AppState, id: &str, op: F) -> Result<(T, Arc<ChatEpisodeState>), ApiError>
where
    T: Send + 'static,
    F: FnOnce(&mut ChatEpisodeState, &dyn LlmBackend, &ChatConfig) -> Result<(T, Vec<ChatEvent>), ChatError>
        + Send
        + 'static,
{
    let slot = slot(state, id)?;
    let mut copy = (*slot.snapshot()).clone();
    let version = copy.version();
    let backend = state.inner.backend.clone();
    let chat = state.inner.cfg.chat.clone();
    let (out, events) = tokio::task::spawn_blocking(move || op(&mut copy, backend.as_ref(), &chat))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let mut writer = slot.writer.lock().await;
    let mut next = writer.state.clone();
    next.commit(version, &events)?;
    writer.persist(&slot, next, &events)?;
    Ok((out, slot.snapshot()))
}

#[derive(Deserialize)]
struct MessageBody {
    text: String,
}

async fn post_message(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    payload: Result<Json<MessageBody>, JsonRejection>,
) -> Response {
    idempotent(&state, &headers, format!("message {id}"), async {
        let req = body(payload)?;
        let (outcome, snap) = run_on_copy(&state, &id, move |s, backend, chat| {
            let mut events = s.post_user_turn(&req.text)?;
            let outcome = s.generate_bot_turn(backend, chat)?;
            events.extend(outcome.events.iter().cloned());
            Ok((outcome, events))
        })
        .await?;
        Ok((
            StatusCode::OK,
            json!({
                "bot_reply": outcome.utterance,
                "session_ended": outcome.session_ended,
                "summary": outcome.summary,
                "state": ApiSessionView::from_state(&snap),
            }),
        ))
    })
    .await
}

async fn close_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Response {
    idempotent(&state, &headers, format!("close {id}"), async {
        let (_, snap) = run_on_copy(&state, &id, |s, backend, chat| {
            Ok(((), s.close_session(backend, chat)?))
        })
        .await?;
        Ok((StatusCode::OK, json!(ApiSessionView::from_state(&snap))))
    })
    .await
}

#[derive(Deserialize)]
struct AdvanceBody {
    interval: String,
}

/// Applies a backend-free operation under the writer lock.
async fn run_locked<F>(state: &AppState, id: &str, op: F) -> Result<Arc<ChatEpisodeState>, ApiError>
where
    F: FnOnce(&mut ChatEpisodeState) -> Result<Vec<ChatEvent>, ChatError>,
{
    let slot = slot(state, id)?;
    let mut writer = slot.writer.lock().await;
    let mut next = writer.state.clone();
    let events = op(&mut next)?;
    writer.persist(&slot, next, &events)?;
    Ok(slot.snapshot())
}

async fn advance(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    payload: Result<Json<AdvanceBody>, JsonRejection>,
) -> Response {
    idempotent(&state, &headers, format!("advance {id}"), async {
        let req = body(payload)?;
        let interval = TimeInterval::parse_lenient(&req.interval).map_err(|e| {
            ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "unknown_interval",
                e.to_string(),
            )
        })?;
        let snap = run_locked(&state, &id, |s| s.advance_time(interval)).await?;
        Ok((StatusCode::OK, json!(ApiSessionView::from_state(&snap))))
    })
    .await
}

async fn end_episode(State(state): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> Response {
    idempotent(&state, &headers, format!("end {id}"), async {
        let snap = run_locked(&state, &id, |s| s.end_episode()).await?;
        Ok((StatusCode::OK, json!(ApiSessionView::from_state(&snap))))
    })
    .await
}

async fn debug_input(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    if !state.inner.cfg.debug_inputs {
        return ApiError::new(StatusCode::NOT_FOUND, "not_found", "debug endpoints are disabled")
            .into_response();
    }
    let result = slot(&state, &id).and_then(|s| {
        let text = s.snapshot().serialized_input(&state.inner.cfg.chat)?;
        Ok((StatusCode::OK, json!({ "input": text })))
    });
    respond(result)
}
