//! HTTP API over the training engine. Operations on one session run one at
//! a time in arrival order; different sessions never wait on each other.

pub mod config;
mod error;

use std::collections::HashMap;
use std::fs;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use cogtrain_core::data::DataDir;
use cogtrain_core::lifelog::EntryDraft;
use cogtrain_core::llm::{LiveProvider, LiveProviderConfig, Provider, ProviderError, ScriptedProvider};
use cogtrain_core::media::MediaId;
use cogtrain_core::message::{PartKind, Role};
use cogtrain_core::session::Outcome;
use cogtrain_core::{ChatMessage, Clock, Directive, MessagePart, Runtime, Session, SessionState, Step, SystemClock};
use serde::{Deserialize, Serialize};
use tokio::sync::watch;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::trace::TraceLayer;
use tracing::info;

pub use config::{ApiConfig, ConfigError};
pub use error::ApiError;

/// Placeholder shown instead of the system prompt, which holds the answer.
pub const SYSTEM_PROMPT_WITHHELD: &str = "(system prompt withheld)";

struct SessionSlot {
    op_lock: tokio::sync::Mutex<()>,
    latest: watch::Sender<Arc<Session>>,
}

pub struct AppState {
    pub config: ApiConfig,
    pub data: DataDir,
    pub runtime: Runtime,
    slots: Mutex<HashMap<String, Arc<SessionSlot>>>,
}

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error("data directory: {0}")]
    Data(#[from] cogtrain_core::data::DataDirError),
    #[error("data directory {0} is not writable: {1}")]
    NotWritable(String, std::io::Error),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// The scripted provider when `provider_script` is set, otherwise the live
/// client configured from the environment.
pub fn provider_from_config(config: &ApiConfig, data: &DataDir) -> Result<Arc<dyn Provider>, ProviderError> {
    match &config.provider_script {
        Some(path) => Ok(Arc::new(ScriptedProvider::load(path)?)),
        None => Ok(Arc::new(
            LiveProvider::new(LiveProviderConfig::from_env()?).with_media(data.media.clone()),
        )),
    }
}

impl AppState {
    pub fn open(
        config: ApiConfig,
        provider: Option<Arc<dyn Provider>>,
        clock: Option<Arc<dyn Clock>>,
    ) -> Result<Arc<Self>, StartupError> {
        let data = DataDir::open(&config.data_dir)?;
        let probe = config.data_dir.join(".write-probe");
        fs::write(&probe, b"ok")
            .and_then(|_| fs::remove_file(&probe))
            .map_err(|e| StartupError::NotWritable(config.data_dir.display().to_string(), e))?;
        let mut registry = data.registry()?;
        if let Some(budget) = config.hint_budget {
            let groups: Vec<_> = registry.list_groups().into_iter().map(|g| g.group_id).collect();
            for id in groups {
                let mut group = registry.get(&id).expect("listed").clone();
                group.hint_budget = budget;
                registry.register_group(group).map_err(cogtrain_core::data::DataDirError::from)?;
            }
        }
        let provider = match provider {
            Some(p) => p,
            None => provider_from_config(&config, &data)?,
        };
        let runtime = Runtime::new(Arc::new(registry), provider, data.sessions.clone())
            .with_lifelog(data.lifelog.clone())
            .with_clock(clock.unwrap_or_else(|| Arc::new(SystemClock)));
        Ok(Arc::new(Self {
            config,
            data,
            runtime,
            slots: Mutex::new(HashMap::new()),
        }))
    }

    async fn slot(&self, session_id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        if let Some(slot) = self.slots.lock().expect("slot map").get(session_id) {
            return Ok(slot.clone());
        }
        let runtime = self.runtime.clone();
        let id = session_id.to_owned();
        let session = tokio::task::spawn_blocking(move || runtime.load(&id)).await??;
        Ok(self.insert_slot(session))
    }

    fn insert_slot(&self, session: Session) -> Arc<SessionSlot> {
        let mut slots = self.slots.lock().expect("slot map");
        slots
            .entry(session.session_id.clone())
            .or_insert_with(|| {
                Arc::new(SessionSlot {
                    op_lock: tokio::sync::Mutex::new(()),
                    latest: watch::channel(Arc::new(session)).0,
                })
            })
            .clone()
    }

    /// Runs one engine operation under the session's lock. The slot is
    /// updated from the worker thread, so a dropped request cannot leave it
    /// behind the persisted log.
    async fn run_op<F>(&self, session_id: &str, op: F) -> Result<Step, ApiError>
    where
        F: FnOnce(&Runtime, &Session) -> Result<Step, cogtrain_core::SessionError> + Send + 'static,
    {
        let slot = self.slot(session_id).await?;
        let _turn = slot.op_lock.lock().await;
        let runtime = self.runtime.clone();
        let worker_slot = slot.clone();
        let step = tokio::task::spawn_blocking(move || {
            let current = worker_slot.latest.borrow().clone();
            let step = op(&runtime, &current)?;
            worker_slot.latest.send_replace(Arc::new(step.session.clone()));
            Ok::<_, cogtrain_core::SessionError>(step)
        })
        .await??;
        Ok(step)
    }
}

/// Response to every session operation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DirectiveEnvelope {
    pub session_id: String,
    pub state: SessionState,
    pub directives: Vec<Directive>,
    /// Turn index of the latest transcript message.
    pub turn_index: u32,
    pub revision: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    pub hints_remaining: u32,
}

impl DirectiveEnvelope {
    fn from_step(step: Step) -> Self {
        let s = &step.session;
        Self {
            session_id: s.session_id.clone(),
            state: s.state,
            turn_index: s.transcript.last().map_or(0, |m| m.turn_index),
            revision: s.revision,
            outcome: s.outcome,
            hints_remaining: s.hints_remaining(),
            directives: step.directives,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionView {
    pub session_id: String,
    pub group_id: String,
    pub instruction: String,
    pub state: SessionState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<u8>,
    pub hints_used: u32,
    pub hint_budget: u32,
    pub covered_slots: Vec<String>,
    pub revision: u64,
    pub transcript: Vec<ChatMessage>,
}

impl SessionView {
    fn of(s: &Session) -> Self {
        let transcript = s
            .transcript
            .messages()
            .iter()
            .map(|m| match m.role {
                Role::System => ChatMessage::new(m.role, m.turn_index, m.timestamp, vec![MessagePart::text(SYSTEM_PROMPT_WITHHELD)]),
                _ => m.clone(),
            })
            .collect();
        Self {
            session_id: s.session_id.clone(),
            group_id: s.instance.group_id.clone(),
            instruction: s.instance.user_instruction.clone(),
            state: s.state,
            outcome: s.outcome,
            rating: s.rating,
            hints_used: s.hints_used,
            hint_budget: s.hint_budget,
            covered_slots: s.covered_slots.iter().map(|c| c.to_string()).collect(),
            revision: s.revision,
            transcript,
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let media_limit = state.config.media_limit;
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/hint", post(post_hint))
        .route("/groups", get(list_groups))
        .route(
            "/media",
            post(upload_media).layer(DefaultBodyLimit::max(media_limit)),
        )
        .route("/media/{id}", get(get_media))
        .route("/lifelog", post(post_lifelog).get(query_lifelog))
        .route("/admin/data", delete(wipe_data))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    let mut app = Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .nest("/api", api)
        .layer(TraceLayer::new_for_http())
        .with_state(state.clone());
    if !state.config.cors_origins.is_empty() {
        let origins: Vec<HeaderValue> = state
            .config
            .cors_origins
            .iter()
            .filter_map(|o| HeaderValue::from_str(o).ok())
            .collect();
        app = app.layer(
            CorsLayer::new()
                .allow_origin(AllowOrigin::list(origins))
                .allow_methods([Method::GET, Method::POST, Method::DELETE])
                .allow_headers([header::AUTHORIZATION, header::CONTENT_TYPE]),
        );
    }
    app
}

async fn require_token(State(state): State<Arc<AppState>>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.config.api_token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or wrong bearer token")
                .into_response();
        }
    }
    next.run(request).await
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CreateSession {
    #[serde(alias = "groupId")]
    pub group: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub session_id: Option<String>,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(body): Json<CreateSession>,
) -> Result<(StatusCode, Json<DirectiveEnvelope>), ApiError> {
    let runtime = state.runtime.clone();
    let seed = body.seed.unwrap_or_else(rand::random);
    let step =
        tokio::task::spawn_blocking(move || runtime.start(&body.group, seed, body.session_id)).await??;
    info!(session = %step.session.session_id, group = %step.session.instance.group_id, "session started");
    state.insert_slot(step.session.clone());
    Ok((StatusCode::CREATED, Json(DirectiveEnvelope::from_step(step))))
}

#[derive(Debug, Deserialize)]
pub struct PollQuery {
    /// Return as soon as the revision exceeds this value.
    pub after: Option<u64>,
    /// Seconds to wait for a newer revision.
    pub wait: Option<u64>,
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(poll): Query<PollQuery>,
) -> Result<Json<SessionView>, ApiError> {
    let slot = state.slot(&id).await?;
    let mut rx = slot.latest.subscribe();
    if let (Some(after), Some(wait)) = (poll.after, poll.wait) {
        let wait = Duration::from_secs(wait.min(state.config.max_wait_secs));
        let _ = tokio::time::timeout(wait, rx.wait_for(|s| s.revision > after)).await;
    }
    let session = rx.borrow().clone();
    Ok(Json(SessionView::of(&session)))
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PostMessage {
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub media_id: Option<MediaId>,
    #[serde(default)]
    pub parts: Option<Vec<MessagePart>>,
}

fn message_parts(state: &AppState, body: PostMessage) -> Result<Vec<MessagePart>, ApiError> {
    let mut parts = body.parts.unwrap_or_default();
    if let Some(text) = body.text.filter(|t| !t.trim().is_empty()) {
        parts.push(MessagePart::text(text));
    }
    if let Some(id) = body.media_id {
        let mime = state.data.media.mime(&id).map_err(|_| {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "UnknownMedia", format!("media {id} has not been uploaded"))
        })?;
        parts.push(if mime.starts_with("audio/") {
            MessagePart::audio(id, mime)
        } else {
            MessagePart::image(id, mime)
        });
    }
    for part in &parts {
        if part.kind != PartKind::Text {
            match &part.media_id {
                Some(id) if state.data.media.contains(id) => {}
                _ => {
                    return Err(ApiError::new(
                        StatusCode::UNPROCESSABLE_ENTITY,
                        "UnknownMedia",
                        "message references media that has not been uploaded",
                    ))
                }
            }
        }
    }
    if parts.is_empty() {
        return Err(ApiError::bad_request("message needs text or media"));
    }
    Ok(parts)
}

async fn post_message(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<PostMessage>,
) -> Result<Json<DirectiveEnvelope>, ApiError> {
    let parts = message_parts(&state, body)?;
    let step = state.run_op(&id, move |rt, s| rt.user_turn(s, parts)).await?;
    Ok(Json(DirectiveEnvelope::from_step(step)))
}

async fn post_hint(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<DirectiveEnvelope>, ApiError> {
    let step = state.run_op(&id, |rt, s| rt.request_hint(s)).await?;
    Ok(Json(DirectiveEnvelope::from_step(step)))
}

async fn list_groups(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    Json(state.runtime.registry.list_groups())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MediaReceipt {
    pub media_id: MediaId,
    pub mime: String,
    pub size: usize,
}

async fn upload_media(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<(StatusCode, Json<MediaReceipt>), ApiError> {
    let mime = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .map(|m| m.split(';').next().unwrap_or("").trim().to_owned())
        .filter(|m| !m.is_empty() && m != "application/x-www-form-urlencoded")
        .ok_or_else(|| ApiError::bad_request("Content-Type must declare the media type"))?;
    if body.is_empty() {
        return Err(ApiError::bad_request("empty upload"));
    }
    let media = state.data.media.clone();
    let size = body.len();
    let stored_mime = mime.clone();
    let media_id = tokio::task::spawn_blocking(move || media.put(&body, &stored_mime)).await??;
    Ok((StatusCode::CREATED, Json(MediaReceipt { media_id, mime, size })))
}

async fn get_media(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let id: MediaId = id
        .parse()
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, "MediaNotFound", "unknown media id"))?;
    let media = state.data.media.clone();
    let (bytes, mime) = tokio::task::spawn_blocking(move || Ok::<_, ApiError>((media.get(&id)?, media.mime(&id)?))).await??;
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

async fn post_lifelog(
    State(state): State<Arc<AppState>>,
    Json(draft): Json<EntryDraft>,
) -> Result<(StatusCode, impl IntoResponse), ApiError> {
    let lifelog = state.data.lifelog.clone();
    let now = state.runtime.clock.now();
    let entry = tokio::task::spawn_blocking(move || lifelog.add_entry(draft, now)).await??;
    Ok((StatusCode::CREATED, Json(entry)))
}

#[derive(Debug, Deserialize)]
pub struct RangeQuery {
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
}

async fn query_lifelog(
    State(state): State<Arc<AppState>>,
    Query(range): Query<RangeQuery>,
) -> Result<impl IntoResponse, ApiError> {
    let from = range.from.unwrap_or(DateTime::<Utc>::MIN_UTC);
    let to = range.to.unwrap_or(DateTime::<Utc>::MAX_UTC);
    Ok(Json(state.data.lifelog.query_range(from, to)?))
}

async fn wipe_data(State(state): State<Arc<AppState>>) -> Result<StatusCode, ApiError> {
    let data = state.data.clone();
    tokio::task::spawn_blocking(move || data.wipe()).await??;
    state.slots.lock().expect("slot map").clear();
    info!("all session, life-log and media data deleted");
    Ok(StatusCode::NO_CONTENT)
}
