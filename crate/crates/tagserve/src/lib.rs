//! Tagging service: participants open a timed session over a sampled image
//! set, toggle tags on images, and finalize. Tags of closed sessions are
//! exported as CSV for merging into the manifest.
//!
//! Lab tool: participants are identified by free-form id strings and there
//! is no authentication.

pub mod clock;
pub mod store;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use patternscope::pipeline::{sample_experiment_set, Manifest, PipelineError, SetKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::sync::Mutex;
use tower_http::services::ServeDir;

pub use clock::{Clock, ManualClock, SystemClock};
pub use store::{export_csv, Event, EventLog, ExportRow, Session, StoreError, TagStore};

pub const DEFAULT_TIME_LIMIT_SECS: u64 = 600;
pub const DEFAULT_SET_SIZE: usize = 200;
const MAX_PARTICIPANT_ID: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    pub bind: String,
    pub port: u16,
    pub manifest: PathBuf,
    /// Directory for `events.jsonl` and `snapshot.json`.
    pub data_dir: PathBuf,
    pub time_limit_secs: u64,
    /// Built UI assets, served at `/` when set.
    pub static_dir: Option<PathBuf>,
    /// Write a snapshot every this many events; 0 disables snapshots.
    pub snapshot_every: u64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            manifest: PathBuf::from("data/manifest.jsonl"),
            data_dir: PathBuf::from("data/tags"),
            time_limit_secs: DEFAULT_TIME_LIMIT_SECS,
            static_dir: None,
            snapshot_every: 100,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid listen address {0}")]
    Address(String),
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}

struct Writer {
    log: EventLog,
    store: TagStore,
}

struct Shared {
    manifest: Mutex<Manifest>,
    manifest_path: PathBuf,
    /// Whether sampled grayscale twins are written back to the manifest file.
    persist_manifest: bool,
    base_dir: PathBuf,
    writer: Mutex<Writer>,
    /// Latest published state; readers clone the `Arc` and never wait on
    /// the appender.
    view: RwLock<Arc<TagStore>>,
    clock: Arc<dyn Clock>,
    time_limit_secs: u64,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    /// Loads the manifest and replays the event log under `data_dir`.
    pub fn open(config: &ServeConfig, clock: Arc<dyn Clock>) -> Result<Self, ServeError> {
        let manifest = Manifest::load(&config.manifest)?;
        let (log, store) = EventLog::open(&config.data_dir, config.snapshot_every)?;
        Ok(Self::assemble(config, manifest, log, store, clock, true))
    }

    /// State over an already loaded manifest; neither events nor manifest
    /// changes are written back. Image paths still resolve against the
    /// directory of `config.manifest`.
    pub fn in_memory(config: &ServeConfig, manifest: Manifest, clock: Arc<dyn Clock>) -> Self {
        Self::assemble(config, manifest, EventLog::in_memory(), TagStore::default(), clock, false)
    }

    fn assemble(
        config: &ServeConfig,
        manifest: Manifest,
        log: EventLog,
        store: TagStore,
        clock: Arc<dyn Clock>,
        persist_manifest: bool,
    ) -> Self {
        let base_dir = config
            .manifest
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Self(Arc::new(Shared {
            manifest: Mutex::new(manifest),
            manifest_path: config.manifest.clone(),
            persist_manifest,
            base_dir,
            view: RwLock::new(Arc::new(store.clone())),
            writer: Mutex::new(Writer { log, store }),
            clock,
            time_limit_secs: config.time_limit_secs,
        }))
    }

    pub fn snapshot(&self) -> Arc<TagStore> {
        self.0.view.read().expect("view lock").clone()
    }

    fn now(&self) -> u64 {
        self.0.clock.now_ms()
    }

    async fn commit(&self, writer: &mut Writer, event: Event) -> Result<(), ApiError> {
        writer
            .log
            .append(&mut writer.store, event)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        *self.0.view.write().expect("view lock") = Arc::new(writer.store.clone());
        Ok(())
    }
}

pub fn router(state: AppState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/images/{record_id}", get(get_image))
        .route("/sessions/{id}/tags/{record_id}", put(put_tag))
        .route("/sessions/{id}/finalize", post(finalize))
        .route("/export", get(export))
        .route("/health", get(|| async { "ok" }))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds and serves until the process is stopped.
pub async fn serve(config: ServeConfig) -> Result<(), ServeError> {
    let state = AppState::open(&config, Arc::new(SystemClock))?;
    let addr: SocketAddr = format!("{}:{}", config.bind, config.port)
        .parse()
        .map_err(|_| ServeError::Address(format!("{}:{}", config.bind, config.port)))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state, config.static_dir.as_deref())).await?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {what} {id}"))
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!("{}", self.message);
        }
        let body = serde_json::json!({ "error": self.code, "message": self.message });
        (self.status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::invalid(r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::invalid(r.body_text())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub participant_id: String,
    pub set_kind: SetKind,
    pub seed: Option<u64>,
    pub size: Option<usize>,
    pub time_limit_secs: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub participant_id: String,
    pub set_kind: SetKind,
    pub record_ids: Vec<String>,
    pub sample_seed: u64,
    pub started_at_ms: u64,
    pub time_limit_secs: f64,
    pub remaining_secs: f64,
    pub finalized: bool,
    pub expired: bool,
    pub tagged: Vec<String>,
}

impl SessionView {
    fn of(s: &Session, now_ms: u64) -> Self {
        Self {
            session_id: s.session_id.clone(),
            participant_id: s.participant_id.clone(),
            set_kind: s.set_kind,
            record_ids: s.record_ids.clone(),
            sample_seed: s.sample_seed,
            started_at_ms: s.started_at_ms,
            time_limit_secs: s.time_limit_ms as f64 / 1000.0,
            remaining_secs: s.remaining_ms(now_ms) as f64 / 1000.0,
            finalized: s.finalized,
            expired: s.expired_at(now_ms),
            tagged: s.tagged_records().map(str::to_string).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagState {
    pub session_id: String,
    pub record_id: String,
    pub tagged: bool,
    pub remaining_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalizeSummary {
    pub session_id: String,
    pub participant_id: String,
    pub set_kind: SetKind,
    pub n_images: usize,
    pub n_tagged: usize,
    pub tagged: Vec<String>,
}

#[derive(Debug, Deserialize)]
pub struct TagBody {
    pub tagged: bool,
}

#[derive(Debug, Deserialize)]
pub struct ExportQuery {
    pub set_kind: Option<SetKind>,
}

/// Sample seed used when a request does not pin one.
pub fn default_seed(participant_id: &str, set_kind: SetKind) -> u64 {
    let digest = Sha256::new()
        .chain_update(participant_id.as_bytes())
        .chain_update([0u8])
        .chain_update(set_kind.as_str().as_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 8 bytes"))
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let Json(req) = body?;
    let participant = req.participant_id.trim().to_string();
    if participant.is_empty() || participant.len() > MAX_PARTICIPANT_ID {
        return Err(ApiError::invalid(format!(
            "participant_id must be 1..={MAX_PARTICIPANT_ID} bytes"
        )));
    }
    if participant.chars().any(char::is_control) {
        return Err(ApiError::invalid("participant_id contains control characters"));
    }
    let size = req.size.unwrap_or(DEFAULT_SET_SIZE);
    let limit_secs = req.time_limit_secs.unwrap_or(state.0.time_limit_secs);
    if limit_secs == 0 {
        return Err(ApiError::invalid("time_limit_secs must be positive"));
    }
    let seed = req.seed.unwrap_or_else(|| default_seed(&participant, req.set_kind));

    // Session creation is serialized so two requests cannot both pass the
    // conflict check.
    let mut writer = state.0.writer.lock().await;
    let now = state.now();
    if let Some(active) = writer.store.active_session(&participant, now) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "active_session",
            format!(
                "participant {participant} already has active {} session {}",
                active.set_kind, active.session_id
            ),
        ));
    }

    let record_ids = {
        let mut manifest = state.0.manifest.lock().await;
        let mut working = manifest.clone();
        let base_dir = state.0.base_dir.clone();
        let manifest_path = state.0.persist_manifest.then(|| state.0.manifest_path.clone());
        let (working, pairs) = tokio::task::spawn_blocking(move || {
            let pairs = sample_experiment_set(&mut working, &base_dir, size, seed)?;
            if let Some(path) = manifest_path {
                working.save(&path)?;
            }
            Ok::<_, PipelineError>((working, pairs))
        })
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| match e {
            PipelineError::SampleTooLarge { .. } => ApiError::invalid(e.to_string()),
            other => ApiError::internal(other.to_string()),
        })?;
        *manifest = working;
        pairs
            .into_iter()
            .map(|p| match req.set_kind {
                SetKind::Colour => p.colour.id,
                SetKind::Grayscale => p.grayscale.id,
            })
            .collect::<Vec<_>>()
    };

    let session_id = uuid::Uuid::new_v4().simple().to_string();
    state
        .commit(
            &mut writer,
            Event::SessionCreated {
                session_id: session_id.clone(),
                participant_id: participant,
                set_kind: req.set_kind,
                record_ids,
                sample_seed: seed,
                started_at_ms: now,
                time_limit_ms: limit_secs.saturating_mul(1000),
            },
        )
        .await?;
    let view = SessionView::of(&writer.store.sessions[&session_id], now);
    tracing::info!(
        "session {} for {} ({}, {} images)",
        view.session_id,
        view.participant_id,
        view.set_kind,
        view.record_ids.len()
    );
    Ok((StatusCode::CREATED, Json(view)))
}

fn lookup<'a>(store: &'a TagStore, id: &str) -> Result<&'a Session, ApiError> {
    store
        .sessions
        .get(id)
        .ok_or_else(|| ApiError::not_found("session", id))
}

async fn get_session(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionView>, ApiError> {
    let view = state.snapshot();
    Ok(Json(SessionView::of(lookup(&view, &id)?, state.now())))
}

async fn delete_session(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<StatusCode, ApiError> {
    let mut writer = state.0.writer.lock().await;
    lookup(&writer.store, &id)?;
    let at_ms = state.now();
    state
        .commit(&mut writer, Event::Deleted { session_id: id, at_ms })
        .await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn get_image(
    State(state): State<AppState>,
    UrlPath((id, record_id)): UrlPath<(String, String)>,
) -> Result<Response, ApiError> {
    let view = state.snapshot();
    let session = lookup(&view, &id)?;
    if !session.contains(&record_id) {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "foreign_record",
            format!("record {record_id} is not part of session {id}"),
        ));
    }
    let path = {
        let manifest = state.0.manifest.lock().await;
        let record = manifest
            .get(&record_id)
            .ok_or_else(|| ApiError::internal(format!("record {record_id} missing from manifest")))?;
        manifest.resolve(&state.0.base_dir, record)
    };
    let bytes = tokio::task::spawn_blocking(move || std::fs::read(&path).map_err(|e| (path, e)))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|(path, e)| ApiError::internal(format!("{}: {e}", path.display())))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn put_tag(
    State(state): State<AppState>,
    UrlPath((id, record_id)): UrlPath<(String, String)>,
    body: Result<Json<TagBody>, JsonRejection>,
) -> Result<Json<TagState>, ApiError> {
    let mut writer = state.0.writer.lock().await;
    let now = state.now();
    let session = lookup(&writer.store, &id)?;
    if !session.contains(&record_id) {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "foreign_record",
            format!("record {record_id} is not part of session {id}"),
        ));
    }
    if session.finalized {
        return Err(ApiError::new(StatusCode::GONE, "finalized", format!("session {id} is finalized")));
    }
    if session.expired_at(now) {
        return Err(ApiError::new(StatusCode::GONE, "expired", format!("session {id} has expired")));
    }
    let Json(TagBody { tagged }) = body?;
    let current = session.tags.get(&record_id).copied().unwrap_or(false);
    if current != tagged {
        state
            .commit(
                &mut writer,
                Event::Tag {
                    session_id: id.clone(),
                    record_id: record_id.clone(),
                    tagged,
                    at_ms: now,
                },
            )
            .await?;
    }
    let remaining = writer.store.sessions[&id].remaining_ms(now);
    Ok(Json(TagState {
        session_id: id,
        record_id,
        tagged,
        remaining_secs: remaining as f64 / 1000.0,
    }))
}

async fn finalize(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<FinalizeSummary>, ApiError> {
    let mut writer = state.0.writer.lock().await;
    if !lookup(&writer.store, &id)?.finalized {
        let at_ms = state.now();
        state
            .commit(
                &mut writer,
                Event::Finalized {
                    session_id: id.clone(),
                    at_ms,
                },
            )
            .await?;
    }
    let s = &writer.store.sessions[&id];
    let tagged: Vec<String> = s.tagged_records().map(str::to_string).collect();
    Ok(Json(FinalizeSummary {
        session_id: id.clone(),
        participant_id: s.participant_id.clone(),
        set_kind: s.set_kind,
        n_images: s.record_ids.len(),
        n_tagged: tagged.len(),
        tagged,
    }))
}

async fn export(
    State(state): State<AppState>,
    query: Result<Query<ExportQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query?;
    let rows = state.snapshot().export_rows(q.set_kind, state.now());
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], export_csv(&rows)).into_response())
}
