//! Shared service state and the HTTP API.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use t2p_core::extraction::{Lexicon, LexiconError};
use t2p_core::fixtures::{desk_catalog, desk_embeddings};
use t2p_core::llm::{BackendRegistry, LlmError, LlmGateway, ReplayBackend, UsageLedger};
use t2p_core::pipeline::{Backends, PipelineTrace};
use t2p_core::snapshot::SnapshotError;
use t2p_core::taxonomy::TaxonomyError;
use t2p_core::{
    EventType, GenerateOptions, Pipeline, PipelineError, PipelineOutput, PlaylistEvent, Provenance, Snapshot,
    SnapshotCell, TagTaxonomy,
};
use thiserror::Error;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;

use crate::config::ServiceConfig;
use crate::metrics::Metrics;
use crate::store::{EventOutcome, Store, StoreError, StoreOptions, StoredPlaylist, TrackSummary};

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("taxonomy: {0}")]
    Taxonomy(#[from] TaxonomyError),
    #[error("lexicon: {0}")]
    Lexicon(#[from] LexiconError),
    #[error("snapshot: {0}")]
    Snapshot(#[from] SnapshotError),
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("llm: {0}")]
    Llm(#[from] LlmError),
}

pub struct AppState {
    pub config: ServiceConfig,
    pub taxonomy: TagTaxonomy,
    pub snapshots: SnapshotCell,
    pub pipeline: Pipeline,
    pub store: Store,
    pub metrics: Metrics,
    pub ledger: Arc<UsageLedger>,
}

pub fn load_taxonomy(config: &ServiceConfig) -> Result<TagTaxonomy, StartupError> {
    Ok(match &config.paths.taxonomy {
        Some(p) => TagTaxonomy::load(p)?,
        None => TagTaxonomy::default_taxonomy(),
    })
}

/// Configured files, or the bundled desk fixture when none are set.
pub fn initial_snapshot(config: &ServiceConfig, taxonomy: &TagTaxonomy) -> Result<Snapshot, StartupError> {
    Ok(match (&config.paths.catalog, &config.paths.embeddings) {
        (Some(c), Some(e)) => Snapshot::load(c, e, taxonomy.clone(), 1)?,
        _ => Snapshot::build(desk_catalog(), desk_embeddings(), 1),
    })
}

/// Builds the pipeline with every strategy the configuration supports.
/// An LLM backend that cannot be constructed (say, no endpoint) leaves the
/// `llm` strategies unregistered rather than failing startup.
pub fn build_pipeline(
    config: &ServiceConfig,
    taxonomy: &TagTaxonomy,
    ledger: &Arc<UsageLedger>,
) -> Result<Pipeline, StartupError> {
    let taxonomy = Arc::new(taxonomy.clone());
    let lexicon = Arc::new(match &config.paths.lexicon {
        Some(p) => Lexicon::load(p, &taxonomy)?,
        None => Lexicon::default_lexicon(&taxonomy),
    });
    let settings = config.llm_settings();
    let policy = config.retry_policy();
    let llm = match BackendRegistry::with_defaults().build(&config.backends.llm, &settings) {
        Ok(backend) => Some(Arc::new(LlmGateway::with_policy(
            backend,
            ledger.clone(),
            policy,
            config.llm.max_in_flight,
        ))),
        Err(e) => {
            tracing::warn!(backend = %config.backends.llm, error = %e, "llm strategies disabled");
            None
        }
    };
    let replay = config.paths.fixtures_dir.as_ref().map(|dir| {
        Arc::new(LlmGateway::with_policy(
            Arc::new(ReplayBackend::new(dir.clone())),
            ledger.clone(),
            policy,
            config.llm.max_in_flight,
        ))
    });
    Ok(Pipeline::standard(
        config.pipeline_config(),
        Backends {
            taxonomy,
            lexicon,
            llm,
            replay,
            max_prompt_candidates: config.limits.limit,
        },
    ))
}

impl AppState {
    pub fn from_config(config: ServiceConfig) -> Result<Arc<Self>, StartupError> {
        let taxonomy = load_taxonomy(&config)?;
        let snapshot = initial_snapshot(&config, &taxonomy)?;
        let ledger = Arc::new(UsageLedger::new());
        let pipeline = build_pipeline(&config, &taxonomy, &ledger)?;
        let store = Store::open(
            &config.paths.store_dir,
            StoreOptions {
                fsync: config.store.fsync,
                compact_every: config.store.compact_every,
            },
        )?;
        Ok(Arc::new(AppState {
            config,
            taxonomy,
            snapshots: SnapshotCell::new(snapshot),
            pipeline,
            store,
            metrics: Metrics::default(),
            ledger,
        }))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    hint: Option<&'static str>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            hint: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": self.code, "message": self.message});
        if let Some(hint) = self.hint {
            body["hint"] = json!(hint);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let (status, code) = match &e {
            PipelineError::InvalidQuery(_) => (StatusCode::BAD_REQUEST, "invalid_query"),
            PipelineError::InvalidOptions(_) => (StatusCode::BAD_REQUEST, "invalid_options"),
            PipelineError::NoTagsExtracted => (StatusCode::UNPROCESSABLE_ENTITY, "no_tags_extracted"),
            PipelineError::EmptyCandidateSet => (StatusCode::UNPROCESSABLE_ENTITY, "empty_candidate_set"),
            PipelineError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError {
            status,
            code,
            message: e.to_string(),
            hint: e.reformulation_hint(),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownPlaylist(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown_playlist", e.to_string()),
            StoreError::EventBeforeCreation { .. } => {
                ApiError::new(StatusCode::BAD_REQUEST, "invalid_event", e.to_string())
            }
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "store", e.to_string()),
        }
    }
}

fn bad_json(e: JsonRejection) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, "invalid_body", e.body_text())
}

#[derive(Debug, Deserialize)]
pub struct CreatePlaylist {
    pub user_id: String,
    pub query: String,
    pub length: Option<usize>,
    pub extraction_backend: Option<String>,
    pub refinement_backend: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PlaylistResponse {
    pub playlist_id: String,
    pub title: String,
    pub tracks: Vec<TrackSummary>,
    pub provenance: Provenance,
    pub created_at: DateTime<Utc>,
    pub snapshot_id: u64,
}

impl PlaylistResponse {
    fn from_stored(s: &StoredPlaylist) -> Self {
        PlaylistResponse {
            playlist_id: s.playlist.playlist_id.clone(),
            title: s.playlist.title.clone(),
            tracks: s.tracks.clone(),
            provenance: s.playlist.provenance.clone(),
            created_at: s.playlist.created_at,
            snapshot_id: s.record.catalog_snapshot,
        }
    }
}

fn summaries(out: &PipelineOutput, snapshot: &Snapshot) -> Vec<TrackSummary> {
    out.playlist
        .track_ids
        .iter()
        .filter_map(|id| snapshot.catalog.get(id))
        .map(|t| TrackSummary {
            track_id: t.track_id.to_string(),
            title: t.title.clone(),
            artist_name: t.artist_name.clone(),
        })
        .collect()
}

impl AppState {
    async fn run(
        &self,
        snapshot: &Snapshot,
        user_id: &str,
        query: &str,
        options: &GenerateOptions,
    ) -> Result<PipelineOutput, ApiError> {
        match self.pipeline.generate(snapshot, user_id, query, options).await {
            Ok(out) => Ok(out),
            Err(e) => {
                let counter = match e {
                    PipelineError::NoTagsExtracted | PipelineError::EmptyCandidateSet => {
                        &self.metrics.reformulate_responses
                    }
                    PipelineError::Internal(_) => &self.metrics.server_errors,
                    _ => &self.metrics.client_errors,
                };
                Metrics::inc(counter);
                Err(e.into())
            }
        }
    }
}

async fn create_playlist(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CreatePlaylist>, JsonRejection>,
) -> Result<(StatusCode, Json<PlaylistResponse>), ApiError> {
    Metrics::inc(&state.metrics.requests);
    let Json(req) = body.inspect_err(|_| Metrics::inc(&state.metrics.client_errors)).map_err(bad_json)?;
    let options = GenerateOptions {
        length: req.length,
        extraction_backend: req.extraction_backend,
        refinement_backend: req.refinement_backend,
    };
    let snapshot = state.snapshots.current();
    let out = state.run(&snapshot, &req.user_id, &req.query, &options).await?;
    let stored = StoredPlaylist {
        tracks: summaries(&out, &snapshot),
        playlist: out.playlist,
        record: out.record,
    };
    if stored.playlist.provenance.degraded {
        Metrics::inc(&state.metrics.degraded);
    }
    state
        .metrics
        .hallucinations_dropped
        .fetch_add(stored.record.hallucinations_dropped as u64, std::sync::atomic::Ordering::Relaxed);
    let writer = state.clone();
    let saved = tokio::task::spawn_blocking(move || writer.store.insert_generation(stored))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Metrics::inc(&state.metrics.playlists_generated);
    Ok((StatusCode::CREATED, Json(PlaylistResponse::from_stored(&saved))))
}

async fn get_playlist(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<PlaylistResponse>, ApiError> {
    let stored = state
        .store
        .playlist(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_playlist", format!("unknown playlist {id}")))?;
    Ok(Json(PlaylistResponse::from_stored(&stored)))
}

#[derive(Debug, Deserialize)]
pub struct EventBody {
    #[serde(rename = "type")]
    pub event_type: EventType,
    /// Defaults to the time the request is received.
    pub occurred_at: Option<DateTime<Utc>>,
}

async fn record_event(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<EventBody>, JsonRejection>,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let Json(body) = body.map_err(bad_json)?;
    let event = PlaylistEvent {
        playlist_id: id,
        event_type: body.event_type,
        occurred_at: body.occurred_at.unwrap_or_else(Utc::now),
    };
    let writer = state.clone();
    let outcome = tokio::task::spawn_blocking(move || writer.store.record_event(event))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let status = match outcome {
        EventOutcome::Stored => {
            Metrics::inc(&state.metrics.events_recorded);
            StatusCode::CREATED
        }
        EventOutcome::Duplicate => StatusCode::OK,
    };
    Ok((status, Json(json!({ "status": outcome }))))
}

#[derive(Debug, Deserialize)]
pub struct DebugParams {
    pub user_id: String,
    pub q: String,
    pub length: Option<usize>,
    pub extraction_backend: Option<String>,
    pub refinement_backend: Option<String>,
}

#[derive(Serialize)]
struct DebugResponse {
    playlist: t2p_core::Playlist,
    trace: PipelineTrace,
}

/// Runs the pipeline without persisting anything.
async fn debug_pipeline(
    State(state): State<Arc<AppState>>,
    Query(p): Query<DebugParams>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let options = GenerateOptions {
        length: p.length,
        extraction_backend: p.extraction_backend,
        refinement_backend: p.refinement_backend,
    };
    let snapshot = state.snapshots.current();
    let out = state.run(&snapshot, &p.user_id, &p.q, &options).await?;
    let body = serde_json::to_value(DebugResponse {
        playlist: out.playlist,
        trace: out.trace,
    })
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    Ok(Json(body))
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let snap = state.snapshots.current();
    Json(json!({
        "status": "ok",
        "snapshot_id": snap.id,
        "tracks": snap.catalog.len(),
        "playlists": state.store.playlist_count(),
    }))
}

async fn metrics(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    let body = state.metrics.render(&state.ledger.report(), state.snapshots.id());
    ([(header::CONTENT_TYPE, "text/plain; version=0.0.4")], body)
}

#[derive(Debug, Default, Deserialize)]
pub struct ReloadBody {
    pub catalog: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
}

async fn reload(
    State(state): State<Arc<AppState>>,
    body: Option<Json<ReloadBody>>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let body = body.map(|Json(b)| b).unwrap_or_default();
    let catalog = body.catalog.or_else(|| state.config.paths.catalog.clone());
    let embeddings = body.embeddings.or_else(|| state.config.paths.embeddings.clone());
    let (Some(catalog), Some(embeddings)) = (catalog, embeddings) else {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "no_snapshot_paths",
            "no catalog/embeddings paths configured or supplied",
        ));
    };
    let worker = state.clone();
    let result = tokio::task::spawn_blocking(move || {
        worker
            .snapshots
            .reload(&catalog, &embeddings, worker.taxonomy.clone())
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    match result {
        Ok(id) => {
            Metrics::inc(&state.metrics.reloads);
            tracing::info!(snapshot_id = id, "snapshot reloaded");
            Ok(Json(json!({ "snapshot_id": id })))
        }
        Err(e) => {
            Metrics::inc(&state.metrics.reload_failures);
            tracing::warn!(error = %e, "reload rejected, keeping current snapshot");
            Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "reload_failed",
                format!("{e}; still serving snapshot {}", state.snapshots.id()),
            ))
        }
    }
}

fn cors(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    if origins.is_empty() {
        return layer.allow_origin(Any);
    }
    let list: Vec<HeaderValue> = origins.iter().filter_map(|o| o.parse().ok()).collect();
    layer.allow_origin(AllowOrigin::list(list))
}

pub fn router(state: Arc<AppState>) -> Router {
    let mut app = Router::new()
        .route("/v1/playlists", post(create_playlist))
        .route("/v1/playlists/{id}", get(get_playlist))
        .route("/v1/playlists/{id}/events", post(record_event))
        .route("/v1/debug/pipeline", get(debug_pipeline))
        .route("/v1/admin/reload", post(reload))
        .route("/healthz", get(healthz))
        .route("/metrics", get(metrics));
    if let Some(dir) = &state.config.paths.ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir));
    }
    app.layer(cors(&state.config.server.cors_origins)).with_state(state)
}

pub async fn serve(state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(&state.config.server.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, snapshot_id = state.snapshots.id(), "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
