//! HTTP front end for pair assessment.
//!
//! Routes:
//! - `GET  /api/pairs?after=&limit=&version=`
//! - `POST /api/verdicts`
//! - `POST /api/seen`
//! - `GET  /api/progress`
//! - `GET  /api/export`
//!
//! All state lives in an [`AssessmentSession`]. Reads share a lock, writes
//! take it exclusively and only answer after the log line is synced.

use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ndvkit_core::assess::{AssessError, AssessmentSession, PairRef, Progress, SeenAck};
use ndvkit_core::curvekit::SearchCurve;
use ndvkit_core::ndvs::{CandidatePair, Segment};
use ndvkit_core::registry::{self, IdentityGraph, Label, Removal, Verdict, VideoKey, VideoRecord};
use serde::{Deserialize, Serialize};

pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 1000;
pub const DEFAULT_MEDIA_TEMPLATE: &str = "/media/{dataset}/{video_id}.mp4";

/// Everything a running service needs.
pub struct ServiceConfig {
    pub session: AssessmentSession,
    /// Curve for the live estimate. Without one, progress reports counts only.
    pub curve: Option<SearchCurve>,
    /// Manifests used by the export to build the identity graph.
    pub manifests: Vec<VideoRecord>,
    /// Media URL pattern. `{dataset}`, `{video_id}`, `{start}` and `{end}`
    /// are substituted per clip.
    pub media_template: String,
}

impl ServiceConfig {
    pub fn new(session: AssessmentSession) -> Self {
        Self {
            session,
            curve: None,
            manifests: Vec::new(),
            media_template: DEFAULT_MEDIA_TEMPLATE.to_owned(),
        }
    }
}

struct AppState {
    session: RwLock<AssessmentSession>,
    curve: Option<SearchCurve>,
    manifests: Vec<VideoRecord>,
    media_template: String,
}

type Shared = Arc<AppState>;

pub fn router(config: ServiceConfig) -> Router {
    let state = Arc::new(AppState {
        session: RwLock::new(config.session),
        curve: config.curve,
        manifests: config.manifests,
        media_template: config.media_template,
    });
    Router::new()
        .route("/api/pairs", get(pairs))
        .route("/api/verdicts", post(verdicts))
        .route("/api/seen", post(seen))
        .route("/api/progress", get(progress))
        .route("/api/export", get(export))
        .with_state(state)
}

/// Binds and serves until ctrl-c.
pub async fn serve(config: ServiceConfig, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(config))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    Conflict { current: String, requested: String },
    Unprocessable(String),
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    current_version: Option<String>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, error, message, current_version) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, "bad_request", m, None),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, "unknown_pair", m, None),
            ApiError::Conflict { current, requested } => (
                StatusCode::CONFLICT,
                "version_conflict",
                format!("pair list is at version {current}, request named {requested}"),
                Some(current),
            ),
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, "unprocessable", m, None),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, "internal", m, None),
        };
        (status, Json(ErrorBody { error, message, current_version })).into_response()
    }
}

impl From<AssessError> for ApiError {
    fn from(e: AssessError) -> Self {
        match e {
            AssessError::VersionConflict { current, requested } => ApiError::Conflict { current, requested },
            AssessError::UnknownPair { .. } => ApiError::NotFound(e.to_string()),
            AssessError::MissingAssessor => ApiError::BadRequest(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::BadRequest(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::BadRequest(e.body_text())
    }
}

fn poisoned<T>(_: T) -> ApiError {
    ApiError::Internal("session lock poisoned".into())
}

fn now() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs() as i64)
}

#[derive(Debug, Deserialize)]
pub struct PageQuery {
    #[serde(default)]
    pub after: usize,
    pub limit: Option<usize>,
    pub version: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Media {
    pub query: String,
    pub gallery: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageItem {
    pub rank: usize,
    pub query: VideoKey,
    pub gallery: VideoKey,
    pub score: f64,
    pub query_segment: Segment,
    pub gallery_segment: Segment,
    pub k: usize,
    pub duplicate: bool,
    pub seen: bool,
    pub media: Media,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub version: String,
    pub total: usize,
    pub items: Vec<PageItem>,
    /// Cursor for the next request, absent at the end of the list.
    pub next_after: Option<usize>,
}

fn media_ref(template: &str, key: &VideoKey, seg: &Segment) -> String {
    template
        .replace("{dataset}", &key.dataset)
        .replace("{video_id}", &key.video_id)
        .replace("{start}", &seg.start_s.to_string())
        .replace("{end}", &seg.end_s.to_string())
}

async fn pairs(
    State(app): State<Shared>,
    query: Result<Query<PageQuery>, QueryRejection>,
) -> Result<Json<Page>, ApiError> {
    let Query(q) = query?;
    let limit = q.limit.unwrap_or(DEFAULT_PAGE);
    if limit == 0 || limit > MAX_PAGE {
        return Err(ApiError::BadRequest(format!("limit must be in 1..={MAX_PAGE}")));
    }
    let session = app.session.read().map_err(poisoned)?;
    let ranked = session.pairs();
    let items: Vec<PageItem> = session
        .serve_pairs(q.after, limit, q.version.as_deref())?
        .into_iter()
        .map(|(rank, p): (usize, &CandidatePair)| {
            let query = VideoKey::new(ranked.query_dataset(), &p.query_id);
            let gallery = VideoKey::new(ranked.gallery_dataset(), &p.gallery_id);
            let pair = PairRef { query: query.clone(), gallery: gallery.clone() };
            PageItem {
                rank,
                score: p.score,
                query_segment: p.query_segment,
                gallery_segment: p.gallery_segment,
                k: p.k,
                duplicate: session.state().is_duplicate(&pair),
                seen: session.state().is_seen(&pair),
                media: Media {
                    query: media_ref(&app.media_template, &query, &p.query_segment),
                    gallery: media_ref(&app.media_template, &gallery, &p.gallery_segment),
                },
                query,
                gallery,
            }
        })
        .collect();
    let next_after = items.last().map(|i| i.rank).filter(|&r| r < ranked.len());
    Ok(Json(Page {
        version: ranked.version().to_owned(),
        total: ranked.len(),
        items,
        next_after,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictRequest {
    pub query: VideoKey,
    pub gallery: VideoKey,
    pub label: Label,
    pub assessor: String,
    pub timestamp: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictAck {
    pub seq: u64,
    /// Label in force for the pair after this submission.
    pub effective_label: Label,
    pub found: usize,
}

async fn verdicts(
    State(app): State<Shared>,
    body: Result<Json<VerdictRequest>, JsonRejection>,
) -> Result<Json<VerdictAck>, ApiError> {
    let Json(req) = body?;
    let pair = PairRef { query: req.query.clone(), gallery: req.gallery.clone() };
    let verdict = Verdict {
        query: req.query,
        gallery: req.gallery,
        label: req.label,
        assessor: req.assessor,
        timestamp: req.timestamp.unwrap_or_else(now),
    };
    let ack = tokio::task::spawn_blocking(move || {
        let mut session = app.session.write().map_err(poisoned)?;
        let seq = session.record_verdict(verdict)?;
        let state = session.state();
        let effective_label = if state.is_duplicate(&pair) { Label::Duplicate } else { Label::Negative };
        Ok::<_, ApiError>(VerdictAck { seq, effective_label, found: state.found_count() })
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(ack))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeenRequest {
    pub pairs: Vec<PairRef>,
    #[serde(default)]
    pub assessor: String,
    pub timestamp: Option<i64>,
}

async fn seen(
    State(app): State<Shared>,
    body: Result<Json<SeenRequest>, JsonRejection>,
) -> Result<Json<SeenAck>, ApiError> {
    let Json(req) = body?;
    let ts = req.timestamp.unwrap_or_else(now);
    let ack = tokio::task::spawn_blocking(move || {
        let mut session = app.session.write().map_err(poisoned)?;
        Ok::<_, ApiError>(session.record_seen(&req.pairs, &req.assessor, ts)?)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(ack))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressReport {
    pub version: String,
    pub total_pairs: usize,
    #[serde(flatten)]
    pub progress: Progress,
}

async fn progress(State(app): State<Shared>) -> Result<Json<ProgressReport>, ApiError> {
    let session = app.session.read().map_err(poisoned)?;
    let progress = session
        .progress(app.curve.as_ref())
        .map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    Ok(Json(ProgressReport {
        version: session.pairs().version().to_owned(),
        total_pairs: session.pairs().len(),
        progress,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportReport {
    pub version: String,
    pub duplicates: Vec<Verdict>,
    /// Empty when the service was started without manifests.
    pub removals: Vec<Removal>,
}

async fn export(State(app): State<Shared>) -> Result<Json<ExportReport>, ApiError> {
    let (version, duplicates) = {
        let session = app.session.read().map_err(poisoned)?;
        (session.pairs().version().to_owned(), session.effective_duplicates())
    };
    let removals = if app.manifests.is_empty() {
        Vec::new()
    } else {
        let graph = IdentityGraph::build(app.manifests.clone()).map_err(|e| ApiError::Unprocessable(e.to_string()))?;
        registry::propagate_and_clean(&graph, &duplicates)
            .map_err(|e| ApiError::Unprocessable(e.to_string()))?
            .removals
    };
    Ok(Json(ExportReport { version, duplicates, removals }))
}
