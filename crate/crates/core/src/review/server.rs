//! JSON-over-HTTP front end for a [`ReviewSession`].
//!
//! | method | path                     | body / query              |
//! |--------|--------------------------|---------------------------|
//! | GET    | `/api/progress`          |                           |
//! | GET    | `/api/next`              | `?annotator=ID`           |
//! | GET    | `/api/sentence/{id}`     |                           |
//! | POST   | `/api/decision`          | [`DecisionRequest`]       |
//! | GET    | `/api/export`            | `?only_done=true` (CoNLL) |
//!
//! Reads share a lock; decisions are applied one at a time and are on disk
//! before the response is sent.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Action, Progress, ReviewDecision, ReviewEntity, ReviewError, ReviewSession, SentenceReview, SentenceStatus, SpanInput};
use crate::corpus::{conll_to_string, Token};

pub type SharedSession = Arc<RwLock<ReviewSession>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SentenceView {
    pub sentence_id: String,
    pub page_id: String,
    pub text: String,
    pub tokens: Vec<Token>,
    pub entities: Vec<ReviewEntity>,
    pub status: SentenceStatus,
    /// Infobox phrases for the page, keyed by tag.
    pub infobox: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct DecisionRequest {
    pub sentence_id: String,
    pub action: Action,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub span: Option<SpanInput>,
    #[serde(default)]
    pub annotator: String,
}

fn view(session: &ReviewSession, s: &SentenceReview) -> SentenceView {
    let infobox = session
        .state
        .record(&s.sentence.page_id)
        .map(|r| r.phrases.iter().map(|(t, v)| (t.to_string(), v.clone())).collect())
        .unwrap_or_default();
    SentenceView {
        sentence_id: s.sentence.sentence_id.clone(),
        page_id: s.sentence.page_id.clone(),
        text: s.sentence.text.clone(),
        tokens: s.sentence.tokens.clone(),
        entities: s.entities.clone(),
        status: s.status(),
        infobox,
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let code = match e {
            ReviewError::UnknownSentence(_) | ReviewError::UnknownEntity { .. } => StatusCode::NOT_FOUND,
            ReviewError::Overlap { .. } => StatusCode::CONFLICT,
            ReviewError::Invalid(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

fn poisoned() -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, "session lock poisoned".into())
}

async fn progress(State(s): State<SharedSession>) -> Result<Json<Progress>, ApiError> {
    Ok(Json(s.read().map_err(|_| poisoned())?.state.progress()))
}

#[derive(Deserialize)]
struct NextQuery {
    #[serde(default)]
    annotator: Option<String>,
}

async fn next(State(s): State<SharedSession>, Query(q): Query<NextQuery>) -> Result<Json<serde_json::Value>, ApiError> {
    let session = s.read().map_err(|_| poisoned())?;
    let sentence = session.state.next_pending().map(|x| view(&session, x));
    Ok(Json(json!({
        "annotator": q.annotator,
        "sentence": sentence,
        "progress": session.state.progress(),
    })))
}

async fn sentence(State(s): State<SharedSession>, Path(id): Path<String>) -> Result<Json<SentenceView>, ApiError> {
    let session = s.read().map_err(|_| poisoned())?;
    let x = session.state.sentence(&id).ok_or(ReviewError::UnknownSentence(id))?;
    Ok(Json(view(&session, x)))
}

async fn decision(
    State(s): State<SharedSession>,
    body: Result<Json<DecisionRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.body_text()))?;
    let mut session = s.write().map_err(|_| poisoned())?;
    let d = ReviewDecision {
        decision_id: 0,
        sentence_id: req.sentence_id,
        action: req.action,
        target: req.target,
        span: req.span,
        annotator: req.annotator,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
    };
    let d = session.submit(d)?;
    let x = session.state.sentence(&d.sentence_id).expect("validated sentence exists");
    Ok(Json(json!({ "decision_id": d.decision_id, "sentence": view(&session, x) })))
}

#[derive(Deserialize)]
struct ExportQuery {
    #[serde(default)]
    only_done: bool,
}

async fn export(State(s): State<SharedSession>, Query(q): Query<ExportQuery>) -> Result<Response, ApiError> {
    let gold = s.read().map_err(|_| poisoned())?.state.export_gold(q.only_done);
    let text = conll_to_string(&gold).map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response())
}

pub fn router(session: SharedSession) -> Router {
    Router::new()
        .route("/api/progress", get(progress))
        .route("/api/next", get(next))
        .route("/api/sentence/{id}", get(sentence))
        .route("/api/decision", post(decision))
        .route("/api/export", get(export))
        .with_state(session)
}

/// Serves until Ctrl-C.
pub async fn serve(session: ReviewSession, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(Arc::new(RwLock::new(session))))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
