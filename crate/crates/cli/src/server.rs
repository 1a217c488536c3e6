//! HTTP/JSON query service over immutable, preloaded retrieval indices.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use qloc_core::corpus::Questionnaire;
use qloc_core::index::{QueryInput, QueryResult, RetrievalIndex};
use qloc_core::providers::SentenceEmbeddingProvider;
use qloc_core::Error as CoreError;
use serde::{Deserialize, Serialize};

/// Shared read-only state; only the feedback log is written.
pub struct AppState {
    pub indices: BTreeMap<String, RetrievalIndex>,
    pub questionnaire: Questionnaire,
    /// Raw `questionnaire.jsonl` served to the review console.
    pub questionnaire_jsonl: String,
    pub sentences: Box<dyn SentenceEmbeddingProvider>,
    feedback: Mutex<File>,
}

impl AppState {
    pub fn new(
        indices: Vec<RetrievalIndex>,
        questionnaire: Questionnaire,
        questionnaire_jsonl: String,
        sentences: Box<dyn SentenceEmbeddingProvider>,
        feedback_log: &Path,
    ) -> anyhow::Result<Self> {
        if let Some(parent) = feedback_log.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let feedback = OpenOptions::new().create(true).append(true).open(feedback_log)?;
        Ok(Self {
            indices: indices.into_iter().map(|i| (i.interview_id.clone(), i)).collect(),
            questionnaire,
            questionnaire_jsonl,
            sentences,
            feedback: Mutex::new(feedback),
        })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/interviews", get(list_interviews))
        .route("/query", post(query))
        .route("/feedback", post(feedback))
        .route("/questionnaire.jsonl", get(questionnaire))
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(state: Arc<AppState>, addr: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| anyhow::anyhow!("cannot bind {addr}: {e}"))?;
    eprintln!("serving {} indices on http://{}", state.indices.len(), listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct InterviewSummary {
    pub id: String,
    pub n_chunks: usize,
    pub n_segments: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct InterviewList {
    pub interviews: Vec<InterviewSummary>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub interview_id: String,
    #[serde(default)]
    pub question_id: Option<String>,
    #[serde(default)]
    pub text: Option<String>,
    pub k: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct QueryRow {
    pub segment: usize,
    pub score: f64,
    pub start_s: f64,
    pub end_s: f64,
    pub best_chunk: usize,
    pub best_chunk_start_s: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct QueryResponse {
    pub results: Vec<QueryRow>,
    pub clamped: bool,
}

impl From<QueryResult> for QueryResponse {
    fn from(r: QueryResult) -> Self {
        Self {
            results: r
                .results
                .into_iter()
                .map(|s| QueryRow {
                    segment: s.segment,
                    score: s.score,
                    start_s: s.start_s,
                    end_s: s.end_s,
                    best_chunk: s.best_chunk,
                    best_chunk_start_s: s.best_chunk_start_s,
                })
                .collect(),
            clamped: r.clamped,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRequest {
    pub interview_id: String,
    pub question: String,
    pub segment: usize,
    pub verdict: Verdict,
}

/// JSON error body with an HTTP status.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match &e {
            CoreError::Argument(_) => StatusCode::BAD_REQUEST,
            CoreError::NotFound(_) => StatusCode::NOT_FOUND,
            CoreError::Provider(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed request: {e}")))
}

async fn list_interviews(State(state): State<Arc<AppState>>) -> Json<InterviewList> {
    Json(InterviewList {
        interviews: state
            .indices
            .values()
            .map(|i| InterviewSummary {
                id: i.interview_id.clone(),
                n_chunks: i.n_chunks(),
                n_segments: i.n_segments(),
            })
            .collect(),
    })
}

/// Answers one query; shared by the HTTP handler and the CLI.
pub fn run_query(state: &AppState, req: &QueryRequest) -> Result<QueryResponse, ApiError> {
    let index = state
        .indices
        .get(&req.interview_id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no index for interview {:?}", req.interview_id)))?;
    let input = match (&req.question_id, &req.text) {
        (Some(id), None) => QueryInput::QuestionId(id.clone()),
        (None, Some(text)) => QueryInput::Text(text.clone()),
        _ => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "exactly one of question_id and text must be given",
            ))
        }
    };
    Ok(index
        .query(&input, req.k, &state.questionnaire, state.sentences.as_ref())?
        .into())
}

async fn query(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<QueryResponse>, ApiError> {
    let req: QueryRequest = parse_body(&body)?;
    run_query(&state, &req).map(Json)
}

async fn feedback(State(state): State<Arc<AppState>>, body: Bytes) -> Result<StatusCode, ApiError> {
    let req: FeedbackRequest = parse_body(&body)?;
    let index = state
        .indices
        .get(&req.interview_id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no index for interview {:?}", req.interview_id)))?;
    if req.segment >= index.n_segments() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("segment {} out of range (interview has {})", req.segment, index.n_segments()),
        ));
    }
    let mut line = serde_json::to_string(&req).expect("feedback serializes");
    line.push('\n');
    let mut log = state.feedback.lock().unwrap_or_else(|p| p.into_inner());
    log.write_all(line.as_bytes())
        .and_then(|_| log.flush())
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("feedback log: {e}")))?;
    Ok(StatusCode::NO_CONTENT)
}

async fn questionnaire(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    (
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        state.questionnaire_jsonl.clone(),
    )
}

/// Default feedback log location next to the indices.
pub fn default_feedback_log(index_dir: &Path) -> PathBuf {
    index_dir.join("feedback.jsonl")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_errors_map_to_http_statuses() {
        let status = |e: CoreError| ApiError::from(e).status;
        assert_eq!(status(CoreError::Argument("k".into())), StatusCode::BAD_REQUEST);
        assert_eq!(status(CoreError::NotFound("q".into())), StatusCode::NOT_FOUND);
        assert_eq!(status(CoreError::Provider("t".into())), StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(status(CoreError::Corrupt("c".into())), StatusCode::INTERNAL_SERVER_ERROR);
    }

    #[test]
    fn query_request_rejects_unknown_fields() {
        assert!(parse_body::<QueryRequest>(br#"{"interview_id":"a","text":"t","k":1}"#).is_ok());
        let err = parse_body::<QueryRequest>(br#"{"interview_id":"a","text":"t","k":1,"extra":1}"#).unwrap_err();
        assert_eq!(err.status, StatusCode::BAD_REQUEST);
    }

    #[test]
    fn verdicts_serialize_lowercase() {
        assert_eq!(serde_json::to_string(&Verdict::Incorrect).unwrap(), "\"incorrect\"");
    }
}
