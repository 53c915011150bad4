//! HTTP handlers.

use std::path::Path;
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::Json;
use serde::{Deserialize, Serialize};

use crsim_core::io::read_jsonl;
use crsim_core::record::DialogueRecord;

use crate::bench::{
    criteria_info, Ack, Choice, CriterionInfo, JudgmentEntry, NewSession, PairView, ResultsReport, SessionSummary,
};
use crate::chat::{ChatReply, ChatState, HumanTurn, StartChat};
use crate::error::ApiError;
use crate::AppState;

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
}

pub async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

pub async fn criteria() -> Json<Vec<CriterionInfo>> {
    Json(criteria_info())
}

/// Record files available for session creation, relative to the records dir.
pub async fn list_records(State(state): State<Arc<AppState>>) -> ApiResult<Vec<String>> {
    let root = state.config.records_dir.clone();
    blocking(move || {
        let mut out = Vec::new();
        collect_jsonl(&root, &root, 0, &mut out);
        out.sort();
        Ok(Json(out))
    })
    .await
}

fn collect_jsonl(root: &Path, dir: &Path, depth: usize, out: &mut Vec<String>) {
    let Ok(entries) = std::fs::read_dir(dir) else { return };
    for entry in entries.flatten() {
        let path = entry.path();
        if path.is_dir() && depth < 4 {
            collect_jsonl(root, &path, depth + 1, out);
        } else if path.extension().is_some_and(|e| e == "jsonl") {
            if let Ok(rel) = path.strip_prefix(root) {
                out.push(rel.to_string_lossy().into_owned());
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct CreateSession {
    pub records_a: String,
    pub records_b: String,
    pub n_pairs: usize,
    #[serde(default)]
    pub seed: u64,
    pub judge_id: String,
    /// Display names for the systems; default to the file names. Never
    /// shown to judges.
    #[serde(default)]
    pub system_a: Option<String>,
    #[serde(default)]
    pub system_b: Option<String>,
}

fn load_records(state: &AppState, rel: &str) -> Result<Vec<DialogueRecord>, ApiError> {
    let path = state.config.resolve_record_path(rel).ok_or_else(|| {
        ApiError::bad_request(format!("record path `{rel}` must be relative to the records directory"))
    })?;
    let (_, records) = read_jsonl::<DialogueRecord>(&path)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "InvalidRecords", e.to_string()))?;
    // Failed dialogues are not shown to judges.
    Ok(records.into_iter().filter(|r| !r.is_error()).collect())
}

pub async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionSummary>), ApiError> {
    blocking(move || {
        let a = load_records(&state, &req.records_a)?;
        let b = load_records(&state, &req.records_b)?;
        let session = state.bench.create(
            &a,
            &b,
            &NewSession {
                judge_id: req.judge_id,
                system_a: req.system_a.unwrap_or(req.records_a),
                system_b: req.system_b.unwrap_or(req.records_b),
                n_pairs: req.n_pairs,
                seed: req.seed,
            },
        )?;
        log::info!(
            "created session {} with {} pairs",
            session.session_id,
            session.pairs.len()
        );
        Ok((StatusCode::CREATED, Json(state.bench.summary(&session.session_id)?)))
    })
    .await
}

pub async fn list_sessions(State(state): State<Arc<AppState>>) -> ApiResult<Vec<SessionSummary>> {
    let ids = state.bench.session_ids();
    Ok(Json(
        ids.iter().map(|id| state.bench.summary(id)).collect::<Result<_, _>>()?,
    ))
}

pub async fn get_session(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<SessionSummary> {
    Ok(Json(state.bench.summary(&id)?))
}

pub async fn get_pair(
    State(state): State<Arc<AppState>>,
    UrlPath((id, index)): UrlPath<(String, usize)>,
) -> ApiResult<PairView> {
    Ok(Json(state.bench.pair_view(&id, index)?))
}

pub async fn get_audit(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Vec<JudgmentEntry>> {
    Ok(Json(state.bench.audit(&id)?))
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct SubmitJudgment {
    pub session_id: String,
    pub pair_index: usize,
    /// Free text so that unknown labels get a domain error, not a decode error.
    pub criterion: String,
    pub choice: Choice,
}

pub async fn submit_judgment(State(state): State<Arc<AppState>>, Json(req): Json<SubmitJudgment>) -> ApiResult<Ack> {
    blocking(move || {
        Ok(Json(state.bench.submit(
            &req.session_id,
            req.pair_index,
            &req.criterion,
            req.choice,
        )?))
    })
    .await
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct ResultsQuery {
    pub session: Option<String>,
}

pub async fn get_results(
    State(state): State<Arc<AppState>>,
    Query(q): Query<ResultsQuery>,
) -> ApiResult<ResultsReport> {
    Ok(Json(state.bench.results(q.session.as_deref())?))
}

pub async fn list_recommenders(State(state): State<Arc<AppState>>) -> Json<Vec<String>> {
    Json(state.chat.recommenders())
}

pub async fn start_chat(
    State(state): State<Arc<AppState>>,
    Json(req): Json<StartChat>,
) -> Result<(StatusCode, Json<ChatState>), ApiError> {
    Ok((StatusCode::CREATED, Json(state.chat.start(req)?)))
}

pub async fn get_chat(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<ChatState> {
    Ok(Json(state.chat.state(&id).await?))
}

pub async fn chat_turn(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<HumanTurn>,
) -> ApiResult<ChatReply> {
    Ok(Json(state.chat.step(&id, req).await?))
}

/// Finished transcript as a dialogue record; 409 while the chat is open.
pub async fn get_chat_record(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<DialogueRecord> {
    state
        .chat
        .record(&id)
        .await?
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "ChatOpen", format!("chat `{id}` is still open")))
}
