//! HTTP/JSON service over a [`Runtime`].

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use indexmap::IndexMap;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use wts_core::evolution::EvolutionRecord;
use wts_core::store::normalize;
use wts_core::{
    answer_question, mastership_evolve, Answer, Confidence, DatasetKind, Evidence, Mode,
    PipelineError, PipelineResult, Question, StoreStats, Trigger, Triple, TripleId, Verdict,
};

use crate::runtime::SharedRuntime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackVerdict {
    Good,
    Bad,
}

impl From<FeedbackVerdict> for Verdict {
    fn from(v: FeedbackVerdict) -> Self {
        match v {
            FeedbackVerdict::Good => Verdict::Positive,
            FeedbackVerdict::Bad => Verdict::Negative,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Turn {
    pub question: Question,
    pub result: PipelineResult,
    pub verdict: Option<FeedbackVerdict>,
}

#[derive(Debug, Default)]
pub struct Session {
    /// Keyed by question id, in ask order.
    pub turns: IndexMap<String, Turn>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
enum SessionEvent {
    Ask { session_id: String, question_id: String, question: Question, result: PipelineResult },
    Feedback { session_id: String, question_id: String, verdict: FeedbackVerdict },
}

#[derive(Debug, Default)]
struct Activity {
    size_series: Vec<usize>,
    depth_counts: BTreeMap<usize, usize>,
    answered: usize,
}

pub struct AppState {
    rt: SharedRuntime,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    activity: Mutex<Activity>,
    session_log: Option<Mutex<File>>,
    persist_lock: Mutex<()>,
}

impl AppState {
    /// Builds the state, replaying the session log if one is configured.
    pub fn new(rt: SharedRuntime) -> std::io::Result<Arc<Self>> {
        let mut sessions: HashMap<String, Arc<Mutex<Session>>> = HashMap::new();
        let mut activity = Activity { size_series: vec![rt.store.snapshot().len()], ..Activity::default() };
        let session_log = match &rt.config.sessions_path {
            Some(path) => {
                replay_sessions(path, &mut sessions, &mut activity)?;
                Some(Mutex::new(OpenOptions::new().create(true).append(true).open(path)?))
            }
            None => None,
        };
        Ok(Arc::new(Self {
            rt,
            sessions: Mutex::new(sessions),
            activity: Mutex::new(activity),
            session_log,
            persist_lock: Mutex::new(()),
        }))
    }

    pub fn runtime(&self) -> &SharedRuntime {
        &self.rt
    }

    fn log_event(&self, event: &SessionEvent) {
        let Some(file) = &self.session_log else { return };
        let result = serde_json::to_string(event)
            .map_err(std::io::Error::from)
            .and_then(|line| writeln!(file.lock(), "{line}"));
        if let Err(err) = result {
            tracing::warn!(%err, "could not write session log");
        }
    }

    fn session(&self, id: &str) -> Option<Arc<Mutex<Session>>> {
        self.sessions.lock().get(id).cloned()
    }
}

fn replay_sessions(
    path: &Path,
    sessions: &mut HashMap<String, Arc<Mutex<Session>>>,
    activity: &mut Activity,
) -> std::io::Result<()> {
    if !path.exists() {
        return Ok(());
    }
    for (idx, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: SessionEvent = match serde_json::from_str(&line) {
            Ok(e) => e,
            Err(err) => {
                tracing::warn!(line = idx + 1, %err, "skipping unreadable session event");
                continue;
            }
        };
        match event {
            SessionEvent::Ask { session_id, question_id, question, result } => {
                *activity.depth_counts.entry(result.depth_used).or_default() += 1;
                activity.answered += 1;
                sessions
                    .entry(session_id)
                    .or_default()
                    .lock()
                    .turns
                    .insert(question_id, Turn { question, result, verdict: None });
            }
            SessionEvent::Feedback { session_id, question_id, verdict } => {
                if let Some(session) = sessions.get(&session_id) {
                    if let Some(turn) = session.lock().turns.get_mut(&question_id) {
                        turn.verdict = Some(verdict);
                    }
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, r.body_text())
    }
}

fn pipeline_error(err: PipelineError) -> ApiError {
    match err {
        PipelineError::Question(e) => ApiError::new(StatusCode::BAD_REQUEST, e.to_string()),
        PipelineError::Llm(e) => ApiError::new(StatusCode::BAD_GATEWAY, format!("model call failed: {e}")),
        PipelineError::Embed(e) => ApiError::new(StatusCode::BAD_GATEWAY, format!("embedding failed: {e}")),
        PipelineError::Config(e) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

fn join_error(err: tokio::task::JoinError) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {err}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleView {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub id: Option<TripleId>,
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl TripleView {
    pub fn of(t: &Triple, id: Option<TripleId>) -> Self {
        Self { id, head: t.head().to_owned(), relation: t.relation().to_owned(), tail: t.tail().to_owned() }
    }
}

#[derive(Debug, Deserialize)]
pub struct AskRequest {
    pub session_id: Option<String>,
    pub question: String,
    #[serde(default)]
    pub options: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskResponse {
    pub session_id: String,
    pub question_id: String,
    pub answer: Answer,
    pub answer_text: String,
    pub confidence: Confidence,
    pub support_info: String,
    pub triples: Vec<TripleView>,
    pub depth_used: usize,
    pub evidence: Evidence,
    pub trigger: Trigger,
    pub entities: Vec<String>,
}

impl AskResponse {
    pub fn build(session_id: String, question: &Question, result: &PipelineResult) -> Self {
        Self {
            session_id,
            question_id: question.id.clone(),
            answer: result.answer.answer.clone(),
            answer_text: question.answer_text(&result.answer.answer),
            confidence: result.answer.confidence,
            support_info: result.answer.support_info.clone(),
            triples: result.accumulated.iter().map(|t| TripleView::of(t, None)).collect(),
            depth_used: result.depth_used,
            evidence: result.evidence,
            trigger: result.trigger,
            entities: result.entities.clone(),
        }
    }
}

/// Builds the question the service answers for an ask request.
pub fn question_for(id: String, text: &str, options: Option<Vec<String>>) -> Result<Question, ApiError> {
    let options = options.filter(|o| !o.is_empty());
    let kind = if options.is_some() { DatasetKind::MultipleChoice } else { DatasetKind::Generation };
    Question::new(id, text.trim(), options, None, kind)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))
}

async fn ask(
    State(st): State<Arc<AppState>>,
    body: Result<Json<AskRequest>, JsonRejection>,
) -> Result<Json<AskResponse>, ApiError> {
    let Json(req) = body?;
    let session = match &req.session_id {
        Some(id) => {
            let s = st.session(id).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}")))?;
            (id.clone(), s)
        }
        None => {
            let id = uuid::Uuid::new_v4().simple().to_string();
            let s = Arc::new(Mutex::new(Session::default()));
            st.sessions.lock().insert(id.clone(), Arc::clone(&s));
            (id, s)
        }
    };
    let question = question_for(uuid::Uuid::new_v4().simple().to_string(), &req.question, req.options)?;

    let rt = Arc::clone(&st.rt);
    let q = question.clone();
    let result = tokio::task::spawn_blocking(move || {
        let snapshot = rt.store.snapshot();
        answer_question(&rt.engine(), &q, &snapshot)
    })
    .await
    .map_err(join_error)?
    .map_err(pipeline_error)?;

    {
        let mut a = st.activity.lock();
        *a.depth_counts.entry(result.depth_used).or_default() += 1;
        a.answered += 1;
    }
    let (session_id, session) = session;
    let response = AskResponse::build(session_id.clone(), &question, &result);
    st.log_event(&SessionEvent::Ask {
        session_id,
        question_id: question.id.clone(),
        question: question.clone(),
        result: result.clone(),
    });
    session
        .lock()
        .turns
        .insert(question.id.clone(), Turn { question, result, verdict: None });
    Ok(Json(response))
}

#[derive(Debug, Deserialize)]
pub struct FeedbackRequest {
    pub session_id: String,
    pub question_id: String,
    pub verdict: FeedbackVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionSummary {
    pub question_id: String,
    pub candidates: usize,
    pub added_count: usize,
    pub added: Vec<TripleView>,
    pub skipped_exact: usize,
    pub skipped_similar: usize,
    pub error: Option<String>,
}

impl From<&EvolutionRecord> for EvolutionSummary {
    fn from(r: &EvolutionRecord) -> Self {
        Self {
            question_id: r.question_id.clone(),
            candidates: r.candidates.len(),
            added_count: r.added.len(),
            added: r.added.iter().map(|a| TripleView::of(&a.triple, Some(a.id))).collect(),
            skipped_exact: r.skipped_exact.len(),
            skipped_similar: r.skipped_similar.len(),
            error: r.error.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub question_id: String,
    pub verdict: FeedbackVerdict,
    pub evolution: EvolutionSummary,
    pub kg: StoreStats,
}

async fn feedback(
    State(st): State<Arc<AppState>>,
    body: Result<Json<FeedbackRequest>, JsonRejection>,
) -> Result<Json<FeedbackResponse>, ApiError> {
    let Json(req) = body?;
    let session = st
        .session(&req.session_id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {}", req.session_id)))?;
    // claim the verdict slot before doing any work so a second call sees 409
    let (question, result) = {
        let mut s = session.lock();
        let turn = s
            .turns
            .get_mut(&req.question_id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown question {}", req.question_id)))?;
        if turn.verdict.is_some() {
            return Err(ApiError::new(StatusCode::CONFLICT, "feedback already recorded"));
        }
        turn.verdict = Some(req.verdict);
        (turn.question.clone(), turn.result.clone())
    };

    let rt = Arc::clone(&st.rt);
    let verdict = Verdict::from(req.verdict);
    let st2 = Arc::clone(&st);
    let outcome = tokio::task::spawn_blocking(move || {
        let record = if rt.config.pipeline.mode == Mode::Mastership {
            mastership_evolve(&rt.engine(), &rt.store, &question, &result, verdict)?
        } else {
            // without mastership there is no harvesting; keep the verdict only
            EvolutionRecord::empty(&question.id)
        };
        let stats = rt.store.snapshot().stats();
        if !record.added.is_empty() {
            let _guard = st2.persist_lock.lock();
            if let Err(err) = rt.persist() {
                tracing::error!(%err, "could not save store");
            }
        }
        if let Some(audit) = &rt.audit {
            if let Err(err) = audit.append(&record) {
                tracing::warn!(%err, "could not append audit record");
            }
        }
        Ok::<_, wts_core::evolution::EvolutionError>((record, stats))
    })
    .await
    .map_err(join_error)?;

    let (record, stats) = match outcome {
        Ok(v) => v,
        Err(err) => {
            if let Some(turn) = session.lock().turns.get_mut(&req.question_id) {
                turn.verdict = None;
            }
            return Err(ApiError::new(StatusCode::BAD_GATEWAY, format!("evolution failed: {err}")));
        }
    };
    st.activity.lock().size_series.push(stats.triple_count);
    st.log_event(&SessionEvent::Feedback {
        session_id: req.session_id,
        question_id: req.question_id.clone(),
        verdict: req.verdict,
    });
    Ok(Json(FeedbackResponse {
        question_id: req.question_id,
        verdict: req.verdict,
        evolution: EvolutionSummary::from(&record),
        kg: stats,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthCount {
    pub depth: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgStatsResponse {
    pub triple_count: usize,
    pub entity_count: usize,
    pub relation_count: usize,
    /// Store size at startup, then after every feedback call.
    pub size_series: Vec<usize>,
    pub depth_histogram: Vec<DepthCount>,
    pub questions_answered: usize,
}

async fn kg_stats(State(st): State<Arc<AppState>>) -> Json<KgStatsResponse> {
    let stats = st.rt.store.snapshot().stats();
    let a = st.activity.lock();
    let max_depth = st.rt.config.pipeline.max_depth;
    Json(KgStatsResponse {
        triple_count: stats.triple_count,
        entity_count: stats.entity_count,
        relation_count: stats.relation_count,
        size_series: a.size_series.clone(),
        depth_histogram: (1..=max_depth)
            .map(|depth| DepthCount { depth, count: a.depth_counts.get(&depth).copied().unwrap_or(0) })
            .collect(),
        questions_answered: a.answered,
    })
}

#[derive(Debug, Deserialize)]
pub struct SearchQuery {
    pub entity: String,
}

async fn kg_search(
    State(st): State<Arc<AppState>>,
    query: Result<Query<SearchQuery>, QueryRejection>,
) -> Result<Json<Value>, ApiError> {
    let Query(q) = query?;
    let entity = normalize(&q.entity);
    if entity.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "entity must not be empty"));
    }
    let snapshot = st.rt.store.snapshot();
    let triples: Vec<TripleView> = snapshot
        .exact_match(&entity)
        .into_iter()
        .map(|(id, t)| TripleView::of(t, Some(id)))
        .collect();
    Ok(Json(json!({ "entity": entity, "triples": triples })))
}

async fn config(State(st): State<Arc<AppState>>) -> Json<Value> {
    Json(st.rt.config.redacted(|k| std::env::var(k).ok()))
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

pub fn router(state: Arc<AppState>) -> Router {
    let static_dir = state.rt.config.static_dir.clone();
    let api = Router::new()
        .route("/api/ask", post(ask))
        .route("/api/feedback", post(feedback))
        .route("/api/kg/stats", get(kg_stats))
        .route("/api/kg/search", get(kg_search))
        .route("/api/config", get(config))
        .route("/api/health", get(health))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
