//! HTTP service: `/ask`, `/search`, `/documents/{doc_id}`, `/stats`,
//! `/healthz` and an optional static UI under `/ui/`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{MatchedPath, Path, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use corpusforge_core::corpus::CorpusStore;
use corpusforge_core::index::EmbedError;
use corpusforge_core::orchestrator::{AskError, McpError, Orchestrator, StageStatus, StageTrace};
use corpusforge_core::SecurityTier;
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;
use tracing::warn;

/// Largest `k` accepted by `/search`.
pub const MAX_SEARCH_K: usize = 1024;

#[derive(Debug, Clone)]
pub struct AuthConfig {
    pub tokens: BTreeMap<String, SecurityTier>,
    pub allow_anonymous: bool,
}

impl AuthConfig {
    /// `None` means the request is rejected with 401.
    pub fn session_tier(&self, headers: &HeaderMap) -> Option<SecurityTier> {
        match headers.get(header::AUTHORIZATION) {
            None => self.allow_anonymous.then_some(SecurityTier::Public),
            Some(v) => {
                let token = v.to_str().ok()?.strip_prefix("Bearer ")?.trim();
                self.tokens.get(token).copied()
            }
        }
    }
}

#[derive(Debug, Default)]
struct LatencyAgg {
    count: u64,
    total_ms: f64,
    max_ms: f64,
}

impl LatencyAgg {
    fn record(&mut self, ms: f64) {
        self.count += 1;
        self.total_ms += ms;
        self.max_ms = self.max_ms.max(ms);
    }

    fn to_json(&self) -> Value {
        let mean = if self.count == 0 { 0.0 } else { self.total_ms / self.count as f64 };
        json!({"count": self.count, "mean_ms": mean, "max_ms": self.max_ms})
    }
}

#[derive(Debug, Default)]
struct Metrics {
    requests: BTreeMap<String, u64>,
    responses: BTreeMap<u16, u64>,
    stages: BTreeMap<&'static str, LatencyAgg>,
    backends: BTreeMap<String, LatencyAgg>,
}

pub struct AppState {
    orchestrator: Orchestrator,
    store: CorpusStore,
    auth: AuthConfig,
    metrics: Mutex<Metrics>,
    started: Instant,
}

impl AppState {
    pub fn new(orchestrator: Orchestrator, store: CorpusStore, auth: AuthConfig) -> Self {
        AppState {
            orchestrator,
            store,
            auth,
            metrics: Mutex::default(),
            started: Instant::now(),
        }
    }

    pub fn orchestrator(&self) -> &Orchestrator {
        &self.orchestrator
    }

    fn record_traces(&self, traces: &[StageTrace]) {
        let mut m = self.metrics.lock().expect("metrics lock");
        for t in traces.iter().filter(|t| t.status != StageStatus::Skipped) {
            m.stages
                .entry(t.kind.as_str())
                .or_default()
                .record(t.duration.as_secs_f64() * 1000.0);
            for f in &t.fanout_results {
                m.backends
                    .entry(f.backend.clone())
                    .or_default()
                    .record(f.duration.as_secs_f64() * 1000.0);
            }
        }
    }
}

pub fn router(state: Arc<AppState>, ui_dir: Option<PathBuf>) -> Router {
    let mut app = Router::new()
        .route("/ask", post(ask))
        .route("/search", post(search))
        .route("/documents/{doc_id}", get(document))
        .route("/stats", get(stats))
        .route("/healthz", get(|| async { "ok" }));
    if let Some(dir) = ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true));
    }
    app.layer(middleware::from_fn_with_state(state.clone(), count_requests))
        .with_state(state)
}

async fn count_requests(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    let route = req
        .extensions()
        .get::<MatchedPath>()
        .map(|p| p.as_str().to_string())
        .unwrap_or_else(|| "unmatched".to_string());
    let resp = next.run(req).await;
    let mut m = state.metrics.lock().expect("metrics lock");
    *m.requests.entry(route).or_default() += 1;
    *m.responses.entry(resp.status().as_u16()).or_default() += 1;
    resp
}

fn json_response(status: StatusCode, body: &Value) -> Response {
    let bytes = serde_json::to_vec(body).expect("JSON body serializes");
    (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

fn error(status: StatusCode, code: &str, message: impl std::fmt::Display) -> Response {
    json_response(status, &json!({"error": code, "message": message.to_string()}))
}

fn unauthorized() -> Response {
    let mut resp = error(StatusCode::UNAUTHORIZED, "unauthorized", "missing or unknown bearer token");
    resp.headers_mut()
        .insert(header::WWW_AUTHENTICATE, header::HeaderValue::from_static("Bearer"));
    resp
}

fn header_error(e: &McpError) -> Response {
    let status = match e {
        McpError::TierEscalation { .. } => StatusCode::FORBIDDEN,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    };
    error(status, e.code(), e)
}

#[derive(Debug, Deserialize)]
struct AskRequest {
    question: String,
    #[serde(default)]
    mcp: Option<Value>,
    #[serde(default)]
    include_timing: bool,
}

async fn ask(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    let Some(tier) = state.auth.session_tier(&headers) else {
        return unauthorized();
    };
    let req: AskRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, "invalid_request", e),
    };
    if req.question.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "invalid_request", "question is empty");
    }
    match state.orchestrator.ask(req.mcp.as_ref(), tier, &req.question).await {
        Ok(answer) => {
            state.record_traces(&answer.traces);
            json_response(StatusCode::OK, &answer.to_json(req.include_timing))
        }
        Err(AskError::Header(e)) => header_error(&e),
        Err(AskError::Execution(f)) => {
            warn!("ask failed: {f}");
            state.record_traces(&f.traces);
            json_response(StatusCode::INTERNAL_SERVER_ERROR, &f.to_json(req.include_timing))
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SearchRequest {
    query: String,
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    security_tier: Option<SecurityTier>,
}

async fn search(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    let Some(session) = state.auth.session_tier(&headers) else {
        return unauthorized();
    };
    let req: SearchRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, "invalid_request", e),
    };
    let tier = req.security_tier.unwrap_or(session);
    if tier > session {
        let e = McpError::TierEscalation {
            requested: tier,
            session,
        };
        return header_error(&e);
    }
    let k = req.k.unwrap_or(state.orchestrator.defaults().retrieve_k);
    if k == 0 || k > MAX_SEARCH_K {
        return error(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_k",
            format!("k must be in 1..={MAX_SEARCH_K}"),
        );
    }
    let orch = &state.orchestrator;
    let vector = match orch.embedder().embed_batch(std::slice::from_ref(&req.query)).await {
        Ok(mut v) if v.len() == 1 => v.remove(0),
        Ok(_) => return error(StatusCode::INTERNAL_SERVER_ERROR, "embed_failed", "embedder returned no vector"),
        Err(EmbedError::ZeroVector) => {
            return error(StatusCode::UNPROCESSABLE_ENTITY, "empty_query", "query has no indexable terms")
        }
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, "embed_failed", e),
    };
    let top = match orch.index().top_k(&vector, k, tier) {
        Ok(t) => t,
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, "search_failed", e),
    };
    let results: Vec<Value> = top
        .hits
        .iter()
        .map(|h| {
            let chunk = orch.index().chunk(&h.chunk_id);
            json!({
                "chunk_id": h.chunk_id,
                "doc_id": chunk.map(|c| c.doc_id.as_str()),
                "score": h.score,
                "tier": h.tier,
                "source_url": h.source_url,
                "text": chunk.map(|c| c.text.as_str()),
            })
        })
        .collect();
    json_response(
        StatusCode::OK,
        &json!({
            "status": top.status,
            "eligible": top.eligible,
            "security_tier": tier,
            "results": results,
        }),
    )
}

async fn document(State(state): State<Arc<AppState>>, headers: HeaderMap, Path(doc_id): Path<String>) -> Response {
    let Some(session) = state.auth.session_tier(&headers) else {
        return unauthorized();
    };
    let Some(entry) = state.store.get(&doc_id) else {
        return error(StatusCode::NOT_FOUND, "not_found", format!("no document `{doc_id}`"));
    };
    if entry.tier > session {
        return error(
            StatusCode::FORBIDDEN,
            "tier_escalation",
            format!("document tier {} exceeds session tier {session}", entry.tier),
        );
    }
    match state.store.read_document(&doc_id) {
        Ok(content) => {
            let mut body = serde_json::to_value(entry).expect("manifest entry serializes");
            body["content"] = Value::String(content);
            json_response(StatusCode::OK, &body)
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "read_failed", e),
    }
}

async fn stats(State(state): State<Arc<AppState>>) -> Response {
    let body = {
        let m = state.metrics.lock().expect("metrics lock");
        let orch = &state.orchestrator;
        json!({
            "uptime_s": state.started.elapsed().as_secs(),
            "requests": m.requests,
            "responses": m.responses.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>(),
            "stages": m.stages.iter().map(|(k, v)| (k.to_string(), v.to_json())).collect::<BTreeMap<_, _>>(),
            "backends": m.backends.iter().map(|(k, v)| (k.clone(), v.to_json())).collect::<BTreeMap<_, _>>(),
            "index": {
                "chunks": orch.index().len(),
                "dimension": orch.index().meta.dimension,
                "embedder": orch.index().meta.embedder,
            },
            "corpus": {"documents": state.store.entries().len()},
        })
    };
    json_response(StatusCode::OK, &body)
}
