//! JSON-over-HTTP facade: generate, validate, render, health and trace lookup.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Mutex;
use tower_http::services::ServeDir;

use crate::generation::{
    generate_diagram, ChatClient, DiagramOutput, GenError, GenerationConfig, GenerationMode, GenerationTrace,
    TraceError, TraceStore,
};
use crate::graph::{parse_graph_detailed, DetailLevel, Graph};
use crate::lint::{lint_with_id, DefectReport};
use crate::render::{render, MarkupFormat};

pub const DEFAULT_MAX_CODE_CHARS: usize = 200_000;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub generation: GenerationConfig,
    pub trace_dir: PathBuf,
    pub static_dir: Option<PathBuf>,
    pub max_code_chars: usize,
    pub health_ttl: Duration,
}

impl ServiceConfig {
    pub fn new(generation: GenerationConfig, trace_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            generation,
            trace_dir: trace_dir.into(),
            static_dir: None,
            max_code_chars: DEFAULT_MAX_CODE_CHARS,
            health_ttl: Duration::from_secs(30),
        }
    }
}

struct AppState {
    client: Arc<dyn ChatClient>,
    cfg: ServiceConfig,
    traces: TraceStore,
    health: Mutex<Option<(Instant, bool)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub code: String,
    pub query: String,
    #[serde(default = "default_level")]
    pub level: DetailLevel,
    #[serde(default = "default_mode")]
    pub mode: GenerationMode,
}

fn default_level() -> DetailLevel {
    DetailLevel::Medium
}

fn default_mode() -> GenerationMode {
    GenerationMode::Finetuned
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub graph: Graph,
    /// Absent when the graph cannot be drawn.
    pub plantuml: Option<String>,
    pub mermaid: Option<String>,
    pub defects: DefectReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_answer: Option<String>,
    pub trace_id: String,
    pub attempts: usize,
    #[serde(default)]
    pub unrepaired: bool,
}

fn error_body(status: StatusCode, error: &str, detail: impl Into<String>) -> Response {
    (status, Json(json!({"error": error, "detail": detail.into()}))).into_response()
}

/// Builds the router. The client is injected so tests can script it.
pub fn router(client: Arc<dyn ChatClient>, cfg: ServiceConfig) -> Router {
    let static_dir = cfg.static_dir.clone();
    let state = Arc::new(AppState {
        client,
        traces: TraceStore::new(cfg.trace_dir.clone()),
        cfg,
        health: Mutex::new(None),
    });
    let api = Router::new()
        .route("/api/generate", post(generate))
        .route("/api/validate", post(validate))
        .route("/api/render", post(render_markup))
        .route("/api/health", get(health))
        .route("/api/traces/{id}", get(trace))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr` and serves until the process exits.
pub async fn serve(client: Arc<dyn ChatClient>, cfg: ServiceConfig, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(client, cfg)).await
}

// Response is the natural error for a handler helper.
#[allow(clippy::result_large_err)]
fn parse_body_graph(body: &[u8]) -> Result<Graph, Response> {
    parse_graph_detailed(body)
        .map(|p| p.value)
        .map_err(|e| error_body(StatusCode::BAD_REQUEST, e.code(), e.to_string()))
}

pub fn build_response(
    out: &DiagramOutput,
    level: DetailLevel,
    code: &str,
    trace: &GenerationTrace,
    unrepaired: bool,
) -> GenerateResponse {
    let graph = out.graph(level).clone();
    let markup = |f| render(&graph, f).ok().map(|r| r.text);
    GenerateResponse {
        plantuml: markup(MarkupFormat::PlantUml),
        mermaid: markup(MarkupFormat::Mermaid),
        defects: lint_with_id(&graph, Some(code), level.as_str()),
        text_answer: match out {
            DiagramOutput::Response(r) => Some(r.text_answer.clone()),
            DiagramOutput::Graph(_) => None,
        },
        trace_id: trace.trace_id.clone(),
        attempts: trace.attempts.len(),
        unrepaired,
        graph,
    }
}

fn store_trace(state: &AppState, trace: &GenerationTrace) {
    if let Err(e) = state.traces.append(trace) {
        log::warn!("could not persist trace {}: {e}", trace.trace_id);
    }
}

async fn generate(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: GenerateRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) if e.is_syntax() || e.is_eof() => return error_body(StatusCode::BAD_REQUEST, "BrokenJson", e.to_string()),
        Err(e) => return error_body(StatusCode::BAD_REQUEST, "SchemaError", e.to_string()),
    };
    if req.code.trim().is_empty() || req.query.trim().is_empty() {
        return error_body(StatusCode::BAD_REQUEST, "InvalidRequest", "code and query must be non-empty");
    }
    let chars = req.code.chars().count();
    if chars > state.cfg.max_code_chars {
        return error_body(
            StatusCode::BAD_REQUEST,
            "InvalidRequest",
            format!("code has {chars} characters; limit is {}", state.cfg.max_code_chars),
        );
    }
    let result = generate_diagram(
        state.client.as_ref(),
        &state.cfg.generation,
        &req.code,
        &req.query,
        req.mode,
        req.level,
    )
    .await;
    match result {
        Ok(done) => {
            store_trace(&state, &done.trace);
            Json(build_response(&done.output, req.level, &req.code, &done.trace, false)).into_response()
        }
        Err(GenError::ExhaustedRepairs { best, trace }) => {
            store_trace(&state, &trace);
            let payload = match best {
                Some(out) => serde_json::to_value(build_response(&out, req.level, &req.code, &trace, true))
                    .expect("response serializes"),
                None => json!({
                    "graph": null,
                    "plantuml": null,
                    "mermaid": null,
                    "defects": trace.attempts.last().and_then(|a| a.reports.first()),
                    "trace_id": trace.trace_id,
                    "attempts": trace.attempts.len(),
                    "unrepaired": true,
                }),
            };
            let mut payload = payload;
            payload["error"] = json!("ExhaustedRepairs");
            (StatusCode::UNPROCESSABLE_ENTITY, Json(payload)).into_response()
        }
        Err(GenError::Endpoint(detail)) => error_body(StatusCode::BAD_GATEWAY, "EndpointError", detail),
        Err(e @ (GenError::Prompt(_) | GenError::Config(_))) => {
            error_body(StatusCode::BAD_REQUEST, "InvalidRequest", e.to_string())
        }
        Err(e) => error_body(StatusCode::BAD_GATEWAY, "EndpointError", e.to_string()),
    }
}

#[derive(Debug, Deserialize)]
struct ValidateParams {
    id: Option<String>,
}

async fn validate(Query(params): Query<ValidateParams>, body: Bytes) -> Response {
    match parse_body_graph(&body) {
        Ok(g) => Json(lint_with_id(&g, None, params.id.as_deref().unwrap_or("graph"))).into_response(),
        Err(r) => r,
    }
}

#[derive(Debug, Deserialize)]
struct RenderParams {
    format: Option<String>,
}

async fn render_markup(Query(params): Query<RenderParams>, body: Bytes) -> Response {
    let format = match params.format.as_deref().unwrap_or("plantuml").parse::<MarkupFormat>() {
        Ok(f) => f,
        Err(e) => return error_body(StatusCode::BAD_REQUEST, "InvalidFormat", e.to_string()),
    };
    let graph = match parse_body_graph(&body) {
        Ok(g) => g,
        Err(r) => return r,
    };
    match render(&graph, format) {
        Ok(out) => Json(out).into_response(),
        Err(e) => (
            StatusCode::UNPROCESSABLE_ENTITY,
            Json(json!({"error": "NonDrawable", "code": e.code(), "detail": e.to_string()})),
        )
            .into_response(),
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    let reachable = {
        let mut cached = state.health.lock().await;
        match *cached {
            Some((at, ok)) if at.elapsed() < state.cfg.health_ttl => ok,
            _ => {
                let ok = state.client.reachable().await;
                *cached = Some((Instant::now(), ok));
                ok
            }
        }
    };
    Json(json!({
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
        "endpoint": state.cfg.generation.endpoint,
        "model": state.cfg.generation.model,
        "endpoint_reachable": reachable,
    }))
}

async fn trace(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match state.traces.load(&id) {
        Ok(lines) => Json(lines).into_response(),
        Err(TraceError::InvalidId(_)) => error_body(StatusCode::BAD_REQUEST, "InvalidTraceId", id),
        Err(TraceError::NotFound(_)) => error_body(StatusCode::NOT_FOUND, "NotFound", id),
        Err(e) => error_body(StatusCode::INTERNAL_SERVER_ERROR, "TraceStore", e.to_string()),
    }
}
