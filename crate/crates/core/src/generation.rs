//! Prompting an OpenAI-compatible chat endpoint for queries and diagrams.
//!
//! Diagram output is checked after the fact: unparseable JSON, schema errors
//! and unacceptable lint defects trigger a re-prompt that carries the defect
//! list, up to `repair_attempts` times.

use std::collections::VecDeque;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::graph::{parse_diagram_response_detailed, parse_graph_lenient, DetailLevel, DiagramResponse, Graph};
use crate::lint::{lint_with_id, DefectReport, Severity};

pub const QUERY_TEMPLATE: &str = include_str!("../templates/query.txt");
pub const BASE_DIAGRAM_TEMPLATE: &str = include_str!("../templates/diagram_base.txt");
pub const FINETUNED_TEMPLATE: &str = include_str!("../templates/diagram_finetuned.txt");

pub const API_KEY_ENV: &str = "QDIAGRAM_API_KEY";
pub const MAX_FINAL_QUERIES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("code is empty")]
    EmptyCode,
    #[error("query is empty")]
    EmptyQuery,
}

/// Substitutes `{name}` placeholders in one left-to-right pass, so braces
/// inside the substituted values are never expanded again.
fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + vars.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    'scan: while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        for (name, value) in vars {
            let token_len = name.len() + 2;
            if tail.len() >= token_len
                && tail.as_bytes()[token_len - 1] == b'}'
                && &tail[1..token_len - 1] == *name
            {
                out.push_str(value);
                rest = &tail[token_len..];
                continue 'scan;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

fn require(code: &str, query: Option<&str>) -> Result<(), PromptError> {
    if code.trim().is_empty() {
        return Err(PromptError::EmptyCode);
    }
    if query.is_some_and(|q| q.trim().is_empty()) {
        return Err(PromptError::EmptyQuery);
    }
    Ok(())
}

pub fn build_query_prompt(code: &str) -> Result<String, PromptError> {
    require(code, None)?;
    Ok(fill(QUERY_TEMPLATE, &[("code", code)]))
}

pub fn build_base_diagram_prompt(code: &str, query: &str) -> Result<String, PromptError> {
    require(code, Some(query))?;
    Ok(fill(BASE_DIAGRAM_TEMPLATE, &[("code", code), ("query", query)]))
}

pub fn build_finetuned_prompt(code: &str, query: &str, level: DetailLevel) -> Result<String, PromptError> {
    require(code, Some(query))?;
    Ok(fill(
        FINETUNED_TEMPLATE,
        &[("code", code), ("query", query), ("version", level.as_str())],
    ))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryCandidateSet {
    pub candidates: Vec<String>,
    #[serde(rename = "final")]
    pub final_queries: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryParseError {
    #[error("missing <{0}> block")]
    MissingTag(&'static str),
    #[error("<{tag}> does not hold a JSON array of strings: {detail}")]
    BadArray { tag: &'static str, detail: String },
}

/// Body of the last complete `<tag>...</tag>` block.
fn tag_body<'a>(text: &'a str, tag: &'static str) -> Result<&'a str, QueryParseError> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut found = None;
    let mut from = 0;
    while let Some(rel) = text[from..].find(&open) {
        let start = from + rel + open.len();
        if let Some(end) = text[start..].find(&close) {
            found = Some(&text[start..start + end]);
        }
        from = start;
    }
    found.ok_or(QueryParseError::MissingTag(tag))
}

fn string_array(body: &str, tag: &'static str, warnings: &mut Vec<String>) -> Result<Vec<String>, QueryParseError> {
    let items: Vec<String> = serde_json::from_str(body.trim()).map_err(|e| QueryParseError::BadArray {
        tag,
        detail: e.to_string(),
    })?;
    let before = items.len();
    let kept: Vec<String> = items.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if kept.len() < before {
        warnings.push(format!("dropped {} blank entries from <{tag}>", before - kept.len()));
    }
    Ok(kept)
}

/// Extracts candidate and final query lists from a query-generation answer.
pub fn parse_query_output(text: &str) -> Result<QueryCandidateSet, QueryParseError> {
    let mut warnings = Vec::new();
    let candidates = string_array(tag_body(text, "candidates")?, "candidates", &mut warnings)?;
    let mut final_queries = string_array(tag_body(text, "final_output")?, "final_output", &mut warnings)?;
    if final_queries.len() > MAX_FINAL_QUERIES {
        let msg = format!(
            "final selection had {} queries; truncated to {MAX_FINAL_QUERIES}",
            final_queries.len()
        );
        log::warn!("{msg}");
        warnings.push(msg);
        final_queries.truncate(MAX_FINAL_QUERIES);
    }
    Ok(QueryCandidateSet {
        candidates,
        final_queries,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("endpoint error: {0}")]
    Endpoint(String),
    #[error("no acceptable output after {} attempts", .trace.attempts.len())]
    ExhaustedRepairs {
        best: Option<Box<DiagramOutput>>,
        trace: Box<GenerationTrace>,
    },
    #[error("query output unusable after {} attempts: {error}", .trace.attempts.len())]
    QueryOutput {
        error: QueryParseError,
        trace: Box<GenerationTrace>,
    },
}

impl GenError {
    pub fn trace(&self) -> Option<&GenerationTrace> {
        match self {
            GenError::ExhaustedRepairs { trace, .. } | GenError::QueryOutput { trace, .. } => Some(trace),
            _ => None,
        }
    }
}

#[async_trait]
pub trait ChatClient: Send + Sync {
    async fn complete(&self, request: &ChatRequest) -> Result<String, GenError>;

    /// Cheap reachability probe.
    async fn reachable(&self) -> bool {
        true
    }
}

/// Client for `POST {endpoint}/chat/completions`.
#[derive(Debug, Clone)]
pub struct HttpChatClient {
    endpoint: String,
    api_key: Option<String>,
    http: reqwest::Client,
}

impl HttpChatClient {
    /// Reads the bearer token from `QDIAGRAM_API_KEY` when set.
    pub fn new(endpoint: &str, timeout: Duration) -> Result<Self, GenError> {
        let http = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GenError::Config(e.to_string()))?;
        Ok(HttpChatClient {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            http,
        })
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    fn authorize(&self, req: reqwest::RequestBuilder) -> reqwest::RequestBuilder {
        match &self.api_key {
            Some(k) => req.bearer_auth(k),
            None => req,
        }
    }
}

#[async_trait]
impl ChatClient for HttpChatClient {
    async fn complete(&self, request: &ChatRequest) -> Result<String, GenError> {
        let url = format!("{}/chat/completions", self.endpoint);
        let resp = self
            .authorize(self.http.post(&url).json(request))
            .send()
            .await
            .map_err(|e| GenError::Endpoint(format!("{url}: {e}")))?;
        let status = resp.status();
        let body = resp.text().await.map_err(|e| GenError::Endpoint(e.to_string()))?;
        if !status.is_success() {
            return Err(GenError::Endpoint(format!("{url} returned {status}: {body}")));
        }
        let v: Value =
            serde_json::from_str(&body).map_err(|e| GenError::Endpoint(format!("unreadable completion: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| GenError::Endpoint("completion has no choices[0].message.content".into()))
    }

    async fn reachable(&self) -> bool {
        let url = format!("{}/models", self.endpoint);
        matches!(self.authorize(self.http.get(url)).send().await, Ok(r) if r.status().is_success())
    }
}

/// Replays canned replies in order and records every request.
#[derive(Debug, Default)]
pub struct ScriptedClient {
    replies: Mutex<VecDeque<Result<String, String>>>,
    requests: Mutex<Vec<ChatRequest>>,
}

impl ScriptedClient {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedClient {
            replies: Mutex::new(replies.into_iter().map(|s| Ok(s.into())).collect()),
            requests: Mutex::default(),
        }
    }

    pub fn push_error(&self, message: impl Into<String>) {
        self.replies.lock().expect("lock").push_back(Err(message.into()));
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().expect("lock").clone()
    }
}

#[async_trait]
impl ChatClient for ScriptedClient {
    async fn complete(&self, request: &ChatRequest) -> Result<String, GenError> {
        self.requests.lock().expect("lock").push(request.clone());
        match self.replies.lock().expect("lock").pop_front() {
            Some(Ok(s)) => Ok(s),
            Some(Err(e)) => Err(GenError::Endpoint(e)),
            None => Err(GenError::Endpoint("script exhausted".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub repair_attempts: u32,
    pub timeout_secs: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig::for_diagrams("http://localhost:8000/v1", "default")
    }
}

impl GenerationConfig {
    /// Greedy decoding.
    pub fn for_diagrams(endpoint: &str, model: &str) -> Self {
        GenerationConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 8192,
            repair_attempts: 2,
            timeout_secs: 300,
        }
    }

    /// Sampling at temperature 0.6, top_p 0.9.
    pub fn for_queries(endpoint: &str, model: &str) -> Self {
        GenerationConfig {
            temperature: 0.6,
            top_p: 0.9,
            max_tokens: 4096,
            ..GenerationConfig::for_diagrams(endpoint, model)
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GenError::Config(format!("temperature {} < 0", self.temperature)));
        }
        if self.top_p.is_nan() || self.top_p <= 0.0 || self.top_p > 1.0 {
            return Err(GenError::Config(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if self.max_tokens == 0 {
            return Err(GenError::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn http_client(&self) -> Result<HttpChatClient, GenError> {
        HttpChatClient::new(&self.endpoint, Duration::from_secs(self.timeout_secs))
    }

    fn request(&self, prompt: String) -> ChatRequest {
        ChatRequest {
            model: self.model.clone(),
            messages: vec![ChatMessage::user(prompt)],
            temperature: self.temperature,
            top_p: self.top_p,
            max_tokens: self.max_tokens,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationMode {
    /// Three-version answer with a text answer.
    Base,
    /// One graph at the requested detail level.
    Finetuned,
}

impl std::str::FromStr for GenerationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(GenerationMode::Base),
            "finetuned" | "fine-tuned" => Ok(GenerationMode::Finetuned),
            other => Err(format!("unknown mode `{other}` (expected base or finetuned)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DiagramOutput {
    Response(DiagramResponse),
    Graph(Graph),
}

impl DiagramOutput {
    /// The graph at `level`; a single graph answers every level.
    pub fn graph(&self, level: DetailLevel) -> &Graph {
        match self {
            DiagramOutput::Response(r) => r.version(level),
            DiagramOutput::Graph(g) => g,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u32,
    pub prompt: String,
    pub response: String,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub reports: Vec<DefectReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub trace_id: String,
    pub task: String,
    pub model: String,
    pub endpoint: String,
    /// Always `repair_loop`: output was validated after generation rather
    /// than constrained during decoding.
    pub decoding: String,
    pub max_attempts: u32,
    pub attempts: Vec<AttemptRecord>,
}

impl GenerationTrace {
    fn new(task: &str, cfg: &GenerationConfig) -> Self {
        GenerationTrace {
            trace_id: uuid::Uuid::new_v4().to_string(),
            task: task.into(),
            model: cfg.model.clone(),
            endpoint: cfg.endpoint.clone(),
            decoding: "repair_loop".into(),
            max_attempts: cfg.repair_attempts + 1,
            attempts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated<T> {
    pub output: T,
    pub trace: GenerationTrace,
}

fn repair_note(reports: &[DefectReport]) -> String {
    let defects: Vec<Value> = reports
        .iter()
        .flat_map(|r| {
            r.defects.iter().filter(|d| d.severity == Severity::Unacceptable).map(move |d| {
                json!({"graph": r.graph_id, "kind": d.kind, "subjects": d.subjects, "message": d.message})
            })
        })
        .collect();
    format!(
        "\n\nYour previous answer was rejected by the validator with these defects:\n{}\nFix them and output only the corrected JSON.",
        serde_json::to_string_pretty(&defects).expect("defects serialize")
    )
}

fn parse_output(text: &str, mode: GenerationMode) -> Result<(DiagramOutput, Vec<String>), String> {
    match mode {
        GenerationMode::Base => parse_diagram_response_detailed(text)
            .map(|p| (DiagramOutput::Response(p.value), p.warnings))
            .map_err(|e| format!("{}: {e}", e.kind())),
        GenerationMode::Finetuned => parse_graph_lenient(text)
            .map(|p| (DiagramOutput::Graph(p.value), p.warnings))
            .map_err(|e| format!("{}: {e}", e.kind())),
    }
}

fn lint_output(out: &DiagramOutput, code: &str) -> Vec<DefectReport> {
    match out {
        DiagramOutput::Response(r) => DetailLevel::ALL
            .iter()
            .map(|l| lint_with_id(r.version(*l), Some(code), l.response_key()))
            .collect(),
        DiagramOutput::Graph(g) => vec![lint_with_id(g, Some(code), "graph")],
    }
}

/// Requests a diagram and repairs it until it parses and has no
/// unacceptable defects, or the attempt budget runs out.
pub async fn generate_diagram(
    client: &dyn ChatClient,
    cfg: &GenerationConfig,
    code: &str,
    query: &str,
    mode: GenerationMode,
    level: DetailLevel,
) -> Result<Generated<DiagramOutput>, GenError> {
    cfg.validate()?;
    let prompt = match mode {
        GenerationMode::Base => build_base_diagram_prompt(code, query)?,
        GenerationMode::Finetuned => build_finetuned_prompt(code, query, level)?,
    };
    let task = match mode {
        GenerationMode::Base => "diagram/base".to_string(),
        GenerationMode::Finetuned => format!("diagram/finetuned/{level}"),
    };
    let mut trace = GenerationTrace::new(&task, cfg);
    let mut best: Option<(usize, DiagramOutput)> = None;
    let mut current = prompt.clone();
    for attempt in 1..=cfg.repair_attempts + 1 {
        let response = client.complete(&cfg.request(current.clone())).await?;
        let (reports, warnings, parsed) = match parse_output(&response, mode) {
            Ok((out, warnings)) => (lint_output(&out, code), warnings, Some(out)),
            Err(detail) => (vec![DefectReport::broken_json("response", &detail)], Vec::new(), None),
        };
        let unacceptable: usize = reports.iter().map(|r| r.counts_by_severity.unacceptable).sum();
        let accepted = parsed.is_some() && unacceptable == 0;
        trace.attempts.push(AttemptRecord {
            attempt,
            prompt: current.clone(),
            response,
            accepted,
            warnings,
            reports: reports.clone(),
        });
        if let Some(out) = parsed {
            if accepted {
                return Ok(Generated { output: out, trace });
            }
            if best.as_ref().is_none_or(|(n, _)| unacceptable <= *n) {
                best = Some((unacceptable, out));
            }
        }
        log::info!("attempt {attempt} rejected; {unacceptable} unacceptable defects");
        current = format!("{prompt}{}", repair_note(&reports));
    }
    Err(GenError::ExhaustedRepairs {
        best: best.map(|(_, o)| Box::new(o)),
        trace: Box::new(trace),
    })
}

/// Requests user queries for a code file. Unparseable answers are retried
/// within the same attempt budget.
pub async fn generate_queries(
    client: &dyn ChatClient,
    cfg: &GenerationConfig,
    code: &str,
) -> Result<Generated<QueryCandidateSet>, GenError> {
    cfg.validate()?;
    let prompt = build_query_prompt(code)?;
    let mut trace = GenerationTrace::new("queries", cfg);
    let mut last_err = QueryParseError::MissingTag("candidates");
    for attempt in 1..=cfg.repair_attempts + 1 {
        let response = client.complete(&cfg.request(prompt.clone())).await?;
        let parsed = parse_query_output(&response);
        trace.attempts.push(AttemptRecord {
            attempt,
            prompt: prompt.clone(),
            response,
            accepted: parsed.is_ok(),
            warnings: parsed.as_ref().map(|p| p.warnings.clone()).unwrap_or_default(),
            reports: Vec::new(),
        });
        match parsed {
            Ok(set) => return Ok(Generated { output: set, trace }),
            Err(e) => last_err = e,
        }
    }
    Err(GenError::QueryOutput {
        error: last_err,
        trace: Box::new(trace),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagramTask {
    pub code: String,
    pub query: String,
    pub mode: GenerationMode,
    pub level: DetailLevel,
}

/// Runs many diagram tasks with at most `max_in_flight` concurrent requests.
/// Results come back in task order.
pub async fn generate_batch(
    client: Arc<dyn ChatClient>,
    cfg: &GenerationConfig,
    tasks: Vec<DiagramTask>,
    max_in_flight: usize,
) -> Vec<Result<Generated<DiagramOutput>, GenError>> {
    let limit = Arc::new(tokio::sync::Semaphore::new(max_in_flight.max(1)));
    let mut set = tokio::task::JoinSet::new();
    for (i, task) in tasks.into_iter().enumerate() {
        let client = client.clone();
        let cfg = cfg.clone();
        let limit = limit.clone();
        set.spawn(async move {
            let _permit = limit.acquire_owned().await.expect("semaphore open");
            let r = generate_diagram(client.as_ref(), &cfg, &task.code, &task.query, task.mode, task.level).await;
            (i, r)
        });
    }
    let mut out: Vec<(usize, _)> = Vec::new();
    while let Some(joined) = set.join_next().await {
        out.push(joined.expect("generation task panicked"));
    }
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, r)| r).collect()
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("invalid trace id `{0}`")]
    InvalidId(String),
    #[error("trace `{0}` not found")]
    NotFound(String),
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt trace line: {0}")]
    Corrupt(#[from] serde_json::Error),
}

/// Append-only JSONL files, one per trace id; one line per attempt.
#[derive(Debug, Clone)]
pub struct TraceStore {
    dir: PathBuf,
}

impl TraceStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        TraceStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, id: &str) -> Result<PathBuf, TraceError> {
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(TraceError::InvalidId(id.into()));
        }
        Ok(self.dir.join(format!("{id}.jsonl")))
    }

    pub fn append(&self, trace: &GenerationTrace) -> Result<PathBuf, TraceError> {
        std::fs::create_dir_all(&self.dir)?;
        let path = self.path(&trace.trace_id)?;
        let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
        for a in &trace.attempts {
            let line = json!({
                "trace_id": trace.trace_id,
                "task": trace.task,
                "model": trace.model,
                "endpoint": trace.endpoint,
                "decoding": trace.decoding,
                "max_attempts": trace.max_attempts,
                "attempt": a,
            });
            writeln!(f, "{line}")?;
        }
        Ok(path)
    }

    pub fn load(&self, id: &str) -> Result<Vec<Value>, TraceError> {
        let path = self.path(id)?;
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(TraceError::NotFound(id.into())),
            Err(e) => return Err(e.into()),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(TraceError::from))
            .collect()
    }
}
