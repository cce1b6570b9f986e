//! The diagram intermediate representation.
//!
//! A [`Graph`] is a format-agnostic description of a class-diagram-style
//! view: typed nodes, directed edges and (possibly nested) packages. It is
//! what the models emit and what the linter and renderers consume.
//!
//! Parsing is split in two stages so the two failure modes stay distinct:
//! text that is not JSON at all is [`ParseError::BrokenJson`], while well
//! formed JSON of the wrong shape is [`ParseError::SchemaError`]. Unknown
//! object fields are ignored and reported back as warnings.

use std::fmt;
use std::str::FromStr;

use serde::Deserializer;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Class,
    Variable,
    Function,
    Entity,
    Method,
    Field,
}

impl NodeKind {
    pub const ALL: [NodeKind; 6] = [
        NodeKind::Class,
        NodeKind::Variable,
        NodeKind::Function,
        NodeKind::Entity,
        NodeKind::Method,
        NodeKind::Field,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Class => "class",
            NodeKind::Variable => "variable",
            NodeKind::Function => "function",
            NodeKind::Entity => "entity",
            NodeKind::Method => "method",
            NodeKind::Field => "field",
        }
    }

    /// Methods and fields belong to a class through `source_class_id`.
    pub fn is_member(self) -> bool {
        matches!(self, NodeKind::Method | NodeKind::Field)
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Visibility {
    #[serde(rename = "private")]
    Private,
    #[serde(rename = "protected")]
    Protected,
    #[serde(rename = "package private")]
    PackagePrivate,
    #[serde(rename = "public")]
    Public,
}

impl Visibility {
    pub const ALL: [Visibility; 4] = [
        Visibility::Private,
        Visibility::Protected,
        Visibility::PackagePrivate,
        Visibility::Public,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Visibility::Private => "private",
            Visibility::Protected => "protected",
            Visibility::PackagePrivate => "package private",
            Visibility::Public => "public",
        }
    }

    /// UML visibility marker shared by PlantUML and Mermaid.
    pub fn symbol(self) -> char {
        match self {
            Visibility::Private => '-',
            Visibility::Protected => '#',
            Visibility::PackagePrivate => '~',
            Visibility::Public => '+',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Node {
    #[serde(rename = "type")]
    pub kind: NodeKind,
    pub name: String,
    pub node_id: String,
    pub description: String,
    pub visibility: Visibility,
    #[serde(default, deserialize_with = "non_empty_opt", skip_serializing_if = "Option::is_none")]
    pub return_type: Option<String>,
    #[serde(default, deserialize_with = "non_empty_opt", skip_serializing_if = "Option::is_none")]
    pub params: Option<String>,
    #[serde(default, deserialize_with = "non_empty_opt", skip_serializing_if = "Option::is_none")]
    pub source_class_id: Option<String>,
}

impl Node {
    pub fn new(
        kind: NodeKind,
        node_id: impl Into<String>,
        name: impl Into<String>,
        description: impl Into<String>,
    ) -> Self {
        Node {
            kind,
            name: name.into(),
            node_id: node_id.into(),
            description: description.into(),
            visibility: Visibility::Public,
            return_type: None,
            params: None,
            source_class_id: None,
        }
    }

    pub fn with_visibility(mut self, visibility: Visibility) -> Self {
        self.visibility = visibility;
        self
    }

    pub fn with_return_type(mut self, ty: impl Into<String>) -> Self {
        self.return_type = Some(ty.into());
        self
    }

    pub fn with_params(mut self, params: impl Into<String>) -> Self {
        self.params = Some(params.into());
        self
    }

    pub fn member_of(mut self, class_id: impl Into<String>) -> Self {
        self.source_class_id = Some(class_id.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub node_id_from: String,
    pub node_id_to: String,
    #[serde(default, deserialize_with = "non_empty_opt", skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl Edge {
    pub fn new(from: impl Into<String>, to: impl Into<String>) -> Self {
        Edge {
            node_id_from: from.into(),
            node_id_to: to.into(),
            description: None,
        }
    }

    pub fn with_description(mut self, text: impl Into<String>) -> Self {
        self.description = Some(text.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Package {
    pub package_id: String,
    pub children: Vec<String>,
    #[serde(default, deserialize_with = "non_empty_opt", skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl Package {
    pub fn new<I, S>(package_id: impl Into<String>, children: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Package {
            package_id: package_id.into(),
            children: children.into_iter().map(Into::into).collect(),
            description: None,
        }
    }

    pub fn with_description(mut self, text: impl Into<String>) -> Self {
        self.description = Some(text.into());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Graph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub packages: Vec<Package>,
}

impl Graph {
    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    pub fn package(&self, id: &str) -> Option<&Package> {
        self.packages.iter().find(|p| p.package_id == id)
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.edges.is_empty() && self.packages.is_empty()
    }
}

/// Requested granularity of an answer diagram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetailLevel {
    Minimal,
    #[serde(alias = "moderate")]
    Medium,
    Full,
}

impl DetailLevel {
    pub const ALL: [DetailLevel; 3] = [DetailLevel::Minimal, DetailLevel::Medium, DetailLevel::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            DetailLevel::Minimal => "minimal",
            DetailLevel::Medium => "medium",
            DetailLevel::Full => "full",
        }
    }

    /// Key of this level in the three-version response object.
    pub fn response_key(self) -> &'static str {
        match self {
            DetailLevel::Minimal => "minimal_version",
            DetailLevel::Medium => "medium_version",
            DetailLevel::Full => "full_version",
        }
    }
}

impl fmt::Display for DetailLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetailLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "minimal" => Ok(DetailLevel::Minimal),
            "medium" | "moderate" => Ok(DetailLevel::Medium),
            "full" => Ok(DetailLevel::Full),
            other => Err(format!("unknown detail level `{other}` (expected minimal, medium or full)")),
        }
    }
}

/// The three-version answer produced by base models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagramResponse {
    pub minimal_version: Graph,
    pub medium_version: Graph,
    pub full_version: Graph,
    pub text_answer: String,
}

impl DiagramResponse {
    pub fn version(&self, level: DetailLevel) -> &Graph {
        match level {
            DetailLevel::Minimal => &self.minimal_version,
            DetailLevel::Medium => &self.medium_version,
            DetailLevel::Full => &self.full_version,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("broken JSON: {0}")]
    BrokenJson(String),
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("missing `{}`", .0.response_key())]
    MissingVersion(DetailLevel),
}

impl ParseError {
    pub fn kind(&self) -> &'static str {
        match self {
            ParseError::BrokenJson(_) => "broken_json",
            ParseError::SchemaError(_) => "schema_error",
            ParseError::MissingVersion(_) => "missing_version",
        }
    }

    /// Error code used in HTTP error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            ParseError::BrokenJson(_) => "BrokenJson",
            ParseError::SchemaError(_) | ParseError::MissingVersion(_) => "SchemaError",
        }
    }
}

/// A parsed value plus the unknown fields that were dropped on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

fn non_empty_opt<'de, D>(deserializer: D) -> Result<Option<String>, D::Error>
where
    D: Deserializer<'de>,
{
    let raw = Option::<String>::deserialize(deserializer)?;
    Ok(raw.filter(|s| !s.is_empty()))
}

/// Parses a graph from raw bytes. Unknown fields are logged and dropped.
pub fn parse_graph(bytes: &[u8]) -> Result<Graph, ParseError> {
    let parsed = parse_graph_detailed(bytes)?;
    for w in &parsed.warnings {
        log::warn!("{w}");
    }
    Ok(parsed.value)
}

pub fn parse_graph_detailed(bytes: &[u8]) -> Result<Parsed<Graph>, ParseError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| ParseError::BrokenJson(format!("input is not UTF-8: {e}")))?;
    let value: Value =
        serde_json::from_str(text).map_err(|e| ParseError::BrokenJson(e.to_string()))?;
    graph_from_value(value, "")
}

/// Schema-checks an already decoded JSON value. `path` prefixes warnings.
pub fn graph_from_value(value: Value, path: &str) -> Result<Parsed<Graph>, ParseError> {
    let mut ignored = Vec::new();
    let graph: Graph = serde_ignored::deserialize(value, |p| {
        ignored.push(p.to_string());
    })
    .map_err(|e: serde_json::Error| ParseError::SchemaError(prefixed(path, &e.to_string())))?;
    check_required(&graph).map_err(|msg| ParseError::SchemaError(prefixed(path, &msg)))?;
    let warnings = ignored
        .into_iter()
        .map(|p| format!("ignored unknown field `{}`", join_path(path, &p)))
        .collect();
    Ok(Parsed { value: graph, warnings })
}

fn prefixed(path: &str, msg: &str) -> String {
    if path.is_empty() {
        msg.to_string()
    } else {
        format!("{path}: {msg}")
    }
}

fn join_path(prefix: &str, rest: &str) -> String {
    match (prefix.is_empty(), rest.is_empty()) {
        (true, _) => rest.to_string(),
        (false, true) => prefix.to_string(),
        (false, false) => format!("{prefix}.{rest}"),
    }
}

fn check_required(g: &Graph) -> Result<(), String> {
    for (i, n) in g.nodes.iter().enumerate() {
        for (field, v) in [("name", &n.name), ("node_id", &n.node_id), ("description", &n.description)] {
            if v.is_empty() {
                return Err(format!("nodes[{i}].{field} must be non-empty"));
            }
        }
    }
    for (i, e) in g.edges.iter().enumerate() {
        if e.node_id_from.is_empty() || e.node_id_to.is_empty() {
            return Err(format!("edges[{i}] endpoints must be non-empty"));
        }
    }
    for (i, p) in g.packages.iter().enumerate() {
        if p.package_id.is_empty() {
            return Err(format!("packages[{i}].package_id must be non-empty"));
        }
    }
    Ok(())
}

/// Canonical compact serialization: fixed key order, absent optionals omitted.
pub fn serialize_graph(g: &Graph) -> String {
    serde_json::to_string(g).expect("graph serialization is infallible")
}

/// Same canonical key order, indented for files meant to be read by people.
pub fn serialize_graph_pretty(g: &Graph) -> String {
    serde_json::to_string_pretty(g).expect("graph serialization is infallible")
}

/// Returns the largest balanced top-level `{...}` span in `text`.
///
/// Model output often wraps the JSON in prose or markdown fences; string
/// literals are tracked so braces inside them do not count.
pub fn extract_json_object(text: &str) -> Option<&str> {
    let mut best: Option<(usize, usize)> = None;
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut in_str = false;
    let mut escaped = false;

    for (i, ch) in text.char_indices() {
        if depth > 0 && in_str {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_str = false;
            }
            continue;
        }
        match ch {
            '"' if depth > 0 => in_str = true,
            '{' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            '}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    let end = i + 1;
                    if best.is_none_or(|(s, e)| end - start > e - s) {
                        best = Some((start, end));
                    }
                }
            }
            _ => {}
        }
    }
    best.map(|(s, e)| &text[s..e])
}

/// Lenient single-graph parse for model output (fences and prose tolerated).
pub fn parse_graph_lenient(text: &str) -> Result<Parsed<Graph>, ParseError> {
    let json = extract_json_object(text)
        .ok_or_else(|| ParseError::BrokenJson("no balanced JSON object found".into()))?;
    parse_graph_detailed(json.as_bytes())
}

/// Parses the three-version response object out of raw model output.
pub fn parse_diagram_response(text: &str) -> Result<DiagramResponse, ParseError> {
    let parsed = parse_diagram_response_detailed(text)?;
    for w in &parsed.warnings {
        log::warn!("{w}");
    }
    Ok(parsed.value)
}

pub fn parse_diagram_response_detailed(text: &str) -> Result<Parsed<DiagramResponse>, ParseError> {
    let json = extract_json_object(text)
        .ok_or_else(|| ParseError::BrokenJson("no balanced JSON object found".into()))?;
    let value: Value =
        serde_json::from_str(json).map_err(|e| ParseError::BrokenJson(e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(ParseError::SchemaError("response must be a JSON object".into()));
    };

    let mut warnings = Vec::new();
    let mut graphs = Vec::with_capacity(3);
    for level in DetailLevel::ALL {
        let key = level.response_key();
        let v = obj.remove(key).ok_or(ParseError::MissingVersion(level))?;
        let parsed = graph_from_value(v, key)?;
        warnings.extend(parsed.warnings);
        graphs.push(parsed.value);
    }
    let text_answer = match obj.remove("text_answer") {
        Some(Value::String(s)) => s,
        Some(Value::Null) | None => {
            return Err(ParseError::SchemaError("missing field `text_answer`".into()))
        }
        Some(other) => {
            return Err(ParseError::SchemaError(format!(
                "`text_answer` must be a string, got {}",
                json_type_name(&other)
            )))
        }
    };
    warnings.extend(obj.keys().map(|k| format!("ignored unknown field `{k}`")));

    let full_version = graphs.pop().expect("three graphs");
    let medium_version = graphs.pop().expect("three graphs");
    let minimal_version = graphs.pop().expect("three graphs");
    Ok(Parsed {
        value: DiagramResponse {
            minimal_version,
            medium_version,
            full_version,
            text_answer,
        },
        warnings,
    })
}

fn json_type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}
