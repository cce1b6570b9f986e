//! C ABI over the qdiagram core.
//!
//! Every fallible call returns a `QdStatus`; on failure the message is
//! available from `qd_last_error_message` on the same thread. Strings
//! returned through out-pointers are owned by the caller and must be released
//! with `qd_string_free`. Graph handles are released with `qd_graph_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use qdiagram::generation::{build_base_diagram_prompt, build_finetuned_prompt, build_query_prompt};
use qdiagram::graph::{parse_graph, serialize_graph, DetailLevel, Graph, ParseError};
use qdiagram::lint::lint;
use qdiagram::metrics::{cohens_kappa, relevance_report, AnnotatedDiagram, MetricsError, RelevanceLabel};
use qdiagram::render::{render, MarkupFormat};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QdStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    BrokenJson = 3,
    SchemaError = 4,
    NonDrawable = 5,
    InvalidArgument = 6,
    Undefined = 7,
    Internal = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QdFormat {
    Plantuml = 0,
    Mermaid = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QdDetailLevel {
    Minimal = 0,
    Medium = 1,
    Full = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QdPrompt {
    /// Query generation; `query` and `detail` are ignored.
    Queries = 0,
    /// Three-version diagram prompt for base models; `detail` is ignored.
    BaseDiagram = 1,
    /// Single-version diagram prompt for fine-tuned models.
    FinetunedDiagram = 2,
}

/// Opaque parsed graph.
pub struct QdGraph {
    graph: Graph,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(QdStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> QdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QdStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            QdStatus::Internal
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure(QdStatus::NullArgument, format!("{what} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(QdStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn opt_text<'a>(p: *const c_char, what: &str) -> FfiResult<Option<&'a str>> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, what).map(Some)
    }
}

unsafe fn graph_ref<'a>(g: *const QdGraph) -> FfiResult<&'a Graph> {
    g.as_ref()
        .map(|h| &h.graph)
        .ok_or_else(|| Failure(QdStatus::NullArgument, "graph handle is NULL".into()))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure(QdStatus::NullArgument, "output pointer is NULL".into()));
    }
    let c = CString::new(s).map_err(|_| Failure(QdStatus::Internal, "output contains a NUL byte".into()))?;
    *out = c.into_raw();
    Ok(())
}

fn parse_failure(e: ParseError) -> Failure {
    let status = match e {
        ParseError::BrokenJson(_) => QdStatus::BrokenJson,
        _ => QdStatus::SchemaError,
    };
    Failure(status, e.to_string())
}

// Enum arguments cross the boundary as plain integers so that an
// out-of-range value from C is an error rather than undefined behaviour.

fn bad_enum(what: &str, v: u32) -> Failure {
    Failure(QdStatus::InvalidArgument, format!("{v} is not a valid {what}"))
}

fn format_arg(v: u32) -> FfiResult<MarkupFormat> {
    match v {
        x if x == QdFormat::Plantuml as u32 => Ok(MarkupFormat::PlantUml),
        x if x == QdFormat::Mermaid as u32 => Ok(MarkupFormat::Mermaid),
        _ => Err(bad_enum("QdFormat", v)),
    }
}

fn level_arg(v: u32) -> FfiResult<DetailLevel> {
    match v {
        x if x == QdDetailLevel::Minimal as u32 => Ok(DetailLevel::Minimal),
        x if x == QdDetailLevel::Medium as u32 => Ok(DetailLevel::Medium),
        x if x == QdDetailLevel::Full as u32 => Ok(DetailLevel::Full),
        _ => Err(bad_enum("QdDetailLevel", v)),
    }
}

fn prompt_arg(v: u32) -> FfiResult<QdPrompt> {
    [QdPrompt::Queries, QdPrompt::BaseDiagram, QdPrompt::FinetunedDiagram]
        .into_iter()
        .find(|p| *p as u32 == v)
        .ok_or_else(|| bad_enum("QdPrompt", v))
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next qd_* call on the same thread.
#[no_mangle]
pub extern "C" fn qd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn qd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a JSON graph into a new handle stored in `*out`.
///
/// # Safety
/// `json` must be NULL or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qd_graph_parse(json: *const c_char, out: *mut *mut QdGraph) -> QdStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(QdStatus::NullArgument, "output pointer is NULL".into()));
        }
        let graph = parse_graph(text(json, "json")?.as_bytes()).map_err(parse_failure)?;
        *out = Box::into_raw(Box::new(QdGraph { graph }));
        Ok(())
    })
}

/// Releases a handle from `qd_graph_parse`. NULL is ignored.
///
/// # Safety
/// `g` must come from `qd_graph_parse` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn qd_graph_free(g: *mut QdGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Number of nodes, or 0 for a NULL handle.
///
/// # Safety
/// `g` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qd_graph_node_count(g: *const QdGraph) -> usize {
    g.as_ref().map_or(0, |h| h.graph.nodes.len())
}

/// Compact JSON for the graph.
///
/// # Safety
/// `g` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qd_graph_serialize(g: *const QdGraph, out: *mut *mut c_char) -> QdStatus {
    guard(|| write_string(out, serialize_graph(graph_ref(g)?)))
}

/// Defect report as JSON. `source` may be NULL to skip name checks.
///
/// # Safety
/// `g` must be a live handle; `source` NULL or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qd_lint(g: *const QdGraph, source: *const c_char, out: *mut *mut c_char) -> QdStatus {
    guard(|| {
        let report = lint(graph_ref(g)?, opt_text(source, "source")?);
        write_string(out, serde_json::to_string(&report).expect("report serializes"))
    })
}

/// PlantUML or Mermaid markup; `format` is a `QdFormat` value. Fails with
/// `QD_STATUS_NON_DRAWABLE` when the package structure cannot be laid out.
///
/// # Safety
/// `g` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qd_render(g: *const QdGraph, format: u32, out: *mut *mut c_char) -> QdStatus {
    guard(|| {
        let format = format_arg(format)?;
        let rendered = render(graph_ref(g)?, format).map_err(|e| Failure(QdStatus::NonDrawable, e.to_string()))?;
        write_string(out, rendered.text)
    })
}

/// Cohen's kappa over two aligned label arrays of length `len`, with labels
/// 0 = sufficiency, 1 = completeness, 2 = hallucination, 3 = verbosity.
///
/// # Safety
/// `a` and `b` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qd_cohens_kappa(a: *const u8, b: *const u8, len: usize, out: *mut f64) -> QdStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return Err(Failure(QdStatus::NullArgument, "NULL argument".into()));
        }
        let decode = |raw: &[u8]| -> FfiResult<Vec<RelevanceLabel>> {
            raw.iter()
                .map(|&x| {
                    RelevanceLabel::ALL
                        .get(x as usize)
                        .copied()
                        .ok_or_else(|| Failure(QdStatus::InvalidArgument, format!("label {x} is not in 0..=3")))
                })
                .collect()
        };
        let la = decode(std::slice::from_raw_parts(a, len))?;
        let lb = decode(std::slice::from_raw_parts(b, len))?;
        let report = cohens_kappa(&la, &lb).map_err(|e| match e {
            MetricsError::DegenerateMarginals => Failure(QdStatus::Undefined, e.to_string()),
            other => Failure(QdStatus::InvalidArgument, other.to_string()),
        })?;
        *out = report.kappa;
        Ok(())
    })
}

/// Relevance report (micro and macro metrics per model) as JSON, from a JSON
/// array of annotation documents.
///
/// # Safety
/// `annotations_json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qd_relevance_report(annotations_json: *const c_char, out: *mut *mut c_char) -> QdStatus {
    guard(|| {
        let docs: Vec<AnnotatedDiagram> = serde_json::from_str(text(annotations_json, "annotations")?)
            .map_err(|e| Failure(QdStatus::SchemaError, e.to_string()))?;
        let report = relevance_report(&docs).map_err(|e| Failure(QdStatus::Undefined, e.to_string()))?;
        write_string(out, serde_json::to_string(&report).expect("report serializes"))
    })
}

/// Fills one of the prompt templates. `kind` is a `QdPrompt` value and
/// `detail` a `QdDetailLevel` value; `query` may be NULL for
/// `QD_PROMPT_QUERIES`.
///
/// # Safety
/// `code` and `query` must be NULL or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qd_build_prompt(
    kind: u32,
    code: *const c_char,
    query: *const c_char,
    detail: u32,
    out: *mut *mut c_char,
) -> QdStatus {
    guard(|| {
        let code = text(code, "code")?;
        let prompt = match prompt_arg(kind)? {
            QdPrompt::Queries => build_query_prompt(code),
            QdPrompt::BaseDiagram => build_base_diagram_prompt(code, text(query, "query")?),
            QdPrompt::FinetunedDiagram => build_finetuned_prompt(code, text(query, "query")?, level_arg(detail)?),
        }
        .map_err(|e| Failure(QdStatus::InvalidArgument, e.to_string()))?;
        write_string(out, prompt)
    })
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn qd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
