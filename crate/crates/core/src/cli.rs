//! Command-line front end. `dispatch` returns the process exit code.
//!
//! Exit codes: 0 success; 1/2/3 worst lint severity (minor/severe/
//! unacceptable); 64 usage; 65 bad input data; 66 missing input;
//! 69 endpoint unavailable; 73 cannot write output.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, CommandFactory, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::corpus::{self, CurateConfig, FilterParams, SplitSpec};
use crate::generation::{
    generate_diagram, generate_queries, ChatClient, GenError, GenerationConfig, GenerationMode, TraceStore,
};
use crate::graph::{parse_diagram_response_detailed, parse_graph_detailed, serialize_graph_pretty, DetailLevel, ParseError};
use crate::lint::{aggregate_table, lint_with_id, DefectAggregate, DefectReport, Severity};
use crate::metrics::{agreement_from_annotations, load_annotations, relevance_report};
use crate::render::{render, MarkupFormat};
use crate::service::{self, ServiceConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATAERR: i32 = 65;
pub const EXIT_NOINPUT: i32 = 66;
pub const EXIT_UNAVAILABLE: i32 = 69;
pub const EXIT_CANTCREAT: i32 = 73;

/// Worst severity to exit status.
pub fn exit_code_for(worst: Option<Severity>) -> i32 {
    match worst {
        None => 0,
        Some(Severity::Minor) => 1,
        Some(Severity::Severe) => 2,
        Some(Severity::Unacceptable) => 3,
    }
}

#[derive(Debug, Parser)]
#[command(name = "qdiagram", version, about = "Query-driven code diagrams: lint, render, evaluate, curate, generate")]
struct Cli {
    /// Machine-readable JSON output.
    #[arg(long, global = true)]
    json: bool,
    /// TOML file whose keys mirror long flag names (`[gen.diagram]` etc. for subcommands).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for corpus-scale subcommands (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a graph (or a three-version response) and report schema problems.
    Validate {
        file: PathBuf,
        /// Treat the file as a minimal/medium/full response object.
        #[arg(long)]
        response: bool,
    },
    /// Run the defect checker on a graph.
    Lint {
        file: PathBuf,
        /// Source file the diagram describes; enables name checks.
        #[arg(long)]
        source: Option<PathBuf>,
        /// Pick one version when the file holds a three-version response.
        #[arg(long)]
        level: Option<DetailLevel>,
    },
    /// Emit PlantUML or Mermaid markup.
    Render {
        file: PathBuf,
        #[arg(long, default_value = "plantuml")]
        format: MarkupFormat,
        #[arg(long)]
        level: Option<DetailLevel>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Evaluation reports.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Filter, deduplicate and split a source corpus.
    Curate(CurateArgs),
    /// Call a chat-completion endpoint.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Serve the HTTP API (and optionally static UI assets).
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Defect rates per model directory: {macro, micro, mean} x {low, med}.
    Defects {
        /// One directory of graph files per model; the directory name is the model id.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Directory with the source files; matched by file stem.
        #[arg(long)]
        sources: Option<PathBuf>,
        /// Version to lint when files hold three-version responses (default: all three).
        #[arg(long)]
        level: Option<DetailLevel>,
    },
    /// Precision/recall/F1 (plus hard variants) from annotation files.
    Relevance {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cohen's kappa between two annotators.
    Agreement {
        #[arg(long)]
        annotations: PathBuf,
    },
}

#[derive(Debug, Args)]
struct CurateArgs {
    /// Directory of repositories (one sub-directory each) or a JSON manifest.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = corpus::DEFAULT_MIN_CHARS)]
    min_chars: usize,
    #[arg(long, default_value_t = corpus::DEFAULT_MAX_CHARS)]
    max_chars: usize,
    /// Keep files with non-ASCII content.
    #[arg(long)]
    allow_non_ascii: bool,
    #[arg(long, default_value_t = corpus::DEFAULT_JACCARD)]
    jaccard: f64,
    /// Absolute train,val,test sizes.
    #[arg(long, value_parser = triple::<usize>, conflicts_with = "ratios")]
    sizes: Option<[usize; 3]>,
    /// Fractional train,val,test sizes.
    #[arg(long, value_parser = triple::<f64>)]
    ratios: Option<[f64; 3]>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV with repo, stars, license columns.
    #[arg(long)]
    repo_metadata: Option<PathBuf>,
    #[arg(long, default_value_t = 150)]
    top_repos: usize,
    #[arg(long, value_delimiter = ',', default_values_t = corpus::DEFAULT_LICENSES.map(String::from))]
    licenses: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `a,b,c`.
fn triple<T: std::str::FromStr>(s: &str) -> Result<[T; 3], String>
where
    T::Err: std::fmt::Display,
{
    let parts: Vec<T> = s
        .split(',')
        .map(|p| p.trim().parse::<T>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    <[T; 3]>::try_from(parts).map_err(|v| format!("expected three comma-separated values, got {}", v.len()))
}

#[derive(Debug, Args, Clone)]
struct EndpointArgs {
    /// Base URL of an OpenAI-compatible API, e.g. http://localhost:8000/v1.
    #[arg(long)]
    endpoint: String,
    #[arg(long, default_value = "default")]
    model: String,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    max_tokens: Option<u32>,
    #[arg(long, default_value_t = 2)]
    repair_attempts: u32,
    /// Request timeout in seconds.
    #[arg(long, default_value_t = 300)]
    timeout: u64,
    /// Directory for JSONL traces.
    #[arg(long, default_value = "traces")]
    traces: PathBuf,
}

impl EndpointArgs {
    fn config(&self, mut base: GenerationConfig) -> GenerationConfig {
        base.endpoint = self.endpoint.clone();
        base.model = self.model.clone();
        if let Some(t) = self.temperature {
            base.temperature = t;
        }
        if let Some(p) = self.top_p {
            base.top_p = p;
        }
        if let Some(m) = self.max_tokens {
            base.max_tokens = m;
        }
        base.repair_attempts = self.repair_attempts;
        base.timeout_secs = self.timeout;
        base
    }
}

#[derive(Debug, Subcommand)]
enum GenCommand {
    /// Propose user queries for a code file.
    Queries {
        #[arg(long)]
        code: PathBuf,
        #[command(flatten)]
        endpoint: EndpointArgs,
    },
    /// Generate a diagram answering a query about a code file.
    Diagram {
        #[arg(long)]
        code: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long, default_value = "medium")]
        level: DetailLevel,
        #[arg(long, default_value = "finetuned")]
        mode: GenerationMode,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        endpoint: EndpointArgs,
    },
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Directory of built UI assets.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
    #[command(flatten)]
    endpoint: EndpointArgs,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

type CliResult = Result<i32, Failure>;

fn read_input(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::new(EXIT_NOINPUT, format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::new(EXIT_NOINPUT, format!("{}: {e}", path.display())))
}

fn write_output(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::new(EXIT_CANTCREAT, format!("{}: {e}", path.display())))
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
}

fn data_error(path: &Path, e: &ParseError) -> Failure {
    Failure::new(EXIT_DATAERR, format!("{}: {}: {e}", path.display(), e.kind()))
}

/// Graphs in a file: a single graph, or the three versions of a response.
fn load_graphs(
    bytes: &[u8],
    level: Option<DetailLevel>,
) -> Result<Vec<(String, crate::graph::Graph)>, ParseError> {
    let text = String::from_utf8_lossy(bytes);
    let value: Option<serde_json::Value> = serde_json::from_str(&text).ok();
    let is_response = value.as_ref().is_some_and(|v| v.get("minimal_version").is_some());
    if is_response {
        let r = parse_diagram_response_detailed(&text)?.value;
        let levels: Vec<DetailLevel> = match level {
            Some(l) => vec![l],
            None => DetailLevel::ALL.to_vec(),
        };
        Ok(levels.into_iter().map(|l| (l.as_str().to_string(), r.version(l).clone())).collect())
    } else {
        Ok(vec![("graph".to_string(), parse_graph_detailed(bytes)?.value)])
    }
}

fn run_validate(json: bool, file: &Path, response: bool) -> CliResult {
    let bytes = read_input(file)?;
    if response {
        let text = String::from_utf8_lossy(&bytes);
        let parsed = parse_diagram_response_detailed(&text).map_err(|e| data_error(file, &e))?;
        if json {
            print_json(&json!({"ok": true, "warnings": parsed.warnings, "response": parsed.value}));
        } else {
            for w in &parsed.warnings {
                eprintln!("warning: {w}");
            }
            for l in DetailLevel::ALL {
                let g = parsed.value.version(l);
                println!("{l}: {} nodes, {} edges, {} packages", g.nodes.len(), g.edges.len(), g.packages.len());
            }
        }
        return Ok(EXIT_OK);
    }
    let parsed = parse_graph_detailed(&bytes).map_err(|e| data_error(file, &e))?;
    if json {
        print_json(&json!({"ok": true, "warnings": parsed.warnings, "graph": parsed.value}));
    } else {
        for w in &parsed.warnings {
            eprintln!("warning: {w}");
        }
        let g = &parsed.value;
        println!("ok: {} nodes, {} edges, {} packages", g.nodes.len(), g.edges.len(), g.packages.len());
    }
    Ok(EXIT_OK)
}

fn print_report_table(r: &DefectReport) {
    println!(
        "{}: {} nodes, {} defects ({} minor, {} severe, {} unacceptable)",
        r.graph_id,
        r.node_count,
        r.defects.len(),
        r.counts_by_severity.minor,
        r.counts_by_severity.severe,
        r.counts_by_severity.unacceptable
    );
    for d in &r.defects {
        println!("  {:<13} {:<32} {}", d.severity.as_str(), d.kind.as_str(), d.message);
    }
}

fn run_lint(json: bool, file: &Path, source: Option<&Path>, level: Option<DetailLevel>) -> CliResult {
    let bytes = read_input(file)?;
    let code = source.map(read_text).transpose()?;
    let reports = match load_graphs(&bytes, level) {
        Ok(graphs) => graphs
            .iter()
            .map(|(id, g)| lint_with_id(g, code.as_deref(), id))
            .collect::<Vec<_>>(),
        Err(e @ ParseError::BrokenJson(_)) => vec![DefectReport::broken_json("graph", &e.to_string())],
        Err(e) => return Err(data_error(file, &e)),
    };
    if json {
        if reports.len() == 1 {
            print_json(&reports[0]);
        } else {
            print_json(&reports);
        }
    } else {
        reports.iter().for_each(print_report_table);
    }
    Ok(exit_code_for(reports.iter().filter_map(DefectReport::worst_severity).max()))
}

fn run_render(json: bool, file: &Path, format: MarkupFormat, level: Option<DetailLevel>, output: Option<&Path>) -> CliResult {
    let bytes = read_input(file)?;
    let graphs = load_graphs(&bytes, Some(level.unwrap_or(DetailLevel::Medium))).map_err(|e| data_error(file, &e))?;
    let (_, graph) = &graphs[0];
    let out = render(graph, format)
        .map_err(|e| Failure::new(EXIT_DATAERR, format!("{}: non_drawable: {e}", file.display())))?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(path) = output {
        write_output(path, &out.text)?;
    }
    if json {
        print_json(&out);
    } else if output.is_none() {
        print!("{}", out.text);
    }
    Ok(EXIT_OK)
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    if !dir.is_dir() {
        return Err(Failure::new(EXIT_NOINPUT, format!("{}: not a directory", dir.display())));
    }
    let mut files: Vec<PathBuf> = walkdir::WalkDir::new(dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && e.path().extension().is_some_and(|x| x == "json"))
        .map(|e| e.into_path())
        .collect();
    files.sort();
    Ok(files)
}

fn source_for(sources: &Path, graph_file: &Path) -> Option<PathBuf> {
    let stem = graph_file.file_stem()?.to_str()?;
    let mut hits: Vec<PathBuf> = std::fs::read_dir(sources)
        .ok()?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.file_stem().and_then(|s| s.to_str()) == Some(stem))
        .collect();
    hits.sort();
    hits.into_iter().next()
}

#[derive(Debug, Serialize)]
struct ModelDefects {
    files: usize,
    diagrams: usize,
    broken_json: usize,
    /// Zero-node diagrams (including unparseable output) left out of the grid.
    excluded_zero_node: usize,
    aggregate: Option<DefectAggregate>,
}

fn lint_dir(dir: &Path, sources: Option<&Path>, level: Option<DetailLevel>) -> Result<(usize, Vec<DefectReport>), Failure> {
    let files = json_files(dir)?;
    let per_file: Vec<Result<Vec<DefectReport>, Failure>> = files
        .par_iter()
        .map(|f| {
            let bytes = read_input(f)?;
            let code = match sources.and_then(|s| source_for(s, f)) {
                Some(p) => Some(read_text(&p)?),
                None => None,
            };
            let rel = f.strip_prefix(dir).unwrap_or(f).display().to_string();
            Ok(match load_graphs(&bytes, level) {
                Ok(graphs) => graphs
                    .iter()
                    .map(|(id, g)| lint_with_id(g, code.as_deref(), &format!("{rel}#{id}")))
                    .collect(),
                Err(e) => vec![DefectReport::broken_json(rel, &e.to_string())],
            })
        })
        .collect();
    let mut reports = Vec::new();
    for r in per_file {
        reports.extend(r?);
    }
    Ok((files.len(), reports))
}

fn run_eval_defects(json: bool, dirs: &[PathBuf], sources: Option<&Path>, level: Option<DetailLevel>) -> CliResult {
    let mut results: BTreeMap<String, ModelDefects> = BTreeMap::new();
    for dir in dirs {
        let model = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let (files, reports) = lint_dir(dir, sources, level)?;
        let broken = reports
            .iter()
            .filter(|r| r.has(crate::lint::DefectKind::BrokenJson))
            .count();
        let usable: Vec<DefectReport> = reports.iter().filter(|r| r.node_count > 0).cloned().collect();
        let excluded = reports.len() - usable.len();
        if excluded > 0 {
            log::warn!("{model}: {excluded} zero-node diagrams excluded from per-node rates");
        }
        results.insert(
            model,
            ModelDefects {
                files,
                diagrams: reports.len(),
                broken_json: broken,
                excluded_zero_node: excluded,
                aggregate: aggregate_table(&usable).ok(),
            },
        );
    }
    if json {
        print_json(&results);
        return Ok(EXIT_OK);
    }
    let models: Vec<&String> = results.keys().collect();
    print!("{:<14}", "");
    for m in &models {
        print!("{:>26}", m.chars().take(25).collect::<String>());
    }
    println!();
    print!("{:<14}", "");
    for _ in &models {
        print!("{:>13}{:>13}", "Low", "Med");
    }
    println!();
    for (label, pick) in [
        ("Macro", (|c: &crate::lint::AggregateCell| c.macro_avg) as fn(&crate::lint::AggregateCell) -> f64),
        ("Micro", |c| c.micro),
        ("Mean", |c| c.mean),
    ] {
        print!("{label:<14}");
        for m in &models {
            match &results[*m].aggregate {
                Some(a) => print!("{:>13.3}{:>13.3}", pick(&a.low), pick(&a.med)),
                None => print!("{:>13}{:>13}", "n/a", "n/a"),
            }
        }
        println!();
    }
    for (m, r) in &results {
        if r.excluded_zero_node > 0 {
            println!("{m}: {} of {} diagrams excluded (zero nodes; {} broken JSON)", r.excluded_zero_node, r.diagrams, r.broken_json);
        }
    }
    Ok(EXIT_OK)
}

fn metrics_failure(e: crate::metrics::MetricsError) -> Failure {
    match e {
        crate::metrics::MetricsError::Io(m) => Failure::new(EXIT_NOINPUT, m),
        other => Failure::new(EXIT_DATAERR, other.to_string()),
    }
}

fn run_eval_relevance(json: bool, annotations: &Path, out: Option<&Path>) -> CliResult {
    let diagrams = load_annotations(annotations).map_err(metrics_failure)?;
    let report = relevance_report(&diagrams).map_err(metrics_failure)?;
    if let Some(path) = out {
        write_output(path, &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))?;
    }
    if json {
        print_json(&report);
    } else {
        print!("{}", report.table());
    }
    Ok(EXIT_OK)
}

fn run_eval_agreement(json: bool, annotations: &Path) -> CliResult {
    let diagrams = load_annotations(annotations).map_err(metrics_failure)?;
    let report = agreement_from_annotations(&diagrams).map_err(metrics_failure)?;
    if json {
        print_json(&report);
    } else {
        println!(
            "kappa {:.4} (observed {:.4}, expected {:.4}, {} items)",
            report.kappa, report.observed, report.expected, report.items
        );
    }
    Ok(EXIT_OK)
}

fn run_curate(json: bool, a: &CurateArgs) -> CliResult {
    let split = match (&a.sizes, &a.ratios) {
        (_, Some(r)) => SplitSpec::Ratios(*r),
        (Some(s), None) => SplitSpec::Sizes(*s),
        (None, None) => SplitSpec::Sizes(corpus::DEFAULT_SIZES),
    };
    if !a.input.exists() {
        return Err(Failure::new(EXIT_NOINPUT, format!("{}: no such file or directory", a.input.display())));
    }
    let cfg = CurateConfig {
        input: a.input.clone(),
        filter: FilterParams {
            min_chars: a.min_chars,
            max_chars: a.max_chars,
            ascii_only: !a.allow_non_ascii,
        },
        jaccard_threshold: a.jaccard,
        split,
        seed: a.seed,
        repo_metadata: a.repo_metadata.clone(),
        top_repos: a.top_repos,
        licenses: a.licenses.clone(),
    };
    let manifest = corpus::curate(&cfg).map_err(|e| match e {
        corpus::CorpusError::Io { .. } => Failure::new(EXIT_NOINPUT, e.to_string()),
        other => Failure::new(EXIT_DATAERR, other.to_string()),
    })?;
    write_output(&a.out, &manifest.to_json())?;
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    if json {
        print_json(&manifest);
    } else {
        println!(
            "{} records: train {}, val {}, test {} ({} duplicates dropped, {} unassigned) -> {}",
            manifest.records.len(),
            manifest.counts.get(&corpus::Split::Train).unwrap_or(&0),
            manifest.counts.get(&corpus::Split::Val).unwrap_or(&0),
            manifest.counts.get(&corpus::Split::Test).unwrap_or(&0),
            manifest.dropped_duplicates.len(),
            manifest.unassigned,
            a.out.display()
        );
    }
    Ok(EXIT_OK)
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::new(70, e.to_string()))
}

fn gen_failure(e: &GenError) -> Failure {
    match e {
        GenError::Endpoint(_) => Failure::new(EXIT_UNAVAILABLE, e.to_string()),
        GenError::Prompt(_) | GenError::Config(_) => Failure::new(EXIT_USAGE, e.to_string()),
        _ => Failure::new(EXIT_DATAERR, e.to_string()),
    }
}

fn persist(store: &TraceStore, trace: &crate::generation::GenerationTrace) {
    match store.append(trace) {
        Ok(p) => log::info!("trace written to {}", p.display()),
        Err(e) => eprintln!("warning: could not write trace: {e}"),
    }
}

fn run_gen_queries(json: bool, code: &Path, ep: &EndpointArgs) -> CliResult {
    let code = read_text(code)?;
    let cfg = ep.config(GenerationConfig::for_queries(&ep.endpoint, &ep.model));
    let client = cfg.http_client().map_err(|e| gen_failure(&e))?;
    let store = TraceStore::new(&ep.traces);
    let result = runtime()?.block_on(generate_queries(&client, &cfg, &code));
    match result {
        Ok(done) => {
            persist(&store, &done.trace);
            if json {
                print_json(&json!({"trace_id": done.trace.trace_id, "queries": done.output}));
            } else {
                for w in &done.output.warnings {
                    eprintln!("warning: {w}");
                }
                for q in &done.output.final_queries {
                    println!("{q}");
                }
            }
            Ok(EXIT_OK)
        }
        Err(e) => {
            if let Some(t) = e.trace() {
                persist(&store, t);
            }
            Err(gen_failure(&e))
        }
    }
}

fn run_gen_diagram(
    json: bool,
    code_path: &Path,
    query: &str,
    level: DetailLevel,
    mode: GenerationMode,
    output: Option<&Path>,
    ep: &EndpointArgs,
) -> CliResult {
    let code = read_text(code_path)?;
    let cfg = ep.config(GenerationConfig::for_diagrams(&ep.endpoint, &ep.model));
    let client = cfg.http_client().map_err(|e| gen_failure(&e))?;
    let store = TraceStore::new(&ep.traces);
    let result = runtime()?.block_on(generate_diagram(&client, &cfg, &code, query, mode, level));
    let (out, trace, repaired) = match result {
        Ok(done) => (done.output, done.trace, true),
        Err(GenError::ExhaustedRepairs { best, trace }) => {
            persist(&store, &trace);
            match best {
                Some(b) => (*b, *trace, false),
                None => {
                    return Err(Failure::new(
                        EXIT_DATAERR,
                        format!("no parseable output after {} attempts (trace {})", trace.attempts.len(), trace.trace_id),
                    ))
                }
            }
        }
        Err(e) => return Err(gen_failure(&e)),
    };
    if repaired {
        persist(&store, &trace);
    }
    let resp = service::build_response(&out, level, &code, &trace, !repaired);
    if let Some(path) = output {
        write_output(path, &(serialize_graph_pretty(&resp.graph) + "\n"))?;
    }
    if json {
        print_json(&resp);
    } else {
        if output.is_none() {
            println!("{}", serialize_graph_pretty(&resp.graph));
        }
        if let Some(t) = &resp.text_answer {
            eprintln!("answer: {t}");
        }
        eprintln!(
            "trace {} ({} attempt(s)); {} defects",
            resp.trace_id,
            resp.attempts,
            resp.defects.defects.len()
        );
    }
    if !repaired {
        eprintln!("warning: output still has unacceptable defects after all repair attempts");
    }
    Ok(exit_code_for(resp.defects.worst_severity()))
}

fn run_serve(a: &ServeArgs) -> CliResult {
    let cfg = a.endpoint.config(GenerationConfig::for_diagrams(&a.endpoint.endpoint, &a.endpoint.model));
    let client: Arc<dyn ChatClient> = Arc::new(cfg.http_client().map_err(|e| gen_failure(&e))?);
    let mut svc = ServiceConfig::new(cfg, a.endpoint.traces.clone());
    svc.static_dir = a.static_dir.clone();
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| Failure::new(EXIT_USAGE, format!("bad address: {e}")))?;
    runtime()?
        .block_on(service::serve(client, svc, addr))
        .map_err(|e| Failure::new(EXIT_UNAVAILABLE, e.to_string()))?;
    Ok(EXIT_OK)
}

/// Subcommand names leading `argv`, skipping global flags.
fn subcommand_path(argv: &[OsString]) -> Vec<String> {
    let mut cmd = Cli::command();
    let mut path = Vec::new();
    let mut i = 1;
    while i < argv.len() {
        let tok = argv[i].to_string_lossy();
        if tok == "--config" || tok == "--workers" {
            i += 2;
            continue;
        }
        if tok.starts_with('-') {
            i += 1;
            continue;
        }
        match cmd.find_subcommand(tok.as_ref()) {
            Some(sub) => {
                path.push(tok.into_owned());
                cmd = sub.clone();
                i += 1;
            }
            None => break,
        }
    }
    path
}

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    argv.iter().enumerate().find_map(|(i, a)| {
        let s = a.to_string_lossy();
        if s == "--config" {
            argv.get(i + 1).map(PathBuf::from)
        } else {
            s.strip_prefix("--config=").map(PathBuf::from)
        }
    })
}

fn toml_scalar(v: &toml::Value) -> Option<String> {
    Some(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        toml::Value::Array(items) => items.iter().map(toml_scalar).collect::<Option<Vec<_>>>()?.join(","),
        _ => return None,
    })
}

/// Appends flags from the config file that are not already on the command
/// line. Top-level keys apply anywhere; `[a.b]` tables apply to `a b`.
fn apply_config(argv: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::new(EXIT_NOINPUT, format!("{}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| Failure::new(EXIT_USAGE, format!("{}: {e}", path.display())))?;
    let sub_path = subcommand_path(&argv);
    let mut leaf = Cli::command();
    for name in &sub_path {
        leaf = leaf.find_subcommand(name).expect("path from parser").clone();
    }
    let root = Cli::command();
    let accepts = |key: &str| -> Option<bool> {
        leaf.get_arguments()
            .chain(root.get_arguments())
            .find(|a| a.get_long() == Some(key))
            .map(|a| !a.get_action().takes_values())
    };
    let mut scopes: Vec<&toml::Table> = vec![&table];
    let mut cur = &table;
    for name in &sub_path {
        match cur.get(name).and_then(toml::Value::as_table) {
            Some(t) => {
                scopes.push(t);
                cur = t;
            }
            None => break,
        }
    }
    let mut out = argv.clone();
    let mut seen = std::collections::BTreeSet::new();
    for scope in scopes.into_iter().rev() {
        for (key, value) in scope {
            if value.is_table() || key == "config" || !seen.insert(key.clone()) {
                continue;
            }
            let flag = format!("--{key}");
            let present = argv.iter().any(|a| {
                let s = a.to_string_lossy();
                s == flag || s.starts_with(&format!("{flag}="))
            });
            if present {
                continue;
            }
            match (accepts(key), value) {
                (Some(true), toml::Value::Boolean(true)) => out.push(flag.into()),
                (Some(true), _) => {}
                (Some(false), v) => match toml_scalar(v) {
                    Some(s) => out.push(format!("{flag}={s}").into()),
                    None => log::warn!("config key `{key}` has an unsupported value type"),
                },
                (None, _) => log::warn!("config key `{key}` does not apply to this command"),
            }
        }
    }
    Ok(out)
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match apply_config(argv) {
        Ok(a) => a,
        Err(f) => {
            eprintln!("error: {}", f.message);
            return f.code;
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    let json = cli.json;
    let result = with_workers(cli.workers, || match &cli.command {
        Command::Validate { file, response } => run_validate(json, file, *response),
        Command::Lint { file, source, level } => run_lint(json, file, source.as_deref(), *level),
        Command::Render {
            file,
            format,
            level,
            output,
        } => run_render(json, file, *format, *level, output.as_deref()),
        Command::Eval(EvalCommand::Defects { dirs, sources, level }) => {
            run_eval_defects(json, dirs, sources.as_deref(), *level)
        }
        Command::Eval(EvalCommand::Relevance { annotations, out }) => {
            run_eval_relevance(json, annotations, out.as_deref())
        }
        Command::Eval(EvalCommand::Agreement { annotations }) => run_eval_agreement(json, annotations),
        Command::Curate(a) => run_curate(json, a),
        Command::Gen(GenCommand::Queries { code, endpoint }) => run_gen_queries(json, code, endpoint),
        Command::Gen(GenCommand::Diagram {
            code,
            query,
            level,
            mode,
            output,
            endpoint,
        }) => run_gen_diagram(json, code, query, *level, *mode, output.as_deref(), endpoint),
        Command::Serve(a) => run_serve(a),
    });
    match result {
        Ok(code) => code,
        Err(f) => {
            if json {
                println!("{}", json!({"error": f.message, "exit_code": f.code}));
            }
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
