//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.
// `ensure!(a <= b, ..)` negates float comparisons on purpose so NaN fails.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use proptest::test_runner::{Config, TestCaseError, TestRunner};
use serde_json::Value;

use common::mock_llm::MockLlm;
use common::render::{census, expected, fixture_dir, fixtures};
use common::strategies::{apply, corpus, counts, graph, mutation, report_set};
use common::{defect_fixtures, lint_text, listener_graph, LISTENER_SOURCE, SOURCE};
use qdiagram::corpus::{dedup, jaccard_unigram, stratified_split, FileRecord, Split, SplitSpec};
use qdiagram::generation::{
    build_base_diagram_prompt, build_finetuned_prompt, build_query_prompt, generate_diagram, GenError,
    GenerationConfig, GenerationMode, ScriptedClient, BASE_DIAGRAM_TEMPLATE, FINETUNED_TEMPLATE, QUERY_TEMPLATE,
};
use qdiagram::graph::{parse_graph, parse_graph_lenient, serialize_graph, DetailLevel};
use qdiagram::lint::{aggregate, lint, DefectKind, DefectReport, Severity};
use qdiagram::metrics::{
    cohens_kappa, confusion_from_class_counts, micro_metrics, ClassCounts, ConfusionCounts, MetricSet,
    MetricsError, RelevanceLabel,
};
use qdiagram::render::{preflight, render, MarkupFormat};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !($cond) {
            return Err(format!($($fmt)+));
        }
    };
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn metric_oracle() -> Check {
    let table: [(&str, [u64; 4], f64, f64); 5] = [
        ("GPT-4o", [181, 51, 0, 13], 0.947, 0.933),
        ("Claude", [234, 76, 1, 14], 0.954, 0.940),
        ("Qwen", [252, 159, 19, 115], 0.754, 0.653),
        ("SFT", [258, 150, 10, 61], 0.852, 0.784),
        ("Fixed SFT", [258, 145, 4, 62], 0.859, 0.796),
    ];
    let mut worst: f64 = 0.0;
    for (model, [su, co, ha, ve], p, ph) in table {
        let c = ConfusionCounts::with_maxima(ClassCounts::new(su, co, ha, ve), su, co);
        let m = micro_metrics(&[c]).map_err(|e| e.to_string())?;
        let (got, got_h) = (m.precision.unwrap_or(f64::NAN), m.precision_hard.unwrap_or(f64::NAN));
        ensure!(close(got, p, 0.001), "{model}: precision {got:.4} vs {p}");
        ensure!(close(got_h, ph, 0.001), "{model}: hard precision {got_h:.4} vs {ph}");
        ensure!(got_h <= got, "{model}: hard precision exceeds precision");
        worst = worst.max((got - p).abs()).max((got_h - ph).abs());
    }
    Ok(format!("10 cells, max deviation {worst:.5}"))
}

fn defect_catalog() -> Check {
    let start = Instant::now();
    let fixtures = defect_fixtures();
    let covered: BTreeSet<DefectKind> = fixtures.iter().map(|f| f.kind).collect();
    ensure!(covered.len() == 26 && fixtures.len() == 26, "{} fixtures over {} kinds", fixtures.len(), covered.len());
    for f in &fixtures {
        let pos = lint_text(&f.positive, Some(SOURCE));
        let mut want: BTreeSet<DefectKind> = f.entailed.iter().copied().collect();
        want.insert(f.kind);
        ensure!(pos.kinds() == want, "{}: positive fired {:?}", f.kind, pos.kinds());
        let neg = lint_text(&f.negative, Some(SOURCE));
        ensure!(neg.defects.is_empty(), "{}: negative fired {:?}", f.kind, neg.kinds());
        for text in [&f.positive, &f.negative] {
            let a = serde_json::to_vec(&lint_text(text, Some(SOURCE))).expect("report serializes");
            let b = serde_json::to_vec(&lint_text(text, Some(SOURCE))).expect("report serializes");
            ensure!(a == b, "{}: nondeterministic report", f.kind);
        }
    }
    let took = start.elapsed();
    ensure!(took.as_secs_f64() < 1.0, "took {took:?}");
    Ok(format!("26 positive + 26 negative, deterministic, {took:.2?}"))
}

fn aggregation_oracle() -> Check {
    let reports = [
        DefectReport::new(
            "a",
            4,
            vec![
                qdiagram::lint::Defect::new(DefectKind::SingleNodePackage, vec![], ""),
                qdiagram::lint::Defect::new(DefectKind::EdgeToItself, vec![], ""),
            ],
        ),
        DefectReport::new("b", 1, vec![]),
    ];
    let c = aggregate(&reports, Severity::Minor).map_err(|e| e.to_string())?;
    ensure!(close(c.micro, 0.4, 1e-12), "micro {}", c.micro);
    ensure!(close(c.macro_avg, 0.25, 1e-12), "macro {}", c.macro_avg);
    ensure!(close(c.mean, 1.0, 1e-12), "mean {}", c.mean);
    runner(100)
        .run(&report_set(), |reports| {
            let low = aggregate(&reports, Severity::Minor).expect("non-empty");
            let med = aggregate(&reports, Severity::Severe).expect("non-empty");
            let ok = med.micro <= low.micro && med.macro_avg <= low.macro_avg && med.mean <= low.mean;
            if ok {
                Ok(())
            } else {
                Err(TestCaseError::fail(format!("{med:?} > {low:?}")))
            }
        })
        .map_err(|e| e.to_string())?;
    Ok("0.4 / 0.25 / 1.0; monotone on 100 report sets".into())
}

fn fn_formula() -> Check {
    let group = vec![
        ("A".to_string(), ClassCounts::new(2, 0, 0, 0)),
        ("B".to_string(), ClassCounts::new(1, 2, 0, 0)),
    ];
    let out = confusion_from_class_counts(&group).map_err(|e| e.to_string())?;
    ensure!(out["A"].fn_ == 2, "A fn {}", out["A"].fn_);
    ensure!(out["B"].fn_ == 1, "B fn {}", out["B"].fn_);
    ensure!(out["A"].fn_hard == 0 && out["B"].fn_hard == 1, "hard fn {:?}", (out["A"].fn_hard, out["B"].fn_hard));
    let strategy = (proptest::collection::vec(counts(), 1..6), 0u64..5, 0u64..5);
    runner(1000)
        .run(&strategy, |(mut group, ha, ve)| {
            let su = group.iter().map(|c| c.su).max().unwrap_or(0);
            let co = group.iter().map(|c| c.co).max().unwrap_or(0);
            group.push(ClassCounts::new(su, co, ha, ve));
            let named: Vec<(String, ClassCounts)> =
                group.iter().enumerate().map(|(i, c)| (format!("m{i:02}"), *c)).collect();
            let out = confusion_from_class_counts(&named).expect("non-empty group");
            let best = &out[&format!("m{:02}", group.len() - 1)];
            let m = MetricSet::from_counts(best);
            if best.fn_ != 0 || (best.tp > 0 && m.recall != Some(1.0)) {
                return Err(TestCaseError::fail(format!("{best:?}")));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("A fn=2, B fn=1; self-maximum over 1000 groups".into())
}

fn round_trip_and_fuzz() -> Check {
    runner(1000)
        .run(&graph(), |g| {
            let back = parse_graph(serialize_graph(&g).as_bytes()).map_err(|e| TestCaseError::fail(e.to_string()))?;
            if back == g {
                Ok(())
            } else {
                Err(TestCaseError::fail("round trip changed the graph"))
            }
        })
        .map_err(|e| e.to_string())?;
    let strategy = (graph(), proptest::collection::vec(mutation(), 1..4));
    let typed_errors = std::cell::Cell::new(0usize);
    let mut counted = runner(10_000);
    let outcome = counted.run(&strategy, |(g, muts)| {
        let mut bytes = serialize_graph(&g).into_bytes();
        for m in &muts {
            apply(&mut bytes, m);
        }
        let parsed = catch_unwind(|| parse_graph(&bytes).is_err());
        let lenient = catch_unwind(|| parse_graph_lenient(&String::from_utf8_lossy(&bytes)).is_err());
        match (parsed, lenient) {
            (Ok(e), Ok(_)) => {
                typed_errors.set(typed_errors.get() + usize::from(e));
                Ok(())
            }
            _ => Err(TestCaseError::fail("parser panicked")),
        }
    });
    outcome.map_err(|e| e.to_string())?;
    Ok(format!("1000 round trips; 10000 mutations, {} typed errors, 0 panics", typed_errors.get()))
}

fn renderer_goldens() -> Check {
    let all = fixtures();
    ensure!(all.len() == 12, "{} render fixtures", all.len());
    for (stem, g) in &all {
        let want = expected(g);
        for format in [MarkupFormat::PlantUml, MarkupFormat::Mermaid] {
            let a = render(g, format).map_err(|e| format!("{stem}: {e}"))?.text;
            let b = render(g, format).map_err(|e| format!("{stem}: {e}"))?.text;
            ensure!(a == b, "{stem} {format:?}: unstable");
            let golden = std::fs::read_to_string(fixture_dir().join(format!("{stem}.{}", format.extension())))
                .map_err(|e| format!("{stem}: {e}"))?;
            ensure!(a == golden, "{stem} {format:?}: differs from golden");
            let (decls, body, edges) = census(&a, format);
            ensure!(
                (decls, body, edges) == (want.standalone, want.signature_lines, want.edges),
                "{stem} {format:?}: census {:?} vs {:?}",
                (decls, body, edges),
                (want.standalone, want.signature_lines, want.edges)
            );
        }
    }
    let mut corpus_size = 0;
    for (_, g) in &all {
        ensure!(preflight(g).is_err() == lint(g, None).has(DefectKind::NonDrawable), "coherence on render fixture");
        corpus_size += 1;
    }
    for f in defect_fixtures() {
        for text in [&f.positive, &f.negative] {
            if let Ok(g) = parse_graph(text.as_bytes()) {
                ensure!(
                    preflight(&g).is_err() == lint(&g, Some(SOURCE)).has(DefectKind::NonDrawable),
                    "coherence on {} fixture",
                    f.kind
                );
                corpus_size += 1;
            }
        }
    }
    Ok(format!("12 fixtures x 2 formats byte-stable; conservation ok; coherence on {corpus_size} graphs"))
}

fn corpus_pipeline() -> Check {
    ensure!(jaccard_unigram("a b c", "a b c") == 1.0, "identical");
    ensure!(jaccard_unigram("a b c", "d e f") == 0.0, "disjoint");
    ensure!(jaccard_unigram("a b c", "a b d") == 0.5, "half");
    runner(200)
        .run(&corpus(), |records| {
            let once = dedup(records, 0.8).expect("valid threshold");
            let twice = dedup(once.kept.clone(), 0.8).expect("valid threshold");
            if twice.kept == once.kept && twice.dropped.is_empty() {
                Ok(())
            } else {
                Err(TestCaseError::fail("dedup not idempotent"))
            }
        })
        .map_err(|e| e.to_string())?;
    let mut records = Vec::new();
    for (lang, ext, n) in [("python", "py", 40), ("java", "java", 30), ("typescript", "ts", 24), ("go", "go", 20), ("rust", "rs", 10)] {
        for i in 0..n {
            records.push(FileRecord::new(format!("repo{}", i % 7), format!("src/{lang}{i}.{ext}"), lang, format!("{lang} file {i}")));
        }
    }
    ensure!(records.len() == 124, "synthetic manifest has {} files", records.len());
    let a = stratified_split(&records, SplitSpec::Sizes([88, 12, 24]), 42).map_err(|e| e.to_string())?;
    let b = stratified_split(&records, SplitSpec::Sizes([88, 12, 24]), 42).map_err(|e| e.to_string())?;
    let counts: Vec<usize> = Split::ALL.iter().map(|s| a.records_in(*s).count()).collect();
    ensure!(counts == [88, 12, 24], "split counts {counts:?}");
    ensure!(a.to_json() == b.to_json(), "same seed gave different manifests");
    for lang in a.languages.keys() {
        for s in Split::ALL {
            ensure!(a.languages[lang].get(&s).copied().unwrap_or(0) >= 1, "{lang} missing from {s}");
        }
    }
    Ok("jaccard 1.0/0.0/0.5; dedup idempotent on 200 corpora; 88/12/24 of 124, deterministic".into())
}

fn kappa_oracle() -> Check {
    use RelevanceLabel::*;
    let same = cohens_kappa(&[Su, Co, Ha, Ve], &[Su, Co, Ha, Ve]).map_err(|e| e.to_string())?;
    ensure!(same.kappa == 1.0, "identical vectors gave {}", same.kappa);
    let worked = cohens_kappa(&[Su, Su, Co, Ve], &[Su, Co, Co, Ve]).map_err(|e| e.to_string())?;
    ensure!(close(worked.kappa, 0.6364, 0.0001), "worked example gave {}", worked.kappa);
    let mut pairs = 0usize;
    for len in 1..=6u32 {
        let space = 4usize.pow(len);
        let decode = |mut c: usize| -> Vec<RelevanceLabel> {
            (0..len)
                .map(|_| {
                    let l = RelevanceLabel::ALL[c % 4];
                    c /= 4;
                    l
                })
                .collect()
        };
        for i in 0..space {
            let a = decode(i);
            for j in 0..space {
                let b = decode(j);
                let mut t = [[0i64; 4]; 4];
                for (x, y) in a.iter().zip(&b) {
                    t[x.index()][y.index()] += 1;
                }
                let n = len as i64;
                let diag: i64 = (0..4).map(|k| t[k][k]).sum();
                let chance: i64 = (0..4)
                    .map(|k| t[k].iter().sum::<i64>() * (0..4).map(|r| t[r][k]).sum::<i64>())
                    .sum();
                let den = n * n - chance;
                match cohens_kappa(&a, &b) {
                    Ok(r) if den != 0 => {
                        let want = (n * diag - chance) as f64 / den as f64;
                        ensure!(close(r.kappa, want, 1e-12), "{a:?} vs {b:?}: {} vs {want}", r.kappa);
                    }
                    Err(MetricsError::DegenerateMarginals) if den == 0 => {}
                    other => return Err(format!("{a:?} vs {b:?}: {other:?} (den {den})")),
                }
                pairs += 1;
            }
        }
    }
    Ok(format!("1.0; {:.4}; {pairs} brute-force pairs agree", worked.kappa))
}

/// Swaps each substituted value back to its placeholder; what remains must be the template.
fn unfill(text: &str, subs: &[(&str, &str)]) -> String {
    let mut out = text.to_string();
    for (key, value) in subs {
        out = out.replace(value, &format!("{{{key}}}"));
    }
    out
}

fn prompt_fidelity() -> Check {
    let query = "How are console events forwarded?";
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/prompts");
    let read = |name: &str| std::fs::read_to_string(golden.join(name)).map_err(|e| format!("{name}: {e}"));
    let fixed_query = "How does the service worker forward console messages?";
    let q = build_query_prompt(LISTENER_SOURCE).map_err(|e| e.to_string())?;
    ensure!(q == read("query.txt")?, "query prompt differs from golden");
    let b = build_base_diagram_prompt(LISTENER_SOURCE, fixed_query).map_err(|e| e.to_string())?;
    ensure!(b == read("diagram_base.txt")?, "base prompt differs from golden");
    for level in DetailLevel::ALL {
        let f = build_finetuned_prompt(LISTENER_SOURCE, fixed_query, level).map_err(|e| e.to_string())?;
        ensure!(f == read(&format!("diagram_finetuned_{level}.txt"))?, "{level} prompt differs from golden");
        let back = unfill(&f, &[("code", LISTENER_SOURCE), ("query", fixed_query)]);
        let back = back.replace(&format!("[{level} version]"), "[{version} version]");
        ensure!(back == FINETUNED_TEMPLATE, "{level}: text outside placeholders changed");
    }
    ensure!(unfill(&q, &[("code", LISTENER_SOURCE)]) == QUERY_TEMPLATE, "query text outside placeholders changed");
    let b = build_base_diagram_prompt(LISTENER_SOURCE, query).map_err(|e| e.to_string())?;
    ensure!(
        unfill(&b, &[("code", LISTENER_SOURCE), ("query", query)]) == BASE_DIAGRAM_TEMPLATE,
        "base text outside placeholders changed"
    );

    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().map_err(|e| e.to_string())?;
    let g = listener_graph();
    let transcripts: Vec<Vec<String>> = vec![
        vec![g.clone()],
        vec!["".into(), g.clone()],
        vec!["Sorry, I can't.".into(), "{\"nodes\": [".into(), g.clone()],
        vec!["[]".into(); 5],
        vec![format!("```json\n{g}\n```\nHope this helps!")],
        vec![r#"{"nodes":[],"edges":[],"packages":[{"package_id":"p","children":["p"]}]}"#.into(); 5],
        vec![g[..g.len() - 1].to_string(); 5],
    ];
    let cfg = GenerationConfig::for_diagrams("http://scripted/v1", "m");
    let bound = cfg.repair_attempts as usize + 1;
    let mut accepted = 0;
    for t in transcripts {
        let client = ScriptedClient::new(t);
        let r = rt.block_on(generate_diagram(
            &client,
            &cfg,
            LISTENER_SOURCE,
            query,
            GenerationMode::Finetuned,
            DetailLevel::Medium,
        ));
        let attempts = match &r {
            Ok(done) => {
                accepted += 1;
                done.trace.attempts.len()
            }
            Err(GenError::ExhaustedRepairs { trace, .. }) => trace.attempts.len(),
            Err(e) => return Err(format!("unexpected error {e}")),
        };
        ensure!(attempts <= bound && client.requests().len() <= bound, "{attempts} attempts exceed bound {bound}");
    }
    Ok(format!("5 prompts match goldens and templates; 7 transcripts within {bound} attempts ({accepted} accepted)"))
}

fn end_to_end() -> Check {
    let mock = MockLlm::start(["Here you go: {\"nodes\": [".to_string(), listener_graph()]);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let src = dir.path().join("crServiceWorker.ts");
    std::fs::write(&src, LISTENER_SOURCE).map_err(|e| e.to_string())?;
    let traces = dir.path().join("traces");
    let out = Command::new(env!("CARGO_BIN_EXE_qdiagram"))
        .args(["--json", "gen", "diagram", "--code"])
        .arg(&src)
        .args(["--query", "How are console API events forwarded?", "--endpoint", &mock.base_url, "--traces"])
        .arg(&traces)
        .env_remove("QDIAGRAM_API_KEY")
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let report: DefectReport = serde_json::from_value(v["defects"].clone()).map_err(|e| e.to_string())?;
    ensure!(report.count_at_least(Severity::Severe) == 0, "severe defects: {:?}", report.kinds());
    let puml = v["plantuml"].as_str().unwrap_or_default();
    let mmd = v["mermaid"].as_str().unwrap_or_default();
    ensure!(puml.starts_with("@startuml") && puml.ends_with("@enduml\n"), "no PlantUML markup");
    ensure!(mmd.starts_with("classDiagram"), "no Mermaid markup");
    let g: qdiagram::graph::Graph = serde_json::from_value(v["graph"].clone()).map_err(|e| e.to_string())?;
    ensure!(preflight(&g).is_ok(), "graph not drawable");
    ensure!(mock.requests().len() == 2, "{} endpoint calls", mock.requests().len());
    Ok(format!(
        "{} nodes, {} defects, {} attempts, markup for both formats",
        g.nodes.len(),
        report.defects.len(),
        v["attempts"]
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("metric oracle vs reference precision", metric_oracle),
        ("defect catalog suite", defect_catalog),
        ("aggregation oracle", aggregation_oracle),
        ("FN formula and self-maximum", fn_formula),
        ("round trip and fuzz", round_trip_and_fuzz),
        ("renderer goldens", renderer_goldens),
        ("corpus pipeline", corpus_pipeline),
        ("kappa oracle", kappa_oracle),
        ("prompt fidelity and repair bound", prompt_fidelity),
        ("end to end with mock endpoint", end_to_end),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{:.2?}]", start.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{:.2?}]", start.elapsed());
            }
        }
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
