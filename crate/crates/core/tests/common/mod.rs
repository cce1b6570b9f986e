#![allow(dead_code)]

pub mod mock_llm;
pub mod render;
pub mod strategies;

use std::collections::BTreeSet;

use qdiagram::graph::{parse_graph, ParseError};
use qdiagram::lint::{lint, DefectKind, DefectReport};
use serde_json::{json, Value};

/// Source text that contains every node name used by the fixtures.
pub const SOURCE: &str = "class A { m() {} m1() {} m2() {} }\nclass B {}\nclass C {}\nclass D {}\n// My A, Caf\u{e9}, A2\n";

pub struct Fixture {
    pub kind: DefectKind,
    pub positive: String,
    pub negative: String,
    /// Kinds that necessarily fire alongside `kind` in the positive case.
    pub entailed: Vec<DefectKind>,
    pub note: &'static str,
}

fn class(id: &str) -> Value {
    json!({"type": "class", "name": id, "node_id": id, "description": "a class", "visibility": "public"})
}

fn method(id: &str, owner: Option<&str>) -> Value {
    let mut v = json!({"type": "method", "name": id, "node_id": id, "description": "a method", "visibility": "public", "return_type": "void", "params": ""});
    if let Some(o) = owner {
        v["source_class_id"] = json!(o);
    }
    v
}

fn entity(id: &str) -> Value {
    json!({"type": "entity", "name": id, "node_id": id, "description": "a concept", "visibility": "public"})
}

fn edge(from: &str, to: &str) -> Value {
    json!({"node_id_from": from, "node_id_to": to, "description": "uses"})
}

fn package(id: &str, children: &[&str]) -> Value {
    json!({"package_id": id, "children": children})
}

fn graph(nodes: Vec<Value>, edges: Vec<Value>, packages: Vec<Value>) -> String {
    json!({"nodes": nodes, "edges": edges, "packages": packages}).to_string()
}

/// Two classes joined by one edge: lints clean against [`SOURCE`].
pub fn base() -> String {
    graph(vec![class("A"), class("B")], vec![edge("A", "B")], vec![])
}

pub fn defect_fixtures() -> Vec<Fixture> {
    use DefectKind::*;
    let fx = |kind, positive: String, negative: String, entailed: Vec<DefectKind>, note| Fixture {
        kind,
        positive,
        negative,
        entailed,
        note,
    };
    let mut named = class("A");
    named["name"] = json!("My A");
    let mut cafe = class("A");
    cafe["name"] = json!("Caf\u{e9}");
    let mut a_id = class("A\u{e9}");
    a_id["name"] = json!("A");
    let mut dup = class("A");
    dup["name"] = json!("A2");
    vec![
        fx(
            SpacesInNodeNames,
            graph(vec![named, class("B")], vec![edge("A", "B")], vec![]),
            base(),
            vec![],
            "",
        ),
        fx(
            SpacesInPackageIds,
            graph(vec![class("A"), class("B")], vec![edge("A", "B")], vec![package("my pkg", &["A", "B"])]),
            graph(vec![class("A"), class("B")], vec![edge("A", "B")], vec![package("my_pkg", &["A", "B"])]),
            vec![],
            "",
        ),
        fx(
            SingleNode,
            graph(vec![class("A")], vec![], vec![]),
            base(),
            vec![NoEdges],
            "a lone node cannot have an edge without also being an edge to itself",
        ),
        fx(
            NoEdges,
            graph(vec![class("A"), class("B")], vec![], vec![]),
            base(),
            vec![MultipleConnectedComponents],
            "two nodes without edges are two components",
        ),
        fx(
            EdgeToItself,
            graph(vec![class("A"), class("B")], vec![edge("A", "B"), edge("B", "B")], vec![]),
            base(),
            vec![],
            "",
        ),
        fx(
            RepeatedEdges,
            graph(vec![class("A"), class("B")], vec![edge("A", "B"), edge("A", "B")], vec![]),
            base(),
            vec![],
            "",
        ),
        fx(
            MultiEdgeBetweenPair,
            graph(vec![class("A"), class("B")], vec![edge("A", "B"), edge("B", "A")], vec![]),
            base(),
            vec![],
            "",
        ),
        fx(
            EdgeToSourceClass,
            graph(
                vec![class("A"), class("B"), method("m", Some("A"))],
                vec![edge("A", "B"), edge("m", "A")],
                vec![],
            ),
            graph(
                vec![class("A"), class("B"), method("m", Some("A"))],
                vec![edge("A", "B"), edge("m", "B")],
                vec![],
            ),
            vec![],
            "",
        ),
        fx(
            NoEdgeFromSourceClass,
            graph(vec![class("A"), class("B"), method("m", Some("A"))], vec![edge("m", "B")], vec![]),
            graph(
                vec![class("A"), class("B"), method("m", Some("A"))],
                vec![edge("m", "B"), edge("A", "B")],
                vec![],
            ),
            vec![],
            "",
        ),
        fx(InvalidNodeName, graph(vec![cafe, class("B")], vec![edge("A", "B")], vec![]), base(), vec![], ""),
        fx(
            InvalidNodeId,
            graph(vec![a_id, class("B")], vec![edge("A\u{e9}", "B")], vec![]),
            base(),
            vec![],
            "",
        ),
        fx(
            InvalidPackageId,
            graph(vec![class("A"), class("B")], vec![edge("A", "B")], vec![package("pk\u{e9}", &["A", "B"])]),
            graph(vec![class("A"), class("B")], vec![edge("A", "B")], vec![package("pk", &["A", "B"])]),
            vec![],
            "",
        ),
        fx(
            NameNotFoundInCode,
            graph(vec![class("A"), class("Zed")], vec![edge("A", "Zed")], vec![]),
            graph(
                vec![class("A"), class("B"), entity("Zed")],
                vec![edge("A", "B"), edge("B", "Zed")],
                vec![],
            ),
            vec![],
            "the negative uses an entity, which is exempt from the source check",
        ),
        fx(
            SingleNodePackage,
            graph(vec![class("A"), class("B")], vec![edge("A", "B")], vec![package("p", &["A"])]),
            graph(vec![class("A"), class("B")], vec![edge("A", "B")], vec![package("p", &["A", "B"])]),
            vec![],
            "",
        ),
        fx(
            MemberOutsideClassPackage,
            graph(
                vec![class("A"), class("B"), method("m1", Some("A")), method("m2", Some("A"))],
                vec![edge("A", "B"), edge("m1", "B"), edge("m2", "B")],
                vec![package("p", &["A", "B"]), package("q", &["m1", "m2"])],
            ),
            graph(
                vec![class("A"), class("B"), method("m1", Some("A")), method("m2", Some("A"))],
                vec![edge("A", "B"), edge("m1", "B"), edge("m2", "B")],
                vec![package("p", &["A", "B", "m1", "m2"])],
            ),
            vec![],
            "",
        ),
        fx(
            NonUniquePackageIds,
            graph(
                vec![class("A"), class("B"), class("C"), class("D")],
                vec![edge("A", "B"), edge("B", "C"), edge("C", "D")],
                vec![package("p", &["A", "B"]), package("p", &["C", "D"])],
            ),
            graph(
                vec![class("A"), class("B"), class("C"), class("D")],
                vec![edge("A", "B"), edge("B", "C"), edge("C", "D")],
                vec![package("p", &["A", "B"]), package("q", &["C", "D"])],
            ),
            vec![],
            "",
        ),
        fx(
            NonUniqueNodeIds,
            graph(vec![class("A"), dup, class("B")], vec![edge("A", "B")], vec![]),
            base(),
            vec![],
            "",
        ),
        fx(
            EdgeToInvalidId,
            graph(vec![class("A"), class("B")], vec![edge("A", "B"), edge("A", "Z")], vec![]),
            base(),
            vec![],
            "",
        ),
        fx(
            EmptySourceClassId,
            graph(vec![class("A"), class("B"), method("m", None)], vec![edge("A", "B"), edge("m", "B")], vec![]),
            graph(
                vec![class("A"), class("B"), method("m", Some("A"))],
                vec![edge("A", "B"), edge("m", "B")],
                vec![],
            ),
            vec![],
            "",
        ),
        fx(
            PackageWithoutNodes,
            graph(
                vec![class("A"), class("B"), class("C")],
                vec![edge("A", "B"), edge("B", "C")],
                vec![package("p", &["A", "B"]), package("q", &[])],
            ),
            graph(
                vec![class("A"), class("B"), class("C")],
                vec![edge("A", "B"), edge("B", "C")],
                vec![package("p", &["A", "B"])],
            ),
            vec![],
            "",
        ),
        fx(
            ChildInMultiplePackages,
            graph(
                vec![class("A"), class("B"), class("C")],
                vec![edge("A", "B"), edge("B", "C")],
                vec![package("p", &["A", "B"]), package("q", &["B", "C"])],
            ),
            graph(
                vec![class("A"), class("B"), class("C")],
                vec![edge("A", "B"), edge("B", "C")],
                vec![package("p", &["A", "B"]), package("q", &["p", "C"])],
            ),
            vec![],
            "",
        ),
        fx(
            MorePackagesThanNodes,
            graph(
                vec![class("A"), class("B")],
                vec![edge("A", "B")],
                vec![package("p", &["A", "B"]), package("q", &["p"]), package("r", &["q"])],
            ),
            graph(
                vec![class("A"), class("B")],
                vec![edge("A", "B")],
                vec![package("p", &["A", "B"]), package("q", &["p"])],
            ),
            vec![],
            "",
        ),
        fx(
            PackageRecursion,
            graph(vec![class("A"), class("B")], vec![edge("A", "B")], vec![package("p", &["A", "B", "p"])]),
            graph(
                vec![class("A"), class("B")],
                vec![edge("A", "B")],
                vec![package("p", &["A", "B"]), package("q", &["p"])],
            ),
            vec![NonDrawable],
            "a package cycle cannot be laid out",
        ),
        fx(
            MultipleConnectedComponents,
            graph(
                vec![class("A"), class("B"), class("C"), class("D")],
                vec![edge("A", "B"), edge("C", "D")],
                vec![],
            ),
            graph(
                vec![class("A"), class("B"), class("C"), class("D")],
                vec![edge("A", "B"), edge("B", "C"), edge("C", "D")],
                vec![],
            ),
            vec![],
            "",
        ),
        fx(BrokenJson, "{\"nodes\": [{\"type\": \"class\",".to_string(), base(), vec![], ""),
        fx(
            NonDrawable,
            graph(vec![class("A"), class("B")], vec![edge("A", "B")], vec![package("p", &["A", "Z"])]),
            graph(vec![class("A"), class("B")], vec![edge("A", "B")], vec![package("p", &["A", "B"])]),
            vec![],
            "",
        ),
    ]
}

/// Lints raw graph text; unparseable text becomes a broken-JSON report.
pub fn lint_text(text: &str, source: Option<&str>) -> DefectReport {
    match parse_graph(text.as_bytes()) {
        Ok(g) => lint(&g, source),
        Err(e @ ParseError::BrokenJson(_)) => DefectReport::broken_json("graph", &e.to_string()),
        Err(e) => panic!("fixture does not match the schema: {e}"),
    }
}

pub fn kinds(r: &DefectReport) -> BTreeSet<DefectKind> {
    r.kinds()
}

/// The two-node listener diagram used throughout the docs, with its source.
pub const LISTENER_SOURCE: &str = r#"export class CRServiceWorker extends Worker {
  constructor(browserContext: CRBrowserContext, session: CRSession, url: string) {
    super(browserContext, url);
    this._session = session;
    session.on('Runtime.consoleAPICalled', event => this.onConsoleAPI(event));
  }
  onConsoleAPI(event: Protocol.Runtime.consoleAPICalledPayload) {
    this._browserContext.emit('console', event);
  }
}
"#;

pub fn listener_graph() -> String {
    json!({
        "nodes": [
            {"type": "class", "name": "CRServiceWorker", "node_id": "CRServiceWorker",
             "description": "Service worker wrapper that wires protocol events", "visibility": "public"},
            {"type": "function", "name": "onConsoleAPI", "node_id": "onConsoleAPI",
             "description": "Forwards console API calls to the browser context", "visibility": "public",
             "return_type": "void", "params": "event: Protocol.Runtime.consoleAPICalledPayload"}
        ],
        "edges": [
            {"node_id_from": "CRServiceWorker", "node_id_to": "onConsoleAPI",
             "description": "Runtime.consoleAPICalled"}
        ],
        "packages": [
            {"package_id": "crServiceWorker", "children": ["CRServiceWorker", "onConsoleAPI"],
             "description": "Chromium service worker listeners"}
        ]
    })
    .to_string()
}

/// Writes `root/<repo>/src/f<i>.<ext>` files of roughly `chars` characters
/// whose token sets are pairwise disjoint, so no two are near-duplicates.
pub fn write_corpus(root: &std::path::Path, layout: &[(&str, &str, usize)], chars: usize) -> usize {
    let mut written = 0;
    for (repo, ext, count) in layout {
        let dir = root.join(repo).join("src");
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..*count {
            let mut body = String::new();
            let mut k = 0;
            while body.len() < chars {
                body.push_str(&format!("v_{repo}_{ext}_{i}_{k} = {k}\n"));
                k += 1;
            }
            std::fs::write(dir.join(format!("f{i:02}.{ext}")), body).unwrap();
            written += 1;
        }
    }
    written
}

fn labels(pairs: &[(&str, &str)]) -> Value {
    Value::Object(pairs.iter().map(|(n, l)| (n.to_string(), json!(l))).collect())
}

/// Consensus files for two queries and two models, plus raw files from two
/// annotators for the first query.
pub fn write_annotations(dir: &std::path::Path) {
    std::fs::create_dir_all(dir).unwrap();
    let files = [
        ("q1_a.json", json!({"query_id": "q1", "model_id": "model-a", "labels": labels(&[("n1", "Su"), ("n2", "Su"), ("n3", "Co"), ("n4", "Ha")])})),
        ("q1_b.json", json!({"query_id": "q1", "model_id": "model-b", "labels": labels(&[("n1", "Su"), ("n2", "Ve")])})),
        ("q2_a.json", json!({"query_id": "q2", "model_id": "model-a", "labels": labels(&[("x", "Co")])})),
        ("q2_b.json", json!({"query_id": "q2", "model_id": "model-b", "labels": labels(&[("x", "Su"), ("y", "Co"), ("z", "Co")])})),
        ("raw/ann1_q1_a.json", json!({"query_id": "q1", "model_id": "model-a", "annotator": "ann1", "labels": labels(&[("n1", "Su"), ("n2", "Su"), ("n3", "Co"), ("n4", "Ha")])})),
        ("raw/ann2_q1_a.json", json!({"query_id": "q1", "model_id": "model-a", "annotator": "ann2", "labels": labels(&[("n1", "Su"), ("n2", "Co"), ("n3", "Co"), ("n4", "Ve")])})),
    ];
    for (name, v) in files {
        let path = dir.join(name);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    }
}
