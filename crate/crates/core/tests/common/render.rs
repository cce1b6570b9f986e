//! Render fixture loading and the markup census used to check conservation.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use qdiagram::graph::{parse_graph, Graph, NodeKind};
use qdiagram::render::MarkupFormat;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/render")
}

pub fn fixtures() -> Vec<(String, Graph)> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(fixture_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let stem = p.file_stem().unwrap().to_string_lossy().into_owned();
            (stem, parse_graph(&std::fs::read(&p).unwrap()).unwrap())
        })
        .collect()
}

pub struct Expected {
    pub standalone: usize,
    pub signature_lines: usize,
    pub edges: usize,
}

pub fn expected(g: &Graph) -> Expected {
    let classes: HashSet<&str> = g
        .nodes
        .iter()
        .filter(|n| n.kind == NodeKind::Class)
        .map(|n| n.node_id.as_str())
        .collect();
    let owned = |n: &qdiagram::graph::Node| {
        n.kind.is_member() && n.source_class_id.as_deref().is_some_and(|c| classes.contains(c))
    };
    let members = g.nodes.iter().filter(|n| owned(n)).count();
    let self_signatures = g
        .nodes
        .iter()
        .filter(|n| !owned(n) && !matches!(n.kind, NodeKind::Class | NodeKind::Entity))
        .filter(|n| n.params.is_some() || n.return_type.is_some())
        .count();
    Expected {
        standalone: g.nodes.len() - members,
        signature_lines: members + self_signatures,
        edges: g.edges.len(),
    }
}

/// Counts (element declarations, lines inside element bodies, edge lines).
pub fn census(text: &str, format: MarkupFormat) -> (usize, usize, usize) {
    let mut decls = 0;
    let mut body_lines = 0;
    let mut edges = 0;
    let mut in_element = false;
    for raw in text.lines() {
        let line = raw.trim();
        if in_element {
            if line == "}" {
                in_element = false;
            } else if !line.starts_with("<<") {
                body_lines += 1;
            }
            continue;
        }
        let is_decl = match format {
            MarkupFormat::PlantUml => line.starts_with("class ") || line.starts_with("entity "),
            MarkupFormat::Mermaid => line.starts_with("class "),
        };
        if is_decl {
            decls += 1;
            in_element = line.ends_with('{');
        } else if line.contains(" --> ") {
            edges += 1;
        }
    }
    (decls, body_lines, edges)
}
