//! Generators shared by the property tests and the acceptance harness.

use proptest::collection::vec;
use proptest::prelude::*;

use qdiagram::corpus::FileRecord;
use qdiagram::graph::{Edge, Graph, Node, NodeKind, Package, Visibility};
use qdiagram::lint::{Defect, DefectKind, DefectReport};
use qdiagram::metrics::ClassCounts;

pub fn text() -> impl Strategy<Value = String> {
    prop_oneof![
        "[A-Za-z_][A-Za-z0-9_]{0,10}",
        "[ -~]{1,20}",
        "\\PC{1,12}",
    ]
    .prop_filter("non-empty", |s| !s.is_empty())
}

pub fn kind() -> impl Strategy<Value = NodeKind> {
    prop::sample::select(NodeKind::ALL.to_vec())
}

pub fn visibility() -> impl Strategy<Value = Visibility> {
    prop::sample::select(Visibility::ALL.to_vec())
}

pub fn node() -> impl Strategy<Value = Node> {
    (
        kind(),
        text(),
        text(),
        text(),
        visibility(),
        prop::option::of(text()),
        prop::option::of(text()),
        prop::option::of(text()),
    )
        .prop_map(|(k, id, name, desc, vis, ret, params, owner)| Node {
            kind: k,
            name,
            node_id: id,
            description: desc,
            visibility: vis,
            return_type: ret,
            params,
            source_class_id: owner,
        })
}

pub fn graph() -> impl Strategy<Value = Graph> {
    (
        vec(node(), 0..6),
        vec((text(), text(), prop::option::of(text())), 0..6),
        vec((text(), vec(text(), 0..4), prop::option::of(text())), 0..3),
    )
        .prop_map(|(nodes, edges, packages)| Graph {
            nodes,
            edges: edges
                .into_iter()
                .map(|(a, b, d)| Edge {
                    node_id_from: a,
                    node_id_to: b,
                    description: d,
                })
                .collect(),
            packages: packages
                .into_iter()
                .map(|(id, children, d)| Package {
                    package_id: id,
                    children,
                    description: d,
                })
                .collect(),
        })
}

#[derive(Debug, Clone)]
pub enum Mutation {
    Flip(usize, u8),
    Delete(usize, usize),
    Insert(usize, Vec<u8>),
    Truncate(usize),
}

pub fn mutation() -> impl Strategy<Value = Mutation> {
    prop_oneof![
        (any::<usize>(), any::<u8>()).prop_map(|(i, b)| Mutation::Flip(i, b)),
        (any::<usize>(), 1usize..8).prop_map(|(i, n)| Mutation::Delete(i, n)),
        (any::<usize>(), vec(prop::sample::select(b"{}[]\",:\\ 0a\xff".to_vec()), 1..4))
            .prop_map(|(i, b)| Mutation::Insert(i, b)),
        any::<usize>().prop_map(Mutation::Truncate),
    ]
}

pub fn apply(bytes: &mut Vec<u8>, m: &Mutation) {
    if bytes.is_empty() {
        return;
    }
    match m {
        Mutation::Flip(i, b) => {
            let i = i % bytes.len();
            bytes[i] = *b;
        }
        Mutation::Delete(i, n) => {
            let i = i % bytes.len();
            let end = (i + n).min(bytes.len());
            bytes.drain(i..end);
        }
        Mutation::Insert(i, b) => {
            let i = i % (bytes.len() + 1);
            bytes.splice(i..i, b.iter().copied());
        }
        Mutation::Truncate(i) => bytes.truncate(i % bytes.len()),
    }
}

pub fn report_set() -> impl Strategy<Value = Vec<DefectReport>> {
    vec(
        (1usize..20, vec(prop::sample::select(DefectKind::ALL.to_vec()), 0..8)),
        1..10,
    )
    .prop_map(|items| {
        items
            .into_iter()
            .enumerate()
            .map(|(i, (nodes, kinds))| {
                let defects = kinds.into_iter().map(|k| Defect::new(k, vec![], "")).collect();
                DefectReport::new(format!("g{i}"), nodes, defects)
            })
            .collect()
    })
}

pub fn counts() -> impl Strategy<Value = ClassCounts> {
    (0u64..15, 0u64..15, 0u64..8, 0u64..8).prop_map(|(a, b, c, d)| ClassCounts::new(a, b, c, d))
}

pub fn corpus() -> impl Strategy<Value = Vec<FileRecord>> {
    let word = prop::sample::select(vec!["fn", "let", "x", "y", "return", "if", "else", "loop", "match", "struct"]);
    vec((0usize..3, vec(word, 0..12)), 1..12).prop_map(|files| {
        files
            .into_iter()
            .enumerate()
            .map(|(i, (repo, words))| {
                FileRecord::new(format!("r{repo}"), format!("f{i:02}.rs"), "rust", words.join(" "))
            })
            .collect()
    })
}
