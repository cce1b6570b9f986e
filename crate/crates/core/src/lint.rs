//! Structural defect detection for diagram graphs.
//!
//! The catalog has 26 kinds in three severities. `broken_json` is produced
//! by the parsing path ([`DefectReport::broken_json`]); everything else
//! comes from [`lint`]. Defects are emitted once per (kind, subject) and
//! sorted by kind then subject, so a report is a pure function of its input.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, NodeKind};
use crate::render;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Minor,
    Severe,
    Unacceptable,
}

impl Severity {
    pub const ALL: [Severity; 3] = [Severity::Minor, Severity::Severe, Severity::Unacceptable];

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Minor => "minor",
            Severity::Severe => "severe",
            Severity::Unacceptable => "unacceptable",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectKind {
    // minor
    SpacesInNodeNames,
    SpacesInPackageIds,
    SingleNode,
    NoEdges,
    EdgeToItself,
    RepeatedEdges,
    MultiEdgeBetweenPair,
    EdgeToSourceClass,
    NoEdgeFromSourceClass,
    InvalidNodeName,
    InvalidNodeId,
    InvalidPackageId,
    NameNotFoundInCode,
    SingleNodePackage,
    MemberOutsideClassPackage,
    // severe
    NonUniquePackageIds,
    NonUniqueNodeIds,
    EdgeToInvalidId,
    EmptySourceClassId,
    PackageWithoutNodes,
    ChildInMultiplePackages,
    MorePackagesThanNodes,
    PackageRecursion,
    MultipleConnectedComponents,
    // unacceptable
    BrokenJson,
    NonDrawable,
}

impl DefectKind {
    pub const ALL: [DefectKind; 26] = [
        DefectKind::SpacesInNodeNames,
        DefectKind::SpacesInPackageIds,
        DefectKind::SingleNode,
        DefectKind::NoEdges,
        DefectKind::EdgeToItself,
        DefectKind::RepeatedEdges,
        DefectKind::MultiEdgeBetweenPair,
        DefectKind::EdgeToSourceClass,
        DefectKind::NoEdgeFromSourceClass,
        DefectKind::InvalidNodeName,
        DefectKind::InvalidNodeId,
        DefectKind::InvalidPackageId,
        DefectKind::NameNotFoundInCode,
        DefectKind::SingleNodePackage,
        DefectKind::MemberOutsideClassPackage,
        DefectKind::NonUniquePackageIds,
        DefectKind::NonUniqueNodeIds,
        DefectKind::EdgeToInvalidId,
        DefectKind::EmptySourceClassId,
        DefectKind::PackageWithoutNodes,
        DefectKind::ChildInMultiplePackages,
        DefectKind::MorePackagesThanNodes,
        DefectKind::PackageRecursion,
        DefectKind::MultipleConnectedComponents,
        DefectKind::BrokenJson,
        DefectKind::NonDrawable,
    ];

    pub fn severity(self) -> Severity {
        use DefectKind::*;
        match self {
            SpacesInNodeNames | SpacesInPackageIds | SingleNode | NoEdges | EdgeToItself
            | RepeatedEdges | MultiEdgeBetweenPair | EdgeToSourceClass | NoEdgeFromSourceClass
            | InvalidNodeName | InvalidNodeId | InvalidPackageId | NameNotFoundInCode
            | SingleNodePackage | MemberOutsideClassPackage => Severity::Minor,
            NonUniquePackageIds | NonUniqueNodeIds | EdgeToInvalidId | EmptySourceClassId
            | PackageWithoutNodes | ChildInMultiplePackages | MorePackagesThanNodes
            | PackageRecursion | MultipleConnectedComponents => Severity::Severe,
            BrokenJson | NonDrawable => Severity::Unacceptable,
        }
    }

    pub fn as_str(self) -> &'static str {
        use DefectKind::*;
        match self {
            SpacesInNodeNames => "spaces_in_node_names",
            SpacesInPackageIds => "spaces_in_package_ids",
            SingleNode => "single_node",
            NoEdges => "no_edges",
            EdgeToItself => "edge_to_itself",
            RepeatedEdges => "repeated_edges",
            MultiEdgeBetweenPair => "multi_edge_between_pair",
            EdgeToSourceClass => "edge_to_source_class",
            NoEdgeFromSourceClass => "no_edge_from_source_class",
            InvalidNodeName => "invalid_node_name",
            InvalidNodeId => "invalid_node_id",
            InvalidPackageId => "invalid_package_id",
            NameNotFoundInCode => "name_not_found_in_code",
            SingleNodePackage => "single_node_package",
            MemberOutsideClassPackage => "member_outside_class_package",
            NonUniquePackageIds => "non_unique_package_ids",
            NonUniqueNodeIds => "non_unique_node_ids",
            EdgeToInvalidId => "edge_to_invalid_id",
            EmptySourceClassId => "empty_source_class_id",
            PackageWithoutNodes => "package_without_nodes",
            ChildInMultiplePackages => "child_in_multiple_packages",
            MorePackagesThanNodes => "more_packages_than_nodes",
            PackageRecursion => "package_recursion",
            MultipleConnectedComponents => "multiple_connected_components",
            BrokenJson => "broken_json",
            NonDrawable => "non_drawable",
        }
    }

    /// Human-readable title, as shown in the defect table.
    pub fn title(self) -> &'static str {
        use DefectKind::*;
        match self {
            SpacesInNodeNames => "Spaces in node names",
            SpacesInPackageIds => "Spaces in package ids",
            SingleNode => "Single node",
            NoEdges => "No edges",
            EdgeToItself => "Edge to itself",
            RepeatedEdges => "Repeated edges",
            MultiEdgeBetweenPair => "More than one edge between two nodes",
            EdgeToSourceClass => "Edge to source class",
            NoEdgeFromSourceClass => "No edge from source class",
            InvalidNodeName => "Invalid node name",
            InvalidNodeId => "Invalid node id",
            InvalidPackageId => "Invalid package id",
            NameNotFoundInCode => "Name of node not found in code",
            SingleNodePackage => "Single-node package",
            MemberOutsideClassPackage => "Class is in a package, but its method/field is not",
            NonUniquePackageIds => "Non-unique package ids",
            NonUniqueNodeIds => "Non-unique node ids",
            EdgeToInvalidId => "Edges from/to non-valid node ids",
            EmptySourceClassId => "Methods/fields have empty source class id",
            PackageWithoutNodes => "Packages without nodes",
            ChildInMultiplePackages => "Child in multiple packages",
            MorePackagesThanNodes => "More packages than nodes",
            PackageRecursion => "Packages recursion",
            MultipleConnectedComponents => "Multiple connected components",
            BrokenJson => "Broken JSON",
            NonDrawable => "Non-drawable diagram",
        }
    }
}

impl fmt::Display for DefectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Defect {
    pub kind: DefectKind,
    pub severity: Severity,
    pub subjects: Vec<String>,
    pub message: String,
}

impl Defect {
    pub fn new(kind: DefectKind, subjects: Vec<String>, message: impl Into<String>) -> Self {
        Defect {
            kind,
            severity: kind.severity(),
            subjects,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeverityCounts {
    pub minor: usize,
    pub severe: usize,
    pub unacceptable: usize,
}

impl SeverityCounts {
    pub fn total(&self) -> usize {
        self.minor + self.severe + self.unacceptable
    }

    /// Number of defects at or above `threshold`.
    pub fn at_least(&self, threshold: Severity) -> usize {
        match threshold {
            Severity::Minor => self.total(),
            Severity::Severe => self.severe + self.unacceptable,
            Severity::Unacceptable => self.unacceptable,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefectReport {
    pub graph_id: String,
    pub node_count: usize,
    pub defects: Vec<Defect>,
    pub counts_by_severity: SeverityCounts,
}

impl DefectReport {
    pub fn new(graph_id: impl Into<String>, node_count: usize, mut defects: Vec<Defect>) -> Self {
        defects.sort_by(|a, b| a.kind.cmp(&b.kind).then_with(|| a.subjects.cmp(&b.subjects)));
        let mut counts = SeverityCounts::default();
        for d in &defects {
            match d.severity {
                Severity::Minor => counts.minor += 1,
                Severity::Severe => counts.severe += 1,
                Severity::Unacceptable => counts.unacceptable += 1,
            }
        }
        DefectReport {
            graph_id: graph_id.into(),
            node_count,
            defects,
            counts_by_severity: counts,
        }
    }

    /// Report for output that never made it to a graph.
    pub fn broken_json(graph_id: impl Into<String>, detail: &str) -> Self {
        DefectReport::new(
            graph_id,
            0,
            vec![Defect::new(DefectKind::BrokenJson, Vec::new(), detail)],
        )
    }

    pub fn worst_severity(&self) -> Option<Severity> {
        self.defects.iter().map(|d| d.severity).max()
    }

    pub fn has(&self, kind: DefectKind) -> bool {
        self.defects.iter().any(|d| d.kind == kind)
    }

    pub fn kinds(&self) -> BTreeSet<DefectKind> {
        self.defects.iter().map(|d| d.kind).collect()
    }

    pub fn count_at_least(&self, threshold: Severity) -> usize {
        self.counts_by_severity.at_least(threshold)
    }
}

/// Printable ASCII, space included; whitespace has its own defects.
fn is_valid_identifier_text(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| (0x20..=0x7e).contains(&b))
}

fn has_whitespace(s: &str) -> bool {
    s.chars().any(char::is_whitespace)
}

fn duplicates<'a>(ids: impl Iterator<Item = &'a str>) -> BTreeMap<&'a str, usize> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for id in ids {
        *counts.entry(id).or_default() += 1;
    }
    counts.retain(|_, c| *c > 1);
    counts
}

/// Undirected components over explicit edges plus implicit member links.
///
/// Only edges whose endpoints are both node ids participate; duplicate
/// node ids collapse into one vertex. Components are returned sorted.
pub fn connected_components(g: &Graph) -> Vec<Vec<String>> {
    let ids: BTreeSet<&str> = g.nodes.iter().map(|n| n.node_id.as_str()).collect();
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut parent: Vec<usize> = (0..ids.len()).collect();

    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut union = |a: &str, b: &str| {
        if let (Some(&ia), Some(&ib)) = (index.get(a), index.get(b)) {
            let (ra, rb) = (find(&mut parent, ia), find(&mut parent, ib));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    };

    for e in &g.edges {
        union(&e.node_id_from, &e.node_id_to);
    }
    for n in &g.nodes {
        if let Some(cls) = &n.source_class_id {
            union(&n.node_id, cls);
        }
    }

    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let ordered: Vec<&str> = ids.iter().copied().collect();
    for (i, id) in ordered.iter().enumerate() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(id.to_string());
    }
    let mut out: Vec<Vec<String>> = groups.into_values().collect();
    out.sort();
    out
}

/// Package nesting relation: package id -> child package ids.
fn package_children<'a>(g: &'a Graph, package_ids: &HashSet<&'a str>) -> HashMap<&'a str, Vec<&'a str>> {
    let mut out: HashMap<&str, Vec<&str>> = HashMap::new();
    for p in &g.packages {
        let entry = out.entry(p.package_id.as_str()).or_default();
        for c in &p.children {
            if package_ids.contains(c.as_str()) {
                entry.push(c.as_str());
            }
        }
    }
    out
}

/// Package ids that can reach themselves through nesting.
pub(crate) fn recursive_packages(g: &Graph) -> BTreeSet<String> {
    let package_ids: HashSet<&str> = g.packages.iter().map(|p| p.package_id.as_str()).collect();
    let nesting = package_children(g, &package_ids);
    let mut out = BTreeSet::new();
    for &start in &package_ids {
        let mut stack: Vec<&str> = nesting.get(start).cloned().unwrap_or_default();
        let mut seen: HashSet<&str> = HashSet::new();
        while let Some(p) = stack.pop() {
            if p == start {
                out.insert(start.to_string());
                break;
            }
            if seen.insert(p) {
                stack.extend(nesting.get(p).into_iter().flatten().copied());
            }
        }
    }
    out
}

/// Runs every graph-level check. `source_code` enables the
/// name-not-found-in-code check; without it that check is skipped.
pub fn lint(g: &Graph, source_code: Option<&str>) -> DefectReport {
    lint_with_id(g, source_code, "")
}

pub fn lint_with_id(g: &Graph, source_code: Option<&str>, graph_id: &str) -> DefectReport {
    let mut out: Vec<Defect> = Vec::new();
    let node_ids: HashSet<&str> = g.nodes.iter().map(|n| n.node_id.as_str()).collect();
    let package_ids: HashSet<&str> = g.packages.iter().map(|p| p.package_id.as_str()).collect();
    let class_ids: HashSet<&str> = g
        .nodes
        .iter()
        .filter(|n| n.kind == NodeKind::Class)
        .map(|n| n.node_id.as_str())
        .collect();

    // Node-level checks.
    for n in &g.nodes {
        let id = || vec![n.node_id.clone()];
        if has_whitespace(&n.name) {
            out.push(Defect::new(DefectKind::SpacesInNodeNames, id(), format!("node name `{}` contains whitespace", n.name)));
        }
        if !is_valid_identifier_text(&n.name) {
            out.push(Defect::new(DefectKind::InvalidNodeName, id(), format!("node name `{}` is empty or not printable ASCII", n.name)));
        }
        if !is_valid_identifier_text(&n.node_id) {
            out.push(Defect::new(DefectKind::InvalidNodeId, id(), format!("node id `{}` is empty or not printable ASCII", n.node_id)));
        }
        if let Some(code) = source_code {
            if n.kind != NodeKind::Entity && !code.contains(n.name.as_str()) {
                out.push(Defect::new(DefectKind::NameNotFoundInCode, id(), format!("`{}` does not occur in the source", n.name)));
            }
        }
        if n.kind.is_member() && n.source_class_id.is_none() {
            out.push(Defect::new(DefectKind::EmptySourceClassId, id(), format!("{} `{}` has no source class id", n.kind, n.node_id)));
        }
    }

    if g.nodes.len() == 1 {
        out.push(Defect::new(DefectKind::SingleNode, vec![g.nodes[0].node_id.clone()], "graph has a single node"));
    }
    if g.edges.is_empty() && !g.nodes.is_empty() {
        out.push(Defect::new(DefectKind::NoEdges, Vec::new(), "graph has no edges"));
    }
    for (id, count) in duplicates(g.nodes.iter().map(|n| n.node_id.as_str())) {
        out.push(Defect::new(DefectKind::NonUniqueNodeIds, vec![id.to_string()], format!("node id `{id}` is used {count} times")));
    }

    // Edge-level checks.
    let mut pair_occurrences: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for (i, e) in g.edges.iter().enumerate() {
        let (from, to) = (e.node_id_from.as_str(), e.node_id_to.as_str());
        pair_occurrences.entry((from, to)).or_default().push(i);
        let subject = || vec![format!("edges[{i}]")];
        if from == to {
            out.push(Defect::new(DefectKind::EdgeToItself, subject(), format!("edge `{from}` -> `{to}` is a self loop")));
        }
        for endpoint in [from, to] {
            if !node_ids.contains(endpoint) && !package_ids.contains(endpoint) {
                out.push(Defect::new(
                    DefectKind::EdgeToInvalidId,
                    vec![format!("edges[{i}]"), endpoint.to_string()],
                    format!("edge endpoint `{endpoint}` is not a node id"),
                ));
            }
        }
        let links_member_to_own_class = |member: &str, class: &str| {
            g.nodes
                .iter()
                .any(|n| n.node_id == member && n.kind.is_member() && n.source_class_id.as_deref() == Some(class))
        };
        if from != to && (links_member_to_own_class(from, to) || links_member_to_own_class(to, from)) {
            out.push(Defect::new(DefectKind::EdgeToSourceClass, subject(), format!("edge `{from}` -> `{to}` duplicates class membership")));
        }
    }
    for ((from, to), idx) in &pair_occurrences {
        if idx.len() > 1 {
            out.push(Defect::new(
                DefectKind::RepeatedEdges,
                vec![format!("{from}->{to}")],
                format!("edge `{from}` -> `{to}` appears {} times", idx.len()),
            ));
        }
    }
    for (from, to) in pair_occurrences.keys() {
        if from < to && pair_occurrences.contains_key(&(*to, *from)) {
            out.push(Defect::new(
                DefectKind::MultiEdgeBetweenPair,
                vec![format!("{from}<->{to}")],
                format!("`{from}` and `{to}` are linked in both directions"),
            ));
        }
    }

    // Membership checks.
    let incident: HashSet<&str> = g
        .edges
        .iter()
        .flat_map(|e| [e.node_id_from.as_str(), e.node_id_to.as_str()])
        .collect();
    let owning_classes: BTreeSet<&str> = g
        .nodes
        .iter()
        .filter(|n| n.kind.is_member())
        .filter_map(|n| n.source_class_id.as_deref())
        .filter(|c| class_ids.contains(c))
        .collect();
    for cls in owning_classes {
        if !incident.contains(cls) {
            out.push(Defect::new(
                DefectKind::NoEdgeFromSourceClass,
                vec![cls.to_string()],
                format!("class `{cls}` owns members but has no edges"),
            ));
        }
    }

    // Package checks.
    for p in &g.packages {
        let id = || vec![p.package_id.clone()];
        if has_whitespace(&p.package_id) {
            out.push(Defect::new(DefectKind::SpacesInPackageIds, id(), format!("package id `{}` contains whitespace", p.package_id)));
        }
        if !is_valid_identifier_text(&p.package_id) {
            out.push(Defect::new(DefectKind::InvalidPackageId, id(), format!("package id `{}` is empty or not printable ASCII", p.package_id)));
        }
        if p.children.len() == 1 && node_ids.contains(p.children[0].as_str()) {
            out.push(Defect::new(DefectKind::SingleNodePackage, id(), format!("package `{}` holds a single node", p.package_id)));
        }
    }
    for (id, count) in duplicates(g.packages.iter().map(|p| p.package_id.as_str())) {
        out.push(Defect::new(DefectKind::NonUniquePackageIds, vec![id.to_string()], format!("package id `{id}` is used {count} times")));
    }

    // Immediate packages of every child id.
    let mut parents: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for p in &g.packages {
        for c in &p.children {
            parents.entry(c.as_str()).or_default().insert(p.package_id.as_str());
        }
    }
    for (child, ps) in &parents {
        if ps.len() > 1 {
            let list: Vec<&str> = ps.iter().copied().collect();
            out.push(Defect::new(
                DefectKind::ChildInMultiplePackages,
                vec![child.to_string()],
                format!("`{child}` is listed in packages {}", list.join(", ")),
            ));
        }
    }

    let nesting = package_children(g, &package_ids);
    let mut reported_empty: BTreeSet<&str> = BTreeSet::new();
    for p in &g.packages {
        if reported_empty.contains(p.package_id.as_str()) {
            continue;
        }
        let mut stack = vec![p.package_id.as_str()];
        let mut seen: HashSet<&str> = HashSet::new();
        let mut found_node = false;
        while let Some(cur) = stack.pop() {
            if !seen.insert(cur) {
                continue;
            }
            for q in g.packages.iter().filter(|q| q.package_id == cur) {
                if q.children.iter().any(|c| node_ids.contains(c.as_str())) {
                    found_node = true;
                }
            }
            stack.extend(nesting.get(cur).into_iter().flatten().copied());
        }
        if !found_node {
            reported_empty.insert(p.package_id.as_str());
            out.push(Defect::new(
                DefectKind::PackageWithoutNodes,
                vec![p.package_id.clone()],
                format!("package `{}` contains no nodes", p.package_id),
            ));
        }
    }

    if g.packages.len() > g.nodes.len() {
        out.push(Defect::new(
            DefectKind::MorePackagesThanNodes,
            Vec::new(),
            format!("{} packages for {} nodes", g.packages.len(), g.nodes.len()),
        ));
    }
    for p in recursive_packages(g) {
        out.push(Defect::new(DefectKind::PackageRecursion, vec![p.clone()], format!("package `{p}` contains itself")));
    }

    for n in g.nodes.iter().filter(|n| n.kind.is_member()) {
        let Some(cls) = n.source_class_id.as_deref() else { continue };
        let Some(class_pkgs) = parents.get(cls) else { continue };
        let Some(member_pkgs) = parents.get(n.node_id.as_str()) else { continue };
        if class_pkgs.is_disjoint(member_pkgs) {
            out.push(Defect::new(
                DefectKind::MemberOutsideClassPackage,
                vec![n.node_id.clone()],
                format!("member `{}` is not in the package of its class `{cls}`", n.node_id),
            ));
        }
    }

    let components = connected_components(g);
    if g.nodes.len() > 1 && components.len() > 1 {
        out.push(Defect::new(
            DefectKind::MultipleConnectedComponents,
            components.iter().map(|c| c[0].clone()).collect(),
            format!("graph splits into {} connected components", components.len()),
        ));
    }

    if let Err(reason) = render::preflight(g) {
        out.push(Defect::new(DefectKind::NonDrawable, reason.subjects(), reason.to_string()));
    }

    DefectReport::new(graph_id, g.nodes.len(), out)
}

/// Per-scheme defect rates for one severity threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    /// Defects per node, pooled over all diagrams.
    pub micro: f64,
    /// Mean over diagrams of defects per node.
    #[serde(rename = "macro")]
    pub macro_avg: f64,
    /// Mean defects per diagram.
    pub mean: f64,
}

/// The six-cell grid: {macro, micro, mean} x {low, med}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectAggregate {
    pub diagrams: usize,
    /// All severities.
    pub low: AggregateCell,
    /// Severe and unacceptable only.
    pub med: AggregateCell,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AggregateError {
    #[error("no reports to aggregate")]
    EmptyCorpus,
    #[error("diagram `{0}` has zero nodes; per-node rates are undefined")]
    ZeroNodeDiagram(String),
}

pub fn aggregate(reports: &[DefectReport], threshold: Severity) -> Result<AggregateCell, AggregateError> {
    if reports.is_empty() {
        return Err(AggregateError::EmptyCorpus);
    }
    if let Some(r) = reports.iter().find(|r| r.node_count == 0) {
        return Err(AggregateError::ZeroNodeDiagram(r.graph_id.clone()));
    }
    let n = reports.len() as f64;
    let defects: usize = reports.iter().map(|r| r.count_at_least(threshold)).sum();
    let nodes: usize = reports.iter().map(|r| r.node_count).sum();
    let ratio_sum: f64 = reports
        .iter()
        .map(|r| r.count_at_least(threshold) as f64 / r.node_count as f64)
        .sum();
    Ok(AggregateCell {
        micro: defects as f64 / nodes as f64,
        macro_avg: ratio_sum / n,
        mean: defects as f64 / n,
    })
}

pub fn aggregate_table(reports: &[DefectReport]) -> Result<DefectAggregate, AggregateError> {
    Ok(DefectAggregate {
        diagrams: reports.len(),
        low: aggregate(reports, Severity::Minor)?,
        med: aggregate(reports, Severity::Severe)?,
    })
}
