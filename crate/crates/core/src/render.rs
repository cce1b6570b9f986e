//! Graph to PlantUML / Mermaid class-diagram markup.
//!
//! Both emitters share one layout pass: node ids are mapped to sanitized
//! aliases, methods and fields are nested inside their source class, and
//! every other node is placed in the first package that lists it.

use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, Node, NodeKind};
use crate::lint;

/// Descriptions in notes are cut to this many characters.
pub const NOTE_MAX_CHARS: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarkupFormat {
    PlantUml,
    Mermaid,
}

impl MarkupFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            MarkupFormat::PlantUml => "plantuml",
            MarkupFormat::Mermaid => "mermaid",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            MarkupFormat::PlantUml => "puml",
            MarkupFormat::Mermaid => "mmd",
        }
    }
}

impl fmt::Display for MarkupFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MarkupFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "plantuml" | "puml" => Ok(MarkupFormat::PlantUml),
            "mermaid" | "mmd" => Ok(MarkupFormat::Mermaid),
            other => Err(format!("unknown format `{other}` (expected plantuml or mermaid)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderOutput {
    pub format: MarkupFormat,
    pub text: String,
    pub warnings: Vec<String>,
}

/// Why a graph cannot be drawn.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NonDrawable {
    #[error("package `{package}` lists `{child}`, which is neither a node nor a package")]
    UnresolvedChild { package: String, child: String },
    #[error("package `{package}` contains itself")]
    PackageRecursion { package: String },
    #[error("{kind} `{member}` names `{class}` as its class, which is not a class node")]
    MemberWithoutClass { member: String, kind: NodeKind, class: String },
    #[error("edges[{edge}] points at package `{package}`")]
    EdgeTargetsPackage { edge: usize, package: String },
}

impl NonDrawable {
    pub fn code(&self) -> &'static str {
        match self {
            NonDrawable::UnresolvedChild { .. } => "unresolved_child",
            NonDrawable::PackageRecursion { .. } => "package_recursion",
            NonDrawable::MemberWithoutClass { .. } => "member_without_class",
            NonDrawable::EdgeTargetsPackage { .. } => "edge_targets_package",
        }
    }

    pub fn subjects(&self) -> Vec<String> {
        match self {
            NonDrawable::UnresolvedChild { package, child } => vec![package.clone(), child.clone()],
            NonDrawable::PackageRecursion { package } => vec![package.clone()],
            NonDrawable::MemberWithoutClass { member, .. } => vec![member.clone()],
            NonDrawable::EdgeTargetsPackage { edge, package } => vec![format!("edges[{edge}]"), package.clone()],
        }
    }
}

/// Checks, in order: package children resolve, packages do not nest
/// cyclically, members point at class nodes, no edge touches a package.
pub fn preflight(g: &Graph) -> Result<(), NonDrawable> {
    let node_ids: HashSet<&str> = g.nodes.iter().map(|n| n.node_id.as_str()).collect();
    let package_ids: HashSet<&str> = g.packages.iter().map(|p| p.package_id.as_str()).collect();

    for p in &g.packages {
        if let Some(c) = p
            .children
            .iter()
            .find(|c| !node_ids.contains(c.as_str()) && !package_ids.contains(c.as_str()))
        {
            return Err(NonDrawable::UnresolvedChild {
                package: p.package_id.clone(),
                child: c.clone(),
            });
        }
    }
    if let Some(package) = lint::recursive_packages(g).into_iter().next() {
        return Err(NonDrawable::PackageRecursion { package });
    }
    let class_ids: HashSet<&str> = g
        .nodes
        .iter()
        .filter(|n| n.kind == NodeKind::Class)
        .map(|n| n.node_id.as_str())
        .collect();
    for n in g.nodes.iter().filter(|n| n.kind.is_member()) {
        if let Some(cls) = &n.source_class_id {
            if !class_ids.contains(cls.as_str()) {
                return Err(NonDrawable::MemberWithoutClass {
                    member: n.node_id.clone(),
                    kind: n.kind,
                    class: cls.clone(),
                });
            }
        }
    }
    for (i, e) in g.edges.iter().enumerate() {
        for end in [&e.node_id_from, &e.node_id_to] {
            if package_ids.contains(end.as_str()) && !node_ids.contains(end.as_str()) {
                return Err(NonDrawable::EdgeTargetsPackage {
                    edge: i,
                    package: end.clone(),
                });
            }
        }
    }
    Ok(())
}

pub fn render(g: &Graph, format: MarkupFormat) -> Result<RenderOutput, NonDrawable> {
    match format {
        MarkupFormat::PlantUml => to_plantuml(g),
        MarkupFormat::Mermaid => to_mermaid(g),
    }
}

/// Replaces characters outside `[A-Za-z0-9_]` with `_` and prefixes `_`
/// when the result would start with a digit.
pub fn sanitize_identifier(id: &str) -> String {
    let s: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() || s.starts_with(|c: char| c.is_ascii_digit()) {
        format!("_{s}")
    } else {
        s
    }
}

/// Collision-free alias assignment for node ids.
struct Aliases {
    by_node: Vec<String>,
    by_id: HashMap<String, String>,
    used: HashSet<String>,
    warnings: Vec<String>,
}

impl Aliases {
    fn build(g: &Graph) -> Self {
        let mut a = Aliases {
            by_node: Vec::with_capacity(g.nodes.len()),
            by_id: HashMap::new(),
            used: HashSet::new(),
            warnings: Vec::new(),
        };
        for n in &g.nodes {
            let alias = a.fresh(&n.node_id);
            a.by_id.entry(n.node_id.clone()).or_insert_with(|| alias.clone());
            a.by_node.push(alias);
        }
        for e in &g.edges {
            for end in [&e.node_id_from, &e.node_id_to] {
                if !a.by_id.contains_key(end) {
                    let alias = a.fresh(end);
                    a.warnings.push(format!("edge endpoint `{end}` is not a node; drawn as an implicit element"));
                    a.by_id.insert(end.clone(), alias);
                }
            }
        }
        a
    }

    fn fresh(&mut self, id: &str) -> String {
        let base = sanitize_identifier(id);
        let mut alias = base.clone();
        let mut n = 2;
        while self.used.contains(&alias) {
            alias = format!("{base}_{n}");
            n += 1;
        }
        if alias != id {
            self.warnings.push(format!("id `{id}` emitted as `{alias}`"));
        }
        self.used.insert(alias.clone());
        alias
    }

    fn of(&self, id: &str) -> &str {
        self.by_id.get(id).map(String::as_str).unwrap_or("_")
    }
}

/// Placement of nodes and packages shared by both emitters.
struct Layout<'g> {
    graph: &'g Graph,
    aliases: Aliases,
    /// class node index -> member node indices
    members: HashMap<usize, Vec<usize>>,
    /// member node index -> owning class node index
    owner: HashMap<usize, usize>,
    /// package index -> directly contained standalone node indices
    package_nodes: Vec<Vec<usize>>,
    /// package index -> nested package indices
    package_children: Vec<Vec<usize>>,
    top_nodes: Vec<usize>,
    top_packages: Vec<usize>,
    warnings: Vec<String>,
}

impl<'g> Layout<'g> {
    fn new(g: &'g Graph) -> Self {
        let aliases = Aliases::build(g);
        let mut warnings = Vec::new();

        let mut first_class: HashMap<&str, usize> = HashMap::new();
        for (i, n) in g.nodes.iter().enumerate() {
            if n.kind == NodeKind::Class {
                first_class.entry(n.node_id.as_str()).or_insert(i);
            }
        }
        let mut members: HashMap<usize, Vec<usize>> = HashMap::new();
        let mut owner = HashMap::new();
        for (i, n) in g.nodes.iter().enumerate() {
            if !n.kind.is_member() {
                continue;
            }
            if let Some(&c) = n.source_class_id.as_deref().and_then(|c| first_class.get(c)) {
                members.entry(c).or_default().push(i);
                owner.insert(i, c);
            }
        }

        let mut package_parent: Vec<Option<usize>> = vec![None; g.packages.len()];
        for (i, p) in g.packages.iter().enumerate() {
            for (q, parent) in g.packages.iter().enumerate() {
                if q != i && parent.children.contains(&p.package_id) {
                    if package_parent[i].is_none() {
                        package_parent[i] = Some(q);
                    } else {
                        warnings.push(format!("package `{}` has several parents; drawn in the first", p.package_id));
                        break;
                    }
                }
            }
        }
        let mut package_children = vec![Vec::new(); g.packages.len()];
        let mut top_packages = Vec::new();
        for (i, parent) in package_parent.iter().enumerate() {
            match parent {
                Some(q) => package_children[*q].push(i),
                None => top_packages.push(i),
            }
        }

        let mut package_nodes = vec![Vec::new(); g.packages.len()];
        let mut top_nodes = Vec::new();
        for (i, n) in g.nodes.iter().enumerate() {
            if owner.contains_key(&i) {
                continue;
            }
            let homes: Vec<usize> = g
                .packages
                .iter()
                .enumerate()
                .filter(|(_, p)| p.children.contains(&n.node_id))
                .map(|(q, _)| q)
                .collect();
            match homes.first() {
                Some(&q) => {
                    if homes.len() > 1 {
                        warnings.push(format!(
                            "node `{}` is listed in {} packages; drawn in `{}`",
                            n.node_id,
                            homes.len(),
                            g.packages[q].package_id
                        ));
                    }
                    package_nodes[q].push(i);
                }
                None => top_nodes.push(i),
            }
        }

        Layout {
            graph: g,
            aliases,
            members,
            owner,
            package_nodes,
            package_children,
            top_nodes,
            top_packages,
            warnings,
        }
    }

    fn into_warnings(self) -> Vec<String> {
        let mut w = self.aliases.warnings;
        w.extend(self.warnings);
        w
    }
}

/// One-line note text capped at [`NOTE_MAX_CHARS`].
pub fn note_text(description: &str) -> String {
    let flat: String = description
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .replace('"', "'");
    if flat.chars().count() <= NOTE_MAX_CHARS {
        flat
    } else {
        let mut cut: String = flat.chars().take(NOTE_MAX_CHARS - 3).collect();
        cut.push_str("...");
        cut
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn quoted(s: &str) -> String {
    one_line(s).replace('"', "'")
}

/// `name(params): type` for callables, `name: type` otherwise.
fn signature(n: &Node) -> String {
    let mut s = one_line(&n.name);
    if matches!(n.kind, NodeKind::Method | NodeKind::Function) {
        let _ = write!(s, "({})", n.params.as_deref().map(one_line).unwrap_or_default());
    }
    if let Some(rt) = &n.return_type {
        let _ = write!(s, ": {}", one_line(rt));
    }
    s
}

fn is_simple(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub fn to_plantuml(g: &Graph) -> Result<RenderOutput, NonDrawable> {
    preflight(g)?;
    let layout = Layout::new(g);
    let mut out = String::from("@startuml\n");

    for &i in &layout.top_nodes {
        plantuml_element(&layout, i, 0, &mut out);
    }
    for &p in &layout.top_packages {
        plantuml_package(&layout, p, 0, &mut out);
    }

    for e in &g.edges {
        let from = plantuml_endpoint(&layout, &e.node_id_from);
        let to = plantuml_endpoint(&layout, &e.node_id_to);
        match &e.description {
            Some(d) => {
                let _ = writeln!(out, "{from} --> {to} : {}", note_text(d));
            }
            None => {
                let _ = writeln!(out, "{from} --> {to}");
            }
        }
    }

    for (i, n) in g.nodes.iter().enumerate() {
        let target = match layout.owner.get(&i) {
            Some(&c) => plantuml_member_ref(&layout.aliases.by_node[c], n),
            None => layout.aliases.by_node[i].clone(),
        };
        let _ = writeln!(out, "note right of {target} : {}", note_text(&n.description));
    }
    out.push_str("@enduml\n");

    Ok(RenderOutput {
        format: MarkupFormat::PlantUml,
        text: out,
        warnings: layout.into_warnings(),
    })
}

fn plantuml_member_ref(class_alias: &str, member: &Node) -> String {
    if is_simple(&member.name) {
        format!("{class_alias}::{}", member.name)
    } else {
        format!("{class_alias}::\"{}\"", quoted(&member.name))
    }
}

fn plantuml_endpoint(layout: &Layout<'_>, id: &str) -> String {
    let g = layout.graph;
    if let Some(i) = g.nodes.iter().position(|n| n.node_id == id) {
        if let Some(&c) = layout.owner.get(&i) {
            return plantuml_member_ref(&layout.aliases.by_node[c], &g.nodes[i]);
        }
        return layout.aliases.by_node[i].clone();
    }
    layout.aliases.of(id).to_string()
}

fn plantuml_element(layout: &Layout<'_>, i: usize, depth: usize, out: &mut String) {
    let n = &layout.graph.nodes[i];
    let alias = &layout.aliases.by_node[i];
    let pad = "  ".repeat(depth);
    let keyword = if n.kind == NodeKind::Entity { "entity" } else { "class" };
    let head = if n.name == *alias {
        format!("{pad}{keyword} {alias}")
    } else {
        format!("{pad}{keyword} \"{}\" as {alias}", quoted(&n.name))
    };
    let stereotype = match n.kind {
        NodeKind::Class | NodeKind::Entity => String::new(),
        other => format!(" <<{other}>>"),
    };

    let body: Vec<String> = match n.kind {
        NodeKind::Class => layout
            .members
            .get(&i)
            .into_iter()
            .flatten()
            .map(|&m| {
                let member = &layout.graph.nodes[m];
                format!("{} {}", member.visibility.symbol(), signature(member))
            })
            .collect(),
        NodeKind::Entity => Vec::new(),
        _ if n.params.is_some() || n.return_type.is_some() => {
            vec![format!("{} {}", n.visibility.symbol(), signature(n))]
        }
        _ => Vec::new(),
    };

    if body.is_empty() {
        let _ = writeln!(out, "{head}{stereotype}");
    } else {
        let _ = writeln!(out, "{head}{stereotype} {{");
        for line in body {
            let _ = writeln!(out, "{pad}  {line}");
        }
        let _ = writeln!(out, "{pad}}}");
    }
}

fn plantuml_package(layout: &Layout<'_>, p: usize, depth: usize, out: &mut String) {
    let pkg = &layout.graph.packages[p];
    let pad = "  ".repeat(depth);
    let _ = writeln!(out, "{pad}package \"{}\" {{", quoted(&pkg.package_id));
    if let Some(d) = &pkg.description {
        let _ = writeln!(out, "{pad}  note \"{}\" as N_pkg_{p}", note_text(d));
    }
    for &i in &layout.package_nodes[p] {
        plantuml_element(layout, i, depth + 1, out);
    }
    for &q in &layout.package_children[p] {
        plantuml_package(layout, q, depth + 1, out);
    }
    let _ = writeln!(out, "{pad}}}");
}

/// Mermaid treats `<`/`>` as markup and uses `~T~` for generics.
fn mermaid_text(s: &str) -> String {
    one_line(s)
        .replace('"', "'")
        .replace(['<', '>'], "~")
        .replace(['{', '}'], "")
}

pub fn to_mermaid(g: &Graph) -> Result<RenderOutput, NonDrawable> {
    preflight(g)?;
    let layout = Layout::new(g);
    let mut warnings = Vec::new();
    let mut out = String::from("classDiagram\n");

    for &i in &layout.top_nodes {
        mermaid_element(&layout, i, 1, &mut out);
    }

    // Namespaces cannot nest: walk the package tree and flatten paths.
    let mut stack: Vec<(usize, Vec<String>)> = layout
        .top_packages
        .iter()
        .rev()
        .map(|&p| (p, vec![sanitize_identifier(&g.packages[p].package_id)]))
        .collect();
    while let Some((p, path)) = stack.pop() {
        let name = path.join("__");
        if path.len() > 1 {
            warnings.push(format!(
                "nested package `{}` flattened into namespace `{name}`",
                g.packages[p].package_id
            ));
        }
        if !layout.package_nodes[p].is_empty() {
            let _ = writeln!(out, "  namespace {name} {{");
            for &i in &layout.package_nodes[p] {
                mermaid_element(&layout, i, 2, &mut out);
            }
            out.push_str("  }\n");
        }
        for &q in layout.package_children[p].iter().rev() {
            let mut child = path.clone();
            child.push(sanitize_identifier(&g.packages[q].package_id));
            stack.push((q, child));
        }
    }

    for e in &g.edges {
        let (from, from_member) = mermaid_endpoint(&layout, &e.node_id_from);
        let (to, to_member) = mermaid_endpoint(&layout, &e.node_id_to);
        let mut label: Vec<String> = Vec::new();
        if from_member.is_some() || to_member.is_some() {
            let redirected = [from_member, to_member]
                .into_iter()
                .flatten()
                .collect::<Vec<_>>()
                .join(" -> ");
            warnings.push(format!("edge `{}` -> `{}` drawn between owning classes", e.node_id_from, e.node_id_to));
            label.push(redirected);
        }
        if let Some(d) = &e.description {
            label.push(mermaid_text(&note_text(d)));
        }
        if label.is_empty() {
            let _ = writeln!(out, "  {from} --> {to}");
        } else {
            let _ = writeln!(out, "  {from} --> {to} : {}", label.join(": "));
        }
    }

    for (i, n) in g.nodes.iter().enumerate() {
        if layout.owner.contains_key(&i) {
            continue;
        }
        let _ = writeln!(
            out,
            "  note for {} \"{}\"",
            layout.aliases.by_node[i],
            mermaid_text(&note_text(&n.description))
        );
    }

    let mut all = layout.into_warnings();
    all.extend(warnings);
    Ok(RenderOutput {
        format: MarkupFormat::Mermaid,
        text: out,
        warnings: all,
    })
}

/// Alias to draw, plus the member name when the edge was redirected to its class.
fn mermaid_endpoint(layout: &Layout<'_>, id: &str) -> (String, Option<String>) {
    let g = layout.graph;
    if let Some(i) = g.nodes.iter().position(|n| n.node_id == id) {
        if let Some(&c) = layout.owner.get(&i) {
            return (layout.aliases.by_node[c].clone(), Some(mermaid_text(&g.nodes[i].name)));
        }
        return (layout.aliases.by_node[i].clone(), None);
    }
    (layout.aliases.of(id).to_string(), None)
}

fn mermaid_member_line(n: &Node) -> String {
    let name = mermaid_text(&n.name);
    match n.kind {
        NodeKind::Method | NodeKind::Function => {
            let params = n.params.as_deref().map(mermaid_text).unwrap_or_default();
            match &n.return_type {
                Some(rt) => format!("{}{name}({params}) {}", n.visibility.symbol(), mermaid_text(rt)),
                None => format!("{}{name}({params})", n.visibility.symbol()),
            }
        }
        _ => match &n.return_type {
            Some(rt) => format!("{}{name} : {}", n.visibility.symbol(), mermaid_text(rt)),
            None => format!("{}{name}", n.visibility.symbol()),
        },
    }
}

fn mermaid_element(layout: &Layout<'_>, i: usize, depth: usize, out: &mut String) {
    let n = &layout.graph.nodes[i];
    let alias = &layout.aliases.by_node[i];
    let pad = "  ".repeat(depth);
    let head = if n.name == *alias {
        format!("{pad}class {alias}")
    } else {
        format!("{pad}class {alias}[\"{}\"]", mermaid_text(&n.name))
    };

    let mut body: Vec<String> = Vec::new();
    if n.kind != NodeKind::Class {
        body.push(format!("<<{}>>", n.kind));
    }
    match n.kind {
        NodeKind::Class => {
            for &m in layout.members.get(&i).into_iter().flatten() {
                body.push(mermaid_member_line(&layout.graph.nodes[m]));
            }
        }
        NodeKind::Entity => {}
        _ if n.params.is_some() || n.return_type.is_some() => body.push(mermaid_member_line(n)),
        _ => {}
    }

    if body.is_empty() {
        let _ = writeln!(out, "{head}");
    } else {
        let _ = writeln!(out, "{head} {{");
        for line in body {
            let _ = writeln!(out, "{pad}  {line}");
        }
        let _ = writeln!(out, "{pad}}}");
    }
}
