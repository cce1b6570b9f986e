//! Relevance evaluation from per-node annotations.
//!
//! Every node of a generated diagram is labeled Sufficiency, Completeness,
//! Hallucination or Verbosity. True positives are Su+Co (Su only for the
//! hard variants), false positives Ha+Ve. There is no gold node set, so
//! false negatives are estimated per query group from the best counts any
//! model achieved:
//!
//! ```text
//! FN      = max(|Su|) + max(|Co|) - TP
//! FN_hard = max(|Su|) - TP_hard
//! ```
//!
//! Both are floored at zero. Recall and F1 computed from them are upper
//! bounds.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::DetailLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelevanceLabel {
    #[serde(alias = "sufficiency", alias = "Sufficiency")]
    Su,
    #[serde(alias = "completeness", alias = "Completeness")]
    Co,
    #[serde(alias = "hallucination", alias = "Hallucination")]
    Ha,
    #[serde(alias = "verbosity", alias = "Verbosity")]
    Ve,
}

impl RelevanceLabel {
    pub const ALL: [RelevanceLabel; 4] = [
        RelevanceLabel::Su,
        RelevanceLabel::Co,
        RelevanceLabel::Ha,
        RelevanceLabel::Ve,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RelevanceLabel::Su => "Su",
            RelevanceLabel::Co => "Co",
            RelevanceLabel::Ha => "Ha",
            RelevanceLabel::Ve => "Ve",
        }
    }
}

impl fmt::Display for RelevanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One annotation file: labels for every node of one (query, model) diagram.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedDiagram {
    pub query_id: String,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail_level: Option<DetailLevel>,
    /// Absent or `"consensus"` for adjudicated labels; otherwise the
    /// annotator who produced this raw labeling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator: Option<String>,
    pub labels: BTreeMap<String, RelevanceLabel>,
}

impl AnnotatedDiagram {
    pub fn is_consensus(&self) -> bool {
        matches!(self.annotator.as_deref(), None | Some("consensus"))
    }

    pub fn class_counts(&self) -> ClassCounts {
        ClassCounts::from_labels(self.labels.values().copied())
    }

    /// Key under which FN maxima are shared.
    pub fn group_key(&self) -> (String, Option<DetailLevel>) {
        (self.query_id.clone(), self.detail_level)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub su: u64,
    pub co: u64,
    pub ha: u64,
    pub ve: u64,
}

impl ClassCounts {
    pub fn new(su: u64, co: u64, ha: u64, ve: u64) -> Self {
        ClassCounts { su, co, ha, ve }
    }

    pub fn from_labels(labels: impl IntoIterator<Item = RelevanceLabel>) -> Self {
        let mut c = ClassCounts::default();
        for l in labels {
            match l {
                RelevanceLabel::Su => c.su += 1,
                RelevanceLabel::Co => c.co += 1,
                RelevanceLabel::Ha => c.ha += 1,
                RelevanceLabel::Ve => c.ve += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.su + self.co + self.ha + self.ve
    }
}

impl std::ops::Add for ClassCounts {
    type Output = ClassCounts;

    fn add(self, o: ClassCounts) -> ClassCounts {
        ClassCounts::new(self.su + o.su, self.co + o.co, self.ha + o.ha, self.ve + o.ve)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tp_hard: u64,
    pub fn_hard: u64,
    pub classes: ClassCounts,
}

impl ConfusionCounts {
    /// Counts for one diagram given the group maxima of |Su| and |Co|.
    pub fn with_maxima(classes: ClassCounts, max_su: u64, max_co: u64) -> Self {
        let tp = classes.su + classes.co;
        let tp_hard = classes.su;
        let fn_raw = (max_su + max_co) as i128 - tp as i128;
        let fn_hard_raw = max_su as i128 - tp_hard as i128;
        if fn_raw < 0 || fn_hard_raw < 0 {
            log::warn!("negative false-negative estimate floored at 0 (maxima {max_su}/{max_co}, counts {classes:?})");
        }
        ConfusionCounts {
            tp,
            fp: classes.ha + classes.ve,
            fn_: fn_raw.max(0) as u64,
            tp_hard,
            fn_hard: fn_hard_raw.max(0) as u64,
            classes,
        }
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tp_hard: self.tp_hard + o.tp_hard,
            fn_hard: self.fn_hard + o.fn_hard,
            classes: self.classes + o.classes,
        }
    }
}

/// The six relevance metrics, generic over the cell type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerMetric<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub precision_hard: T,
    pub recall_hard: T,
    pub f1_hard: T,
}

impl<T> PerMetric<T> {
    pub fn map<U>(self, mut f: impl FnMut(T) -> U) -> PerMetric<U> {
        PerMetric {
            precision: f(self.precision),
            recall: f(self.recall),
            f1: f(self.f1),
            precision_hard: f(self.precision_hard),
            recall_hard: f(self.recall_hard),
            f1_hard: f(self.f1_hard),
        }
    }

    pub fn as_array(&self) -> [(&'static str, &T); 6] {
        [
            ("precision", &self.precision),
            ("precision_hard", &self.precision_hard),
            ("recall", &self.recall),
            ("recall_hard", &self.recall_hard),
            ("f1", &self.f1),
            ("f1_hard", &self.f1_hard),
        ]
    }
}

/// `None` marks a metric whose denominator is zero.
pub type MetricSet = PerMetric<Option<f64>>;

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl MetricSet {
    pub fn from_counts(c: &ConfusionCounts) -> MetricSet {
        PerMetric {
            precision: ratio(c.tp, c.tp + c.fp),
            recall: ratio(c.tp, c.tp + c.fn_),
            f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
            precision_hard: ratio(c.tp_hard, c.tp_hard + c.fp),
            recall_hard: ratio(c.tp_hard, c.tp_hard + c.fn_hard),
            f1_hard: ratio(2 * c.tp_hard, 2 * c.tp_hard + c.fp + c.fn_hard),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("query group is empty")]
    EmptyQueryGroup,
    #[error("no counts to aggregate")]
    Empty,
    #[error("every metric is undefined for every unit")]
    AllUndefined,
    #[error("label vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("chance agreement is 1; kappa is undefined")]
    DegenerateMarginals,
    #[error("model `{model}` appears twice in query group `{query}`")]
    DuplicateDiagram { query: String, model: String },
    #[error("annotations disagree on the node set of {0}")]
    NodeUniverseMismatch(String),
    #[error("expected exactly two annotators, found {0:?}")]
    AnnotatorCount(Vec<String>),
    #[error("reading annotations: {0}")]
    Io(String),
    #[error("malformed annotation file {0}")]
    BadAnnotation(String),
}

/// Computes confusion counts for every model in one query group.
pub fn confusion_per_query(group: &[AnnotatedDiagram]) -> Result<BTreeMap<String, ConfusionCounts>, MetricsError> {
    let mut by_model: Vec<(String, ClassCounts)> = Vec::with_capacity(group.len());
    for d in group {
        if by_model.iter().any(|(m, _)| *m == d.model_id) {
            return Err(MetricsError::DuplicateDiagram {
                query: d.query_id.clone(),
                model: d.model_id.clone(),
            });
        }
        by_model.push((d.model_id.clone(), d.class_counts()));
    }
    confusion_from_class_counts(&by_model)
}

/// Same as [`confusion_per_query`] from pre-counted classes.
pub fn confusion_from_class_counts(
    group: &[(String, ClassCounts)],
) -> Result<BTreeMap<String, ConfusionCounts>, MetricsError> {
    if group.is_empty() {
        return Err(MetricsError::EmptyQueryGroup);
    }
    let max_su = group.iter().map(|(_, c)| c.su).max().unwrap_or(0);
    let max_co = group.iter().map(|(_, c)| c.co).max().unwrap_or(0);
    Ok(group
        .iter()
        .map(|(m, c)| (m.clone(), ConfusionCounts::with_maxima(*c, max_su, max_co)))
        .collect())
}

/// Pools counts, then applies the formulas once.
pub fn micro_metrics(counts: &[ConfusionCounts]) -> Result<MetricSet, MetricsError> {
    if counts.is_empty() {
        return Err(MetricsError::Empty);
    }
    let total = counts.iter().copied().fold(ConfusionCounts::default(), |a, b| a + b);
    Ok(MetricSet::from_counts(&total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub values: MetricSet,
    /// Units left out of each mean because the metric was undefined there.
    pub exclusions: PerMetric<usize>,
    pub units: usize,
}

/// Unweighted mean of per-unit metrics; undefined values are excluded.
pub fn macro_metrics(counts: &[ConfusionCounts]) -> Result<MacroMetrics, MetricsError> {
    if counts.is_empty() {
        return Err(MetricsError::Empty);
    }
    let per_unit: Vec<MetricSet> = counts.iter().map(MetricSet::from_counts).collect();
    let pick = |f: fn(&MetricSet) -> Option<f64>| -> (Option<f64>, usize) {
        let defined: Vec<f64> = per_unit.iter().filter_map(f).collect();
        let excluded = per_unit.len() - defined.len();
        let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        (mean, excluded)
    };
    let p = pick(|m| m.precision);
    let r = pick(|m| m.recall);
    let f = pick(|m| m.f1);
    let ph = pick(|m| m.precision_hard);
    let rh = pick(|m| m.recall_hard);
    let fh = pick(|m| m.f1_hard);
    let values = PerMetric {
        precision: p.0,
        recall: r.0,
        f1: f.0,
        precision_hard: ph.0,
        recall_hard: rh.0,
        f1_hard: fh.0,
    };
    if values.as_array().iter().all(|(_, v)| v.is_none()) {
        return Err(MetricsError::AllUndefined);
    }
    Ok(MacroMetrics {
        values,
        exclusions: PerMetric {
            precision: p.1,
            recall: r.1,
            f1: f.1,
            precision_hard: ph.1,
            recall_hard: rh.1,
            f1_hard: fh.1,
        },
        units: counts.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRelevance {
    pub diagrams: usize,
    pub classes: ClassCounts,
    pub totals: ConfusionCounts,
    pub micro: MetricSet,
    #[serde(rename = "macro")]
    pub macro_avg: MacroMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceReport {
    pub query_groups: usize,
    pub models: BTreeMap<String, ModelRelevance>,
}

impl RelevanceReport {
    /// Plain-text grid: one row per metric and aggregation, one column per model.
    pub fn table(&self) -> String {
        let models: Vec<&String> = self.models.keys().collect();
        let mut out = String::new();
        out.push_str(&format!("{:<16}{:<7}", "metric", "avg"));
        for m in &models {
            out.push_str(&format!("{:>12}", truncate(m, 11)));
        }
        out.push('\n');
        out.push_str(&format!("{:<23}", "Su/Co/Ha/Ve"));
        for m in &models {
            let c = self.models[*m].classes;
            out.push_str(&format!("{:>12}", format!("{}/{}/{}/{}", c.su, c.co, c.ha, c.ve)));
        }
        out.push('\n');
        for idx in 0..6 {
            for (agg, label) in [(0, "micro"), (1, "macro")] {
                let name = self.models.values().next().map(|r| r.micro.as_array()[idx].0).unwrap_or("");
                out.push_str(&format!("{:<16}{:<7}", name, label));
                for m in &models {
                    let r = &self.models[*m];
                    let set = if agg == 0 { &r.micro } else { &r.macro_avg.values };
                    let v = *set.as_array()[idx].1;
                    out.push_str(&format!("{:>12}", fmt_metric(v)));
                }
                out.push('\n');
            }
        }
        out
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

pub fn fmt_metric(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "undef".into())
}

/// Groups consensus annotations by (query, detail level), derives counts,
/// and aggregates per model. Each diagram is one macro unit.
pub fn relevance_report(diagrams: &[AnnotatedDiagram]) -> Result<RelevanceReport, MetricsError> {
    let mut groups: BTreeMap<(String, Option<DetailLevel>), Vec<AnnotatedDiagram>> = BTreeMap::new();
    for d in diagrams.iter().filter(|d| d.is_consensus()) {
        groups.entry(d.group_key()).or_default().push(d.clone());
    }
    if groups.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut per_model: BTreeMap<String, Vec<ConfusionCounts>> = BTreeMap::new();
    for group in groups.values() {
        for (model, counts) in confusion_per_query(group)? {
            per_model.entry(model).or_default().push(counts);
        }
    }
    let mut models = BTreeMap::new();
    for (model, counts) in per_model {
        let totals = counts.iter().copied().fold(ConfusionCounts::default(), |a, b| a + b);
        models.insert(
            model,
            ModelRelevance {
                diagrams: counts.len(),
                classes: totals.classes,
                totals,
                micro: micro_metrics(&counts)?,
                macro_avg: macro_metrics(&counts)?,
            },
        );
    }
    Ok(RelevanceReport {
        query_groups: groups.len(),
        models,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub kappa: f64,
    pub observed: f64,
    pub expected: f64,
    pub items: usize,
    pub marginals_a: BTreeMap<RelevanceLabel, f64>,
    pub marginals_b: BTreeMap<RelevanceLabel, f64>,
}

/// Cohen's kappa over the four relevance classes.
pub fn cohens_kappa(a: &[RelevanceLabel], b: &[RelevanceLabel]) -> Result<AgreementReport, MetricsError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len() as f64;
    let mut ca = [0usize; 4];
    let mut cb = [0usize; 4];
    let mut agree = 0usize;
    for (x, y) in a.iter().zip(b) {
        ca[x.index()] += 1;
        cb[y.index()] += 1;
        agree += usize::from(x == y);
    }
    let observed = agree as f64 / n;
    let expected: f64 = (0..4).map(|k| (ca[k] as f64 / n) * (cb[k] as f64 / n)).sum();
    if (1.0 - expected).abs() < 1e-12 {
        return Err(MetricsError::DegenerateMarginals);
    }
    let marginals = |c: [usize; 4]| -> BTreeMap<RelevanceLabel, f64> {
        RelevanceLabel::ALL.iter().map(|l| (*l, c[l.index()] as f64 / n)).collect()
    };
    Ok(AgreementReport {
        kappa: (observed - expected) / (1.0 - expected),
        observed,
        expected,
        items: a.len(),
        marginals_a: marginals(ca),
        marginals_b: marginals(cb),
    })
}

type RawKey = (String, Option<DetailLevel>, String);

/// Aligns two annotators' raw files by (query, level, model, node) and
/// computes kappa over every labeled node.
pub fn agreement_from_annotations(raw: &[AnnotatedDiagram]) -> Result<AgreementReport, MetricsError> {
    let mut by_annotator: BTreeMap<&str, BTreeMap<RawKey, &AnnotatedDiagram>> = BTreeMap::new();
    for d in raw.iter().filter(|d| !d.is_consensus()) {
        let who = d.annotator.as_deref().unwrap_or_default();
        by_annotator
            .entry(who)
            .or_default()
            .insert((d.query_id.clone(), d.detail_level, d.model_id.clone()), d);
    }
    if by_annotator.len() != 2 {
        return Err(MetricsError::AnnotatorCount(by_annotator.keys().map(|s| s.to_string()).collect()));
    }
    let mut it = by_annotator.values();
    let (first, second) = (it.next().expect("two"), it.next().expect("two"));
    if first.keys().ne(second.keys()) {
        return Err(MetricsError::NodeUniverseMismatch("the diagram set".into()));
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (key, da) in first {
        let db = second[key];
        if da.labels.keys().ne(db.labels.keys()) {
            return Err(MetricsError::NodeUniverseMismatch(format!("{}/{}", key.0, key.2)));
        }
        a.extend(da.labels.values().copied());
        b.extend(db.labels.values().copied());
    }
    cohens_kappa(&a, &b)
}

/// Loads every `*.json` annotation file under `dir`, sorted by path.
pub fn load_annotations(dir: &Path) -> Result<Vec<AnnotatedDiagram>, MetricsError> {
    let mut paths: Vec<_> = walkdir::WalkDir::new(dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && e.path().extension().is_some_and(|x| x == "json"))
        .map(|e| e.into_path())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(MetricsError::Io(format!("no annotation files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| MetricsError::Io(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| MetricsError::BadAnnotation(format!("{}: {e}", p.display())))
        })
        .collect()
}
