//! Corpus curation: length/ASCII filtering, unigram-Jaccard dedup and a
//! seeded, language-stratified train/val/test split.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_MIN_CHARS: usize = 3000;
pub const DEFAULT_MAX_CHARS: usize = 15000;
pub const DEFAULT_JACCARD: f64 = 0.8;
pub const DEFAULT_SIZES: [usize; 3] = [88, 12, 24];
pub const DEFAULT_LICENSES: [&str; 3] = ["MIT", "MIT-0", "Apache-2.0"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("repository metadata: {0}")]
    Metadata(String),
    #[error("bad input manifest {0}: {1}")]
    Manifest(PathBuf, String),
    #[error("requested {requested} files but only {available} are available")]
    InsufficientRecords { requested: usize, available: usize },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Maps a file extension to one of the corpus languages.
pub fn language_for_path(path: &Path) -> Option<&'static str> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    Some(match ext.as_str() {
        "c" | "h" => "c",
        "cc" | "cpp" | "cxx" | "hpp" | "hh" | "hxx" => "cpp",
        "java" => "java",
        "py" => "python",
        "js" | "mjs" | "cjs" | "jsx" => "javascript",
        "ts" | "tsx" => "typescript",
        "rs" => "rust",
        "php" => "php",
        "cs" => "csharp",
        "scala" => "scala",
        "kt" | "kts" => "kotlin",
        "go" => "go",
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub repo: String,
    pub path: String,
    pub language: String,
    pub char_count: usize,
    pub digest: String,
    #[serde(skip)]
    pub content: String,
}

impl FileRecord {
    pub fn new(repo: impl Into<String>, path: impl Into<String>, language: impl Into<String>, content: String) -> Self {
        FileRecord {
            repo: repo.into(),
            path: path.into(),
            language: language.into(),
            char_count: content.chars().count(),
            digest: sha256_hex(content.as_bytes()),
            content,
        }
    }

    fn order_key(&self) -> (&str, &str) {
        (&self.repo, &self.path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_text(path: &Path) -> Result<String, CorpusError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(match String::from_utf8(bytes) {
        Ok(s) => s,
        // replacement characters make the file fail the ASCII filter
        Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
    })
}

/// Reads `root/<repo>/<path...>`; every first-level directory is a repository.
/// Files with an unrecognized extension are skipped.
pub fn ingest_dir(root: &Path) -> Result<Vec<FileRecord>, CorpusError> {
    let mut out = Vec::new();
    let mut repos: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_dir()).unwrap_or(false))
        .map(|e| e.path())
        .collect();
    repos.sort();
    for repo_dir in repos {
        let repo = repo_dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        for entry in walkdir::WalkDir::new(&repo_dir).sort_by_file_name() {
            let entry = entry.map_err(|e| CorpusError::Io {
                path: repo_dir.clone(),
                source: e.into(),
            })?;
            if !entry.file_type().is_file() {
                continue;
            }
            let Some(lang) = language_for_path(entry.path()) else {
                continue;
            };
            let rel = entry
                .path()
                .strip_prefix(&repo_dir)
                .unwrap_or(entry.path())
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            out.push(FileRecord::new(repo.clone(), rel, lang, read_text(entry.path())?));
        }
    }
    out.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
    Ok(out)
}

/// Loads records listed in a JSON manifest (either a [`CorpusManifest`] or a
/// bare array of records). Content is read from `<manifest dir>/<repo>/<path>`.
pub fn ingest_manifest(path: &Path) -> Result<Vec<FileRecord>, CorpusError> {
    #[derive(Deserialize)]
    struct Listed {
        repo: String,
        path: String,
        #[serde(default)]
        language: Option<String>,
    }
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Input {
        Manifest { records: Vec<Listed> },
        List(Vec<Listed>),
    }
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let listed = match serde_json::from_str::<Input>(&text) {
        Ok(Input::Manifest { records }) | Ok(Input::List(records)) => records,
        Err(e) => return Err(CorpusError::Manifest(path.to_path_buf(), e.to_string())),
    };
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::with_capacity(listed.len());
    for l in listed {
        let file = base.join(&l.repo).join(&l.path);
        let lang = match l.language {
            Some(lang) => lang,
            None => language_for_path(&file)
                .ok_or_else(|| CorpusError::Manifest(path.to_path_buf(), format!("unknown language for {}", l.path)))?
                .to_string(),
        };
        out.push(FileRecord::new(l.repo, l.path, lang, read_text(&file)?));
    }
    out.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoMeta {
    pub repo: String,
    pub stars: u64,
    pub license: String,
}

/// Reads a CSV with `repo`, `stars` and `license` columns.
pub fn load_repo_metadata(path: &Path) -> Result<Vec<RepoMeta>, CorpusError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CorpusError::Metadata(e.to_string()))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e: csv::Error| CorpusError::Metadata(e.to_string())))
        .collect()
}

/// Top `top_n` repositories by stars among the allowed licenses; ties break by name.
pub fn select_repos(meta: &[RepoMeta], top_n: usize, licenses: &[String]) -> BTreeSet<String> {
    let mut allowed: Vec<&RepoMeta> = meta
        .iter()
        .filter(|m| licenses.iter().any(|l| l.eq_ignore_ascii_case(m.license.trim())))
        .collect();
    allowed.sort_by(|a, b| b.stars.cmp(&a.stars).then_with(|| a.repo.cmp(&b.repo)));
    allowed.into_iter().take(top_n).map(|m| m.repo.clone()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub min_chars: usize,
    pub max_chars: usize,
    pub ascii_only: bool,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            min_chars: DEFAULT_MIN_CHARS,
            max_chars: DEFAULT_MAX_CHARS,
            ascii_only: true,
        }
    }
}

/// Keeps records with `min <= char_count <= max` (and pure ASCII content if asked).
pub fn filter_files(records: Vec<FileRecord>, params: &FilterParams) -> Result<Vec<FileRecord>, CorpusError> {
    if params.min_chars > params.max_chars {
        return Err(CorpusError::InvalidParams(format!(
            "min_chars {} exceeds max_chars {}",
            params.min_chars, params.max_chars
        )));
    }
    Ok(records
        .into_iter()
        .filter(|r| {
            (params.min_chars..=params.max_chars).contains(&r.char_count) && (!params.ascii_only || r.content.is_ascii())
        })
        .collect())
}

fn unigrams(text: &str) -> HashSet<&str> {
    text.split_whitespace().collect()
}

fn jaccard_sets(a: &HashSet<&str>, b: &HashSet<&str>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let inter = small.iter().filter(|t| large.contains(*t)).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Jaccard similarity of whitespace-token sets. Two empty texts score 1.
pub fn jaccard_unigram(a: &str, b: &str) -> f64 {
    jaccard_sets(&unigrams(a), &unigrams(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedPair {
    pub dropped: String,
    pub kept: String,
    pub similarity: f64,
}

#[derive(Debug, Clone)]
pub struct DedupOutcome {
    pub kept: Vec<FileRecord>,
    pub dropped: Vec<DroppedPair>,
}

fn record_label(r: &FileRecord) -> String {
    format!("{}/{}", r.repo, r.path)
}

/// Greedy near-duplicate removal in (repo, path) order: a record is dropped
/// when its similarity to some earlier survivor reaches `threshold`.
pub fn dedup(mut records: Vec<FileRecord>, threshold: f64) -> Result<DedupOutcome, CorpusError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(CorpusError::InvalidParams(format!("jaccard threshold {threshold} not in (0, 1]")));
    }
    records.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
    let tokens: Vec<HashSet<&str>> = records.par_iter().map(|r| unigrams(&r.content)).collect();
    let mut survivors: Vec<usize> = Vec::new();
    let mut dropped = Vec::new();
    let mut keep = vec![false; records.len()];
    for i in 0..records.len() {
        let hit = survivors
            .par_iter()
            .map(|&s| (s, jaccard_sets(&tokens[i], &tokens[s])))
            .find_first(|&(_, sim)| sim >= threshold);
        match hit {
            Some((s, sim)) => dropped.push(DroppedPair {
                dropped: record_label(&records[i]),
                kept: record_label(&records[s]),
                similarity: sim,
            }),
            None => {
                survivors.push(i);
                keep[i] = true;
            }
        }
    }
    drop(tokens);
    let kept = records.into_iter().zip(keep).filter_map(|(r, k)| k.then_some(r)).collect();
    Ok(DedupOutcome { kept, dropped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSpec {
    Sizes([usize; 3]),
    Ratios([f64; 3]),
}

impl SplitSpec {
    /// Resolves to absolute sizes for `n` records.
    pub fn sizes(&self, n: usize) -> Result<[usize; 3], CorpusError> {
        let sizes = match *self {
            SplitSpec::Sizes(s) => s,
            SplitSpec::Ratios(r) => {
                let sum: f64 = r.iter().sum();
                if r.iter().any(|x| !x.is_finite() || *x < 0.0) || sum <= 0.0 || sum > 1.0 + 1e-9 {
                    return Err(CorpusError::InvalidParams(format!("bad split ratios {r:?}")));
                }
                let quotas = r.map(|x| x * n as f64);
                let total = (sum * n as f64).round() as usize;
                largest_remainder(&quotas, total)
                    .try_into()
                    .expect("three quotas")
            }
        };
        let requested: usize = sizes.iter().sum();
        if requested > n {
            return Err(CorpusError::InsufficientRecords {
                requested,
                available: n,
            });
        }
        Ok(sizes)
    }
}

/// Floors every quota and hands the leftover units to the largest fractional
/// parts (earlier index wins ties).
fn largest_remainder(quotas: &[f64], total: usize) -> Vec<usize> {
    let mut out: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(out.iter().sum());
    for i in order.into_iter().cycle().take(quotas.len() * (left + 1)) {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

/// Per-language cell counts. Columns are train, val, test, then an
/// "unassigned" column absorbing records beyond the requested total.
fn allocate(lang_counts: &[usize], sizes: [usize; 3], warnings: &mut Vec<String>, langs: &[String]) -> Vec<[usize; 4]> {
    let n: usize = lang_counts.iter().sum();
    let cols = [sizes[0], sizes[1], sizes[2], n - sizes.iter().sum::<usize>()];
    let quota = |l: usize, j: usize| -> f64 {
        if n == 0 {
            0.0
        } else {
            lang_counts[l] as f64 * cols[j] as f64 / n as f64
        }
    };
    let minimum = |l: usize, j: usize, strict: bool| -> usize {
        usize::from(strict && j < 3 && cols[j] > 0 && lang_counts[l] >= 3)
    };

    let solve = |strict: bool| -> (Vec<[usize; 4]>, bool) {
        let mut x: Vec<[usize; 4]> = Vec::with_capacity(lang_counts.len());
        for (l, &nl) in lang_counts.iter().enumerate() {
            let mut row = [0usize; 4];
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (quota(l, j).floor() as usize).max(minimum(l, j, strict));
            }
            // minimums may overfill a small row
            while row.iter().sum::<usize>() > nl {
                let j = (0..4)
                    .filter(|&j| row[j] > minimum(l, j, strict))
                    .max_by(|&a, &b| {
                        (row[a] as f64 - quota(l, a))
                            .total_cmp(&(row[b] as f64 - quota(l, b)))
                            .then(b.cmp(&a))
                    });
                match j {
                    Some(j) => row[j] -= 1,
                    None => return (x, false),
                }
            }
            x.push(row);
        }
        let col_sum = |x: &Vec<[usize; 4]>, j: usize| x.iter().map(|r| r[j]).sum::<usize>();
        // fill rows into columns with remaining room, largest remainder first
        loop {
            let mut best: Option<(usize, usize, f64)> = None;
            for l in 0..x.len() {
                if x[l].iter().sum::<usize>() >= lang_counts[l] {
                    continue;
                }
                for j in 0..4 {
                    if col_sum(&x, j) >= cols[j] {
                        continue;
                    }
                    let rem = quota(l, j) - x[l][j] as f64;
                    if best.is_none_or(|(_, _, r)| rem > r) {
                        best = Some((l, j, rem));
                    }
                }
            }
            match best {
                Some((l, j, _)) => x[l][j] += 1,
                None => break,
            }
        }
        // move surplus out of overfull columns
        while let Some(over) = (0..4).find(|&j| col_sum(&x, j) > cols[j]) {
            let Some(under) = (0..4).find(|&j| col_sum(&x, j) < cols[j]) else {
                break;
            };
            let donor = (0..x.len())
                .filter(|&l| x[l][over] > minimum(l, over, strict))
                .max_by(|&a, &b| {
                    (x[a][over] as f64 - quota(a, over))
                        .total_cmp(&(x[b][over] as f64 - quota(b, over)))
                        .then(b.cmp(&a))
                });
            match donor {
                Some(l) => {
                    x[l][over] -= 1;
                    x[l][under] += 1;
                }
                None => return (x, false),
            }
        }
        let ok = (0..4).all(|j| col_sum(&x, j) == cols[j]);
        (x, ok)
    };

    let (x, ok) = solve(true);
    if ok {
        return x;
    }
    let msg = "InfeasibleStratification: cannot give every language with at least 3 files a file in each split; minimums relaxed".to_string();
    log::warn!("{msg}");
    warnings.push(msg);
    let (x, _) = solve(false);
    for (l, row) in x.iter().enumerate() {
        for (j, split) in Split::ALL.iter().enumerate() {
            if lang_counts[l] >= 3 && cols[j] > 0 && row[j] == 0 {
                warnings.push(format!("language {} has no files in {split}", langs[l]));
            }
        }
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub repo: String,
    pub path: String,
    pub language: String,
    pub char_count: usize,
    pub digest: String,
    pub split: Split,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurationParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jaccard_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_repos: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub licenses: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub requested: [usize; 3],
    pub params: CurationParams,
    pub counts: BTreeMap<Split, usize>,
    pub languages: BTreeMap<String, BTreeMap<Split, usize>>,
    pub unassigned: usize,
    pub records: Vec<ManifestRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped_duplicates: Vec<DroppedPair>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl CorpusManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// Splits `records` into train/val/test, allocating each language in
/// proportion to the requested sizes. Records beyond the requested total are
/// left out of the manifest.
pub fn stratified_split(records: &[FileRecord], spec: SplitSpec, seed: u64) -> Result<CorpusManifest, CorpusError> {
    let sizes = spec.sizes(records.len())?;
    let mut by_lang: BTreeMap<&str, Vec<&FileRecord>> = BTreeMap::new();
    for r in records {
        by_lang.entry(&r.language).or_default().push(r);
    }
    let langs: Vec<String> = by_lang.keys().map(|s| s.to_string()).collect();
    let counts: Vec<usize> = by_lang.values().map(Vec::len).collect();
    let mut warnings = Vec::new();
    let table = allocate(&counts, sizes, &mut warnings, &langs);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut languages = BTreeMap::new();
    for ((lang, mut files), row) in by_lang.into_iter().zip(table) {
        files.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        files.shuffle(&mut rng);
        let mut it = files.into_iter();
        let mut per = BTreeMap::new();
        for (j, split) in Split::ALL.iter().enumerate() {
            per.insert(*split, row[j]);
            for r in it.by_ref().take(row[j]) {
                out.push(ManifestRecord {
                    repo: r.repo.clone(),
                    path: r.path.clone(),
                    language: r.language.clone(),
                    char_count: r.char_count,
                    digest: r.digest.clone(),
                    split: *split,
                });
            }
        }
        languages.insert(lang.to_string(), per);
    }
    out.sort_by(|a, b| (a.split, &a.repo, &a.path).cmp(&(b.split, &b.repo, &b.path)));
    let counts = Split::ALL
        .iter()
        .map(|s| (*s, out.iter().filter(|r| r.split == *s).count()))
        .collect();
    Ok(CorpusManifest {
        seed,
        requested: sizes,
        params: CurationParams::default(),
        counts,
        languages,
        unassigned: records.len() - out.len(),
        records: out,
        dropped_duplicates: Vec::new(),
        warnings,
    })
}

#[derive(Debug, Clone)]
pub struct CurateConfig {
    pub input: PathBuf,
    pub filter: FilterParams,
    pub jaccard_threshold: f64,
    pub split: SplitSpec,
    pub seed: u64,
    pub repo_metadata: Option<PathBuf>,
    pub top_repos: usize,
    pub licenses: Vec<String>,
}

impl Default for CurateConfig {
    fn default() -> Self {
        CurateConfig {
            input: PathBuf::new(),
            filter: FilterParams::default(),
            jaccard_threshold: DEFAULT_JACCARD,
            split: SplitSpec::Sizes(DEFAULT_SIZES),
            seed: 0,
            repo_metadata: None,
            top_repos: 150,
            licenses: DEFAULT_LICENSES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Full pipeline: ingest, optional repository selection, filter, dedup, split.
pub fn curate(cfg: &CurateConfig) -> Result<CorpusManifest, CorpusError> {
    let mut records = if cfg.input.is_dir() {
        ingest_dir(&cfg.input)?
    } else {
        ingest_manifest(&cfg.input)?
    };
    let mut params = CurationParams {
        filter: Some(cfg.filter),
        jaccard_threshold: Some(cfg.jaccard_threshold),
        ..Default::default()
    };
    if let Some(meta_path) = &cfg.repo_metadata {
        let selected = select_repos(&load_repo_metadata(meta_path)?, cfg.top_repos, &cfg.licenses);
        records.retain(|r| selected.contains(&r.repo));
        params.top_repos = Some(cfg.top_repos);
        params.licenses = Some(cfg.licenses.clone());
    }
    let ingested = records.len();
    let filtered = filter_files(records, &cfg.filter)?;
    let after_filter = filtered.len();
    let deduped = dedup(filtered, cfg.jaccard_threshold)?;
    log::info!(
        "curate: {ingested} ingested, {after_filter} after filtering, {} after dedup",
        deduped.kept.len()
    );
    let mut manifest = stratified_split(&deduped.kept, cfg.split, cfg.seed)?;
    manifest.params = params;
    manifest.dropped_duplicates = deduped.dropped;
    Ok(manifest)
}
