//! Search backends behind a single [`SearchEngine`] interface.
//!
//! The local backends rank a JSON-Lines corpus (text) or keyword-tagged image
//! records with BM25. [`http::HttpSearch`] forwards queries to a web search
//! endpoint.

pub mod bm25;
pub mod http;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{SearchCall, SearchTool};
use bm25::Bm25;

/// Maximum snippet length in characters.
pub const SNIPPET_CHARS: usize = 512;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index from an empty record set")]
    Empty,
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("image `{id}`: path {path} does not exist")]
    MissingImage { id: String, path: PathBuf },
    #[error("{path}:{line}: {source}")]
    Json {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Failure of a search backend; surfaced to the policy as an information notice.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("authentication rejected (HTTP {0})")]
    Auth(u16),
    #[error("quota exceeded (HTTP 429)")]
    Quota,
    #[error("HTTP {0}")]
    Status(u16),
    #[error("malformed response: {0}")]
    Decode(String),
    #[error("{0}")]
    Unsupported(String),
    #[error("missing configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultKind {
    Text,
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchEntry {
    pub id: String,
    pub title: String,
    /// Snippet for text results, image path or URL for image results.
    pub content: String,
    pub score: f64,
}

/// Ranked results, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResultSet {
    pub kind: ResultKind,
    pub entries: Vec<SearchEntry>,
}

impl SearchResultSet {
    pub fn empty(kind: ResultKind) -> Self {
        SearchResultSet {
            kind,
            entries: Vec::new(),
        }
    }
}

pub trait SearchEngine: Send + Sync {
    fn search(&self, call: &SearchCall, k: usize) -> Result<SearchResultSet, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub title: String,
    pub image_path: PathBuf,
    #[serde(default)]
    pub keywords: Vec<String>,
}

fn check_ids<'a>(ids: impl Iterator<Item = &'a str>) -> Result<(), IndexError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(IndexError::DuplicateId(id.to_string()));
        }
    }
    if seen.is_empty() {
        return Err(IndexError::Empty);
    }
    Ok(())
}

/// Top-`k` documents by descending score, ties by ascending id.
fn rank(scores: Vec<(usize, f64)>, id: impl Fn(usize) -> String, k: usize) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64, String)> = scores.into_iter().map(|(d, s)| (d, s, id(d))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.2.cmp(&b.2)));
    scored.truncate(k);
    scored.into_iter().map(|(d, s, _)| (d, s)).collect()
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, IndexError> {
    let text = std::fs::read_to_string(path).map_err(|source| IndexError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| IndexError::Json {
                path: path.display().to_string(),
                line: i + 1,
                source,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TextIndex {
    records: Vec<CorpusRecord>,
    bm25: Bm25,
}

impl TextIndex {
    /// Indexes title and body of every record.
    pub fn build(records: Vec<CorpusRecord>) -> Result<Self, IndexError> {
        check_ids(records.iter().map(|r| r.id.as_str()))?;
        let docs: Vec<String> = records.iter().map(|r| format!("{} {}", r.title, r.body)).collect();
        let bm25 = Bm25::build(docs.iter().map(String::as_str));
        Ok(TextIndex { records, bm25 })
    }

    pub fn from_jsonl(path: &Path) -> Result<Self, IndexError> {
        Self::build(read_jsonl(path)?)
    }

    pub fn records(&self) -> &[CorpusRecord] {
        &self.records
    }

    pub fn search(&self, query: &str, k: usize) -> SearchResultSet {
        let ranked = rank(self.bm25.score(query), |d| self.records[d].id.clone(), k);
        SearchResultSet {
            kind: ResultKind::Text,
            entries: ranked
                .into_iter()
                .map(|(d, score)| {
                    let r = &self.records[d];
                    SearchEntry {
                        id: r.id.clone(),
                        title: r.title.clone(),
                        content: r.body.chars().take(SNIPPET_CHARS).collect(),
                        score,
                    }
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImageIndex {
    records: Vec<ImageRecord>,
    bm25: Bm25,
}

impl ImageIndex {
    /// Indexes title and keywords. Every `image_path` must exist.
    pub fn build(records: Vec<ImageRecord>) -> Result<Self, IndexError> {
        Self::build_at(records, Path::new(""))
    }

    /// Like [`ImageIndex::build`], with relative paths checked against
    /// `base`. Results report paths as recorded.
    pub fn build_at(records: Vec<ImageRecord>, base: &Path) -> Result<Self, IndexError> {
        check_ids(records.iter().map(|r| r.id.as_str()))?;
        if let Some(r) = records.iter().find(|r| !base.join(&r.image_path).exists()) {
            return Err(IndexError::MissingImage {
                id: r.id.clone(),
                path: base.join(&r.image_path),
            });
        }
        let docs: Vec<String> = records
            .iter()
            .map(|r| format!("{} {}", r.title, r.keywords.join(" ")))
            .collect();
        let bm25 = Bm25::build(docs.iter().map(String::as_str));
        Ok(ImageIndex { records, bm25 })
    }

    /// Relative `image_path`s are checked against the file's directory.
    pub fn from_jsonl(path: &Path) -> Result<Self, IndexError> {
        let base = path.parent().unwrap_or(Path::new(""));
        Self::build_at(read_jsonl(path)?, base)
    }

    pub fn search(&self, query: &str, k: usize) -> SearchResultSet {
        let ranked = rank(self.bm25.score(query), |d| self.records[d].id.clone(), k);
        SearchResultSet {
            kind: ResultKind::Image,
            entries: ranked
                .into_iter()
                .map(|(d, score)| {
                    let r = &self.records[d];
                    SearchEntry {
                        id: r.id.clone(),
                        title: r.title.clone(),
                        content: r.image_path.display().to_string(),
                        score,
                    }
                })
                .collect(),
        }
    }
}

/// Local knowledge base: BM25 text corpus plus an optional image index.
#[derive(Debug, Clone)]
pub struct LocalSearchEngine {
    pub text: TextIndex,
    pub images: Option<ImageIndex>,
}

impl LocalSearchEngine {
    pub fn new(text: TextIndex, images: Option<ImageIndex>) -> Self {
        LocalSearchEngine { text, images }
    }
}

impl SearchEngine for LocalSearchEngine {
    fn search(&self, call: &SearchCall, k: usize) -> Result<SearchResultSet, BackendError> {
        match call.tool {
            SearchTool::TextSearch => Ok(self.text.search(&call.query, k)),
            SearchTool::ImageSearch => Ok(self
                .images
                .as_ref()
                .map(|idx| idx.search(&call.query, k))
                .unwrap_or_else(|| SearchResultSet::empty(ResultKind::Image))),
        }
    }
}
