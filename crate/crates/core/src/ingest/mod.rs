//! Bibliographic records: normalization, identifiers, grey-literature
//! classification and DOI-based deduplication.

mod import;
mod ledger;
pub mod remote;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use import::{import_records, ImportFormat, ImportOutcome, SkippedRow};
pub use ledger::{LedgerError, PrismaLedger, PrismaStage};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("record has an empty title")]
    EmptyTitle,
    #[error("duplicate record id {0}")]
    DuplicateId(String),
    #[error("unknown {kind} '{value}'")]
    UnknownVariant { kind: &'static str, value: String },
}

/// Where a record was harvested from. Declaration order is the survivor
/// priority used when duplicates collapse (earlier wins).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Pubmed,
    Scopus,
    Crossref,
    GoogleScholar,
    Manual,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Pubmed => "pubmed",
            Source::Scopus => "scopus",
            Source::Crossref => "crossref",
            Source::GoogleScholar => "google_scholar",
            Source::Manual => "manual",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace([' ', '-'], "_").as_str() {
            "pubmed" => Ok(Source::Pubmed),
            "scopus" => Ok(Source::Scopus),
            "crossref" => Ok(Source::Crossref),
            "google_scholar" | "gs" => Ok(Source::GoogleScholar),
            "manual" => Ok(Source::Manual),
            _ => Err(IngestError::UnknownVariant {
                kind: "source",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RecordType {
    JournalArticle,
    PostedContent,
    Proceedings,
    Report,
    #[default]
    Other,
}

impl RecordType {
    /// Map a Crossref `type` value onto the record taxonomy.
    pub fn from_crossref(kind: &str) -> Self {
        match kind {
            "journal-article" => RecordType::JournalArticle,
            "posted-content" => RecordType::PostedContent,
            "proceedings" | "proceedings-article" | "proceedings-series" => {
                RecordType::Proceedings
            }
            "report" | "report-component" | "report-series" => RecordType::Report,
            _ => RecordType::Other,
        }
    }
}

impl FromStr for RecordType {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "journal_article" => Ok(RecordType::JournalArticle),
            "posted_content" => Ok(RecordType::PostedContent),
            "proceedings" | "proceedings_article" => Ok(RecordType::Proceedings),
            "report" => Ok(RecordType::Report),
            "other" | "" => Ok(RecordType::Other),
            _ => Err(IngestError::UnknownVariant {
                kind: "record type",
                value: s.to_string(),
            }),
        }
    }
}

/// One bibliographic item. Serialized field names are the corpus JSONL
/// schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: Option<String>,
    pub doi: Option<String>,
    pub doi_prefix: Option<String>,
    pub source: Source,
    pub record_type: RecordType,
    pub created_date: Option<NaiveDate>,
}

impl Record {
    /// True for posted content, proceedings and reports.
    pub fn is_grey(&self) -> bool {
        classify_grey(self)
    }
}

/// Fields of a record before its identifier is assigned.
#[derive(Debug, Clone, Default)]
pub struct RecordDraft {
    pub source: Option<Source>,
    pub native_id: Option<String>,
    pub title: String,
    pub abstract_text: Option<String>,
    pub doi: Option<String>,
    pub record_type: RecordType,
    pub created_date: Option<NaiveDate>,
}

impl RecordDraft {
    pub fn new(source: Source, title: impl Into<String>) -> Self {
        RecordDraft {
            source: Some(source),
            title: title.into(),
            ..Default::default()
        }
    }

    /// Validate and normalize. The id is a digest of (source, native id)
    /// when a native id exists, otherwise of (source, title, DOI).
    pub fn into_record(self) -> Result<Record, IngestError> {
        let title = collapse_whitespace(&self.title);
        if title.is_empty() {
            return Err(IngestError::EmptyTitle);
        }
        let source = self.source.unwrap_or(Source::Manual);
        let doi = self.doi.as_deref().and_then(normalize_doi);
        let native = self
            .native_id
            .as_deref()
            .map(str::trim)
            .filter(|s| !s.is_empty());
        let id = match native {
            Some(native) => record_id(source, &["native", native]),
            None => record_id(source, &["content", &title, doi.as_deref().unwrap_or("")]),
        };
        Ok(Record {
            id,
            doi_prefix: doi.as_deref().and_then(doi_prefix),
            doi,
            abstract_text: self
                .abstract_text
                .map(|a| collapse_whitespace(&a))
                .filter(|a| !a.is_empty()),
            title,
            source,
            record_type: self.record_type,
            created_date: self.created_date,
        })
    }
}

fn record_id(source: Source, parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(source.as_str().as_bytes());
    for p in parts {
        hasher.update([0x1f]);
        hasher.update(p.as_bytes());
    }
    let digest = hasher.finalize();
    format!("{}:{}", source.as_str(), hex::encode(&digest[..8]))
}

pub(crate) fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercase a DOI and strip resolver prefixes. Returns `None` for strings
/// that do not have a `prefix/suffix` shape.
pub fn normalize_doi(raw: &str) -> Option<String> {
    let mut doi = raw.trim().to_lowercase();
    for prefix in [
        "https://doi.org/",
        "http://doi.org/",
        "https://dx.doi.org/",
        "http://dx.doi.org/",
        "doi.org/",
        "doi:",
    ] {
        if let Some(rest) = doi.strip_prefix(prefix) {
            doi = rest.trim().to_string();
        }
    }
    let (prefix, suffix) = doi.split_once('/')?;
    if prefix.is_empty() || suffix.is_empty() {
        return None;
    }
    Some(doi)
}

/// Registrant part of a normalized DOI (text before the first `/`).
pub fn doi_prefix(doi: &str) -> Option<String> {
    doi.split_once('/').map(|(p, _)| p.to_string())
}

pub fn classify_grey(record: &Record) -> bool {
    matches!(
        record.record_type,
        RecordType::PostedContent | RecordType::Proceedings | RecordType::Report
    )
}

/// Survivor ordering for duplicate groups: earliest `created_date` first
/// (undated records last), then source priority.
pub(crate) fn survivor_cmp(a: &Record, b: &Record) -> Ordering {
    let date = match (a.created_date, b.created_date) {
        (Some(x), Some(y)) => x.cmp(&y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    };
    date.then(a.source.cmp(&b.source))
}

/// A partition of an input list into survivors and removed duplicates.
/// Both sides keep input order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DedupOutcome {
    pub kept: Vec<Record>,
    pub removed: Vec<Record>,
}

/// Collapse groups of records (given as index lists) to one survivor each.
pub(crate) fn collapse_groups(records: &[Record], groups: &[Vec<usize>]) -> DedupOutcome {
    let mut removed_flag = vec![false; records.len()];
    for group in groups.iter().filter(|g| g.len() > 1) {
        let survivor = group
            .iter()
            .copied()
            .min_by(|&i, &j| survivor_cmp(&records[i], &records[j]).then(i.cmp(&j)))
            .expect("group is non-empty");
        for &i in group {
            if i != survivor {
                removed_flag[i] = true;
            }
        }
    }
    let mut out = DedupOutcome::default();
    for (rec, removed) in records.iter().zip(removed_flag) {
        if removed {
            out.removed.push(rec.clone());
        } else {
            out.kept.push(rec.clone());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoiDedupMode {
    /// Identical normalized DOI.
    Full,
    /// Identical registrant prefix. Coarse: distinct papers from one
    /// publisher collapse together, so use it for trend counts only.
    Prefix,
}

pub fn dedup_by_doi(records: &[Record], mode: DoiDedupMode) -> DedupOutcome {
    let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, rec) in records.iter().enumerate() {
        let key = match mode {
            DoiDedupMode::Full => rec.doi.as_deref(),
            DoiDedupMode::Prefix => rec.doi_prefix.as_deref(),
        };
        if let Some(key) = key {
            groups.entry(key).or_default().push(i);
        }
    }
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    groups.sort();
    collapse_groups(records, &groups)
}

/// Read a corpus JSONL file, keeping ids as stored.
pub fn read_corpus(path: &Path) -> Result<Vec<Record>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| IngestError::Parse {
            path: path.display().to_string(),
            message: format!("line {}: {e}", n + 1),
        })?;
        if !seen.insert(rec.id.clone()) {
            return Err(IngestError::DuplicateId(rec.id));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Write records as JSONL, one object per line.
pub fn write_corpus(path: &Path, records: &[Record]) -> Result<(), IngestError> {
    let io_err = |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for rec in records {
        let line = serde_json::to_string(rec).expect("records always serialize");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
