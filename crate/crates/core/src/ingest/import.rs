//! Local record import from CSV or JSONL exports.
//!
//! Recognised fields (all optional except `title`): `native_id`, `title`,
//! `abstract`, `doi`, `source`, `record_type`, `created_date` (ISO date).
//! Blank values are treated as absent.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{IngestError, PrismaStage, Record, RecordDraft, RecordType, Source};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImportFormat {
    Jsonl,
    Csv,
}

impl ImportFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(ImportFormat::Csv),
            "jsonl" | "ndjson" => Some(ImportFormat::Jsonl),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRow {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ImportOutcome {
    pub records: Vec<Record>,
    pub skipped: Vec<SkippedRow>,
}

impl ImportOutcome {
    /// Identification-stage ledger entry for this import.
    pub fn ledger_stage(&self, stage_name: &str) -> PrismaStage {
        PrismaStage::new(stage_name, self.records.len(), 0, "records identified")
    }
}

fn draft_from_fields(
    get: impl Fn(&str) -> Option<String>,
) -> Result<RecordDraft, String> {
    let title = get("title").ok_or_else(|| "missing title".to_string())?;
    let source = match get("source") {
        Some(s) => s.parse::<Source>().map_err(|e| e.to_string())?,
        None => Source::Manual,
    };
    let record_type = match get("record_type") {
        Some(s) => s.parse::<RecordType>().map_err(|e| e.to_string())?,
        None => RecordType::Other,
    };
    let created_date = match get("created_date") {
        Some(s) => Some(
            NaiveDate::parse_from_str(&s, "%Y-%m-%d")
                .map_err(|e| format!("bad created_date '{s}': {e}"))?,
        ),
        None => None,
    };
    Ok(RecordDraft {
        source: Some(source),
        native_id: get("native_id"),
        title,
        abstract_text: get("abstract"),
        doi: get("doi"),
        record_type,
        created_date,
    })
}

fn non_blank(s: &str) -> Option<String> {
    let t = s.trim();
    (!t.is_empty()).then(|| t.to_string())
}

/// Import records from `path`. Rows without a usable title are skipped and
/// reported with their line number; ids are assigned deterministically.
pub fn import_records(path: &Path, format: ImportFormat) -> Result<ImportOutcome, IngestError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: display.clone(),
        source,
    })?;
    let mut rows: Vec<(usize, Result<RecordDraft, String>)> = Vec::new();
    match format {
        ImportFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .flexible(true)
                .from_reader(file);
            let headers = match reader.headers() {
                Ok(h) => h.clone(),
                Err(e) if e.is_io_error() => {
                    return Err(IngestError::Parse {
                        path: display,
                        message: e.to_string(),
                    })
                }
                Err(_) => csv::StringRecord::new(),
            };
            let columns: HashMap<String, usize> = headers
                .iter()
                .enumerate()
                .map(|(i, h)| (h.trim().to_ascii_lowercase(), i))
                .collect();
            for row in reader.records() {
                let row = row.map_err(|e| IngestError::Parse {
                    path: display.clone(),
                    message: e.to_string(),
                })?;
                let line = row.position().map_or(0, |p| p.line() as usize);
                let get = |name: &str| {
                    columns
                        .get(name)
                        .and_then(|&i| row.get(i))
                        .and_then(non_blank)
                };
                rows.push((line, draft_from_fields(get)));
            }
        }
        ImportFormat::Jsonl => {
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|source| IngestError::Io {
                    path: display.clone(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed = serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(&line)
                    .map_err(|e| format!("invalid JSON object: {e}"))
                    .and_then(|obj| {
                        draft_from_fields(|name| match obj.get(name) {
                            Some(serde_json::Value::String(s)) => non_blank(s),
                            Some(serde_json::Value::Number(x)) => Some(x.to_string()),
                            _ => None,
                        })
                    });
                rows.push((n + 1, parsed));
            }
        }
    }

    let mut outcome = ImportOutcome::default();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (line, draft) in rows {
        match draft.and_then(|d| d.into_record().map_err(|e| e.to_string())) {
            Ok(mut rec) => {
                let count = seen.entry(rec.id.clone()).or_insert(0);
                *count += 1;
                if *count > 1 {
                    rec.id = format!("{}~{}", rec.id, count);
                }
                outcome.records.push(rec);
            }
            Err(reason) => outcome.skipped.push(SkippedRow { line, reason }),
        }
    }
    Ok(outcome)
}
