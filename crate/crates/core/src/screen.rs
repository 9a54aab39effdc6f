//! Declarative regular-expression pre-screening.
//!
//! A rule file is a JSON document:
//!
//! ```json
//! {
//!   "case_insensitive": true,
//!   "include": [{ "name": "trial", "pattern": ["endometriosis", "randomi[sz]ed"] }],
//!   "exclude": [{ "name": "bayesian", "pattern": "bayesian", "fields": ["title"] }]
//! }
//! ```
//!
//! `pattern` is either one expression or a list that must all match. Each
//! expression matches when it matches any of the rule's `fields` (default:
//! title and abstract). Exclude rules are evaluated first; a record with no
//! matching rule is left for human review rather than dropped.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{LedgerError, PrismaLedger, PrismaStage, Record};

const DEFAULT_RULES: &str = include_str!("../rules/default_rules.json");

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("cannot read rule file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("rule file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("rule '{rule}': invalid pattern at byte {offset}: {message}")]
    InvalidPattern {
        rule: String,
        offset: usize,
        message: String,
    },
    #[error("rule name '{0}' is used more than once")]
    DuplicateName(String),
    #[error("rule '{0}' has no patterns")]
    EmptyRule(String),
    #[error("rule '{0}' selects no fields")]
    NoFields(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Title,
    Abstract,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PatternSpec {
    One(String),
    AllOf(Vec<String>),
}

fn default_fields() -> Vec<Field> {
    vec![Field::Title, Field::Abstract]
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    name: String,
    pattern: PatternSpec,
    #[serde(default = "default_fields")]
    fields: Vec<Field>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRuleSet {
    #[serde(default)]
    include: Vec<RawRule>,
    #[serde(default)]
    exclude: Vec<RawRule>,
    #[serde(default = "default_true")]
    case_insensitive: bool,
}

#[derive(Debug, Clone)]
pub struct Rule {
    pub name: String,
    pub fields: Vec<Field>,
    patterns: Vec<Regex>,
}

impl Rule {
    pub fn patterns(&self) -> impl Iterator<Item = &str> {
        self.patterns.iter().map(Regex::as_str)
    }

    fn matches(&self, record: &Record) -> bool {
        let texts: Vec<&str> = self
            .fields
            .iter()
            .filter_map(|f| match f {
                Field::Title => Some(record.title.as_str()),
                Field::Abstract => record.abstract_text.as_deref(),
            })
            .collect();
        self.patterns
            .iter()
            .all(|re| texts.iter().any(|t| re.is_match(t)))
    }
}

/// Compiled include and exclude rules.
#[derive(Debug, Clone)]
pub struct RuleSet {
    pub include_rules: Vec<Rule>,
    pub exclude_rules: Vec<Rule>,
    pub case_insensitive: bool,
}

fn compile_pattern(rule: &str, pattern: &str, case_insensitive: bool) -> Result<Regex, RuleError> {
    if let Err(e) = regex_syntax::ParserBuilder::new()
        .case_insensitive(case_insensitive)
        .build()
        .parse(pattern)
    {
        let (offset, message) = match &e {
            regex_syntax::Error::Parse(p) => (p.span().start.offset, p.kind().to_string()),
            regex_syntax::Error::Translate(t) => (t.span().start.offset, t.kind().to_string()),
            other => (0, other.to_string()),
        };
        return Err(RuleError::InvalidPattern {
            rule: rule.to_string(),
            offset,
            message,
        });
    }
    RegexBuilder::new(pattern)
        .case_insensitive(case_insensitive)
        .build()
        .map_err(|e| RuleError::InvalidPattern {
            rule: rule.to_string(),
            offset: 0,
            message: e.to_string(),
        })
}

impl RuleSet {
    pub fn from_json(text: &str) -> Result<Self, RuleError> {
        let raw: RawRuleSet = serde_json::from_str(text)?;
        let mut names = HashSet::new();
        let ci = raw.case_insensitive;
        let mut compile = |rules: Vec<RawRule>| -> Result<Vec<Rule>, RuleError> {
            rules
                .into_iter()
                .map(|r| {
                    if !names.insert(r.name.clone()) {
                        return Err(RuleError::DuplicateName(r.name));
                    }
                    let sources = match r.pattern {
                        PatternSpec::One(p) => vec![p],
                        PatternSpec::AllOf(ps) => ps,
                    };
                    if sources.is_empty() {
                        return Err(RuleError::EmptyRule(r.name));
                    }
                    if r.fields.is_empty() {
                        return Err(RuleError::NoFields(r.name));
                    }
                    let patterns = sources
                        .iter()
                        .map(|p| compile_pattern(&r.name, p, ci))
                        .collect::<Result<_, _>>()?;
                    Ok(Rule {
                        name: r.name,
                        fields: r.fields,
                        patterns,
                    })
                })
                .collect()
        };
        let exclude_rules = compile(raw.exclude)?;
        let include_rules = compile(raw.include)?;
        Ok(RuleSet {
            include_rules,
            exclude_rules,
            case_insensitive: ci,
        })
    }

    /// Rules targeting hormonal-therapy trials and reviews in endometriosis,
    /// excluding network meta-analyses, Bayesian studies and adenomyosis.
    pub fn default_rules() -> Self {
        Self::from_json(DEFAULT_RULES).expect("shipped rule file compiles")
    }

    pub fn default_rules_json() -> &'static str {
        DEFAULT_RULES
    }
}

pub fn compile_ruleset(path: &Path) -> Result<RuleSet, RuleError> {
    let text = std::fs::read_to_string(path).map_err(|source| RuleError::Io {
        path: path.display().to_string(),
        source,
    })?;
    RuleSet::from_json(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScreenStatus {
    Shortlisted,
    Excluded,
    NeedsReview,
}

impl fmt::Display for ScreenStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScreenStatus::Shortlisted => "shortlisted",
            ScreenStatus::Excluded => "excluded",
            ScreenStatus::NeedsReview => "needs_review",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenDecision {
    pub record_id: String,
    pub status: ScreenStatus,
    pub matched_rules: Vec<String>,
}

pub fn screen_record(record: &Record, rules: &RuleSet) -> ScreenDecision {
    let hits = |rs: &[Rule]| -> Vec<String> {
        rs.iter()
            .filter(|r| r.matches(record))
            .map(|r| r.name.clone())
            .collect()
    };
    let excluded = hits(&rules.exclude_rules);
    let (status, matched_rules) = if !excluded.is_empty() {
        (ScreenStatus::Excluded, excluded)
    } else {
        let included = hits(&rules.include_rules);
        if included.is_empty() {
            (ScreenStatus::NeedsReview, included)
        } else {
            (ScreenStatus::Shortlisted, included)
        }
    };
    ScreenDecision {
        record_id: record.id.clone(),
        status,
        matched_rules,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenCounts {
    pub shortlisted: usize,
    pub excluded: usize,
    pub needs_review: usize,
}

impl ScreenCounts {
    pub fn tally(decisions: &[ScreenDecision]) -> Self {
        let mut c = ScreenCounts::default();
        for d in decisions {
            match d.status {
                ScreenStatus::Shortlisted => c.shortlisted += 1,
                ScreenStatus::Excluded => c.excluded += 1,
                ScreenStatus::NeedsReview => c.needs_review += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.shortlisted + self.excluded + self.needs_review
    }
}

/// Screen every record and append one stage to the ledger. Decisions are
/// returned in input order.
pub fn screen_corpus(
    records: &[Record],
    rules: &RuleSet,
    ledger: &PrismaLedger,
) -> Result<(Vec<ScreenDecision>, PrismaLedger), LedgerError> {
    let decisions: Vec<ScreenDecision> = records
        .par_iter()
        .map(|r| screen_record(r, rules))
        .collect();
    let counts = ScreenCounts::tally(&decisions);
    let mut ledger = ledger.clone();
    ledger.append(PrismaStage::new(
        "regex pre-screening",
        records.len(),
        counts.excluded,
        format!(
            "excluded by rule: {}; shortlisted: {}; needs review: {}",
            counts.excluded, counts.shortlisted, counts.needs_review
        ),
    ))?;
    Ok((decisions, ledger))
}
