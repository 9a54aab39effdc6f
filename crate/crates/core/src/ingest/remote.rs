//! Remote harvesting from Crossref (cursor-paginated `works` endpoint) and
//! PubMed E-utilities (`esearch` + `efetch`).
//!
//! HTTP goes through the [`Transport`] trait so tests can substitute a
//! scripted transport. A [`Harvester`] serializes its own requests and
//! spaces them by at least the configured delay.

use std::collections::HashSet;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use super::{Record, RecordDraft, RecordType, Source};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("network failure: {0}")]
pub struct TransportError(pub String);

pub trait Transport: Send + Sync {
    fn get(&self, url: &str) -> Result<HttpResponse, TransportError>;
}

/// Blocking HTTP transport.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(user_agent: &str, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .user_agent(user_agent)
            .build();
        HttpTransport {
            agent: config.into(),
        }
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
        let mut resp = self
            .agent
            .get(url)
            .call()
            .map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(64 * 1024 * 1024)
            .read_to_string()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemoteSource {
    Crossref,
    Pubmed,
}

impl RemoteSource {
    pub fn source(self) -> Source {
        match self {
            RemoteSource::Crossref => Source::Crossref,
            RemoteSource::Pubmed => Source::Pubmed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceConfig {
    pub base_url: String,
    /// Polite-pool contact (Crossref `mailto`, E-utilities `email`).
    pub contact: String,
    pub delay_ms: u64,
    pub page_size: usize,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_cap_ms: u64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            base_url: String::new(),
            contact: String::new(),
            delay_ms: 100,
            page_size: 100,
            max_retries: 3,
            backoff_base_ms: 500,
            backoff_cap_ms: 8_000,
        }
    }
}

impl SourceConfig {
    pub fn for_source(source: RemoteSource, contact: &str) -> Self {
        let base_url = match source {
            RemoteSource::Crossref => "https://api.crossref.org",
            RemoteSource::Pubmed => "https://eutils.ncbi.nlm.nih.gov/entrez/eutils",
        };
        SourceConfig {
            base_url: base_url.to_string(),
            contact: contact.to_string(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FetchError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("network failure after {attempts} attempts: {message}")]
    Network { attempts: u32, message: String },
    #[error("HTTP {status} from {url}")]
    Http { status: u16, url: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("page token '{0}' was already visited")]
    PagingCycle(String),
}

/// A harvested record with the identifier the source assigned to it
/// (DOI for Crossref, PMID for PubMed).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Harvested {
    pub native_id: String,
    pub record: Record,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Page {
    pub batch: Vec<Harvested>,
    pub next_token: Option<String>,
    /// Items the source returned without a usable title.
    pub skipped: usize,
}

pub struct Harvester<T: Transport> {
    source: RemoteSource,
    config: SourceConfig,
    transport: T,
    last_request: Mutex<Option<Instant>>,
}

impl<T: Transport> Harvester<T> {
    pub fn new(source: RemoteSource, config: SourceConfig, transport: T) -> Self {
        Harvester {
            source,
            config,
            transport,
            last_request: Mutex::new(None),
        }
    }

    pub fn config(&self) -> &SourceConfig {
        &self.config
    }

    fn pace(&self) {
        let mut last = self.last_request.lock().expect("rate limiter poisoned");
        let delay = Duration::from_millis(self.config.delay_ms);
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < delay {
                thread::sleep(delay - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn get(&self, url: &str) -> Result<String, FetchError> {
        let mut last_failure = String::new();
        let attempts = self.config.max_retries + 1;
        for attempt in 0..attempts {
            self.pace();
            match self.transport.get(url) {
                Ok(resp) if (200..300).contains(&resp.status) => return Ok(resp.body),
                Ok(resp) if (400..500).contains(&resp.status) => {
                    return Err(FetchError::Http {
                        status: resp.status,
                        url: url.to_string(),
                    })
                }
                Ok(resp) => last_failure = format!("HTTP {}", resp.status),
                Err(e) => last_failure = e.0,
            }
            if attempt + 1 < attempts {
                let backoff = self
                    .config
                    .backoff_base_ms
                    .saturating_mul(1u64 << attempt.min(20))
                    .min(self.config.backoff_cap_ms);
                thread::sleep(Duration::from_millis(backoff));
            }
        }
        Err(FetchError::Network {
            attempts,
            message: last_failure,
        })
    }

    /// Fetch one page of results. `page_token` is `None` for the first page.
    pub fn fetch_remote(&self, query: &str, page_token: Option<&str>) -> Result<Page, FetchError> {
        let query = query.trim();
        if query.is_empty() {
            return Err(FetchError::EmptyQuery);
        }
        match self.source {
            RemoteSource::Crossref => self.fetch_crossref(query, page_token),
            RemoteSource::Pubmed => self.fetch_pubmed(query, page_token),
        }
    }

    /// Follow `next_token` until exhausted or `max_pages` pages were read.
    /// Returns the records and the tokens that were requested.
    pub fn fetch_all(
        &self,
        query: &str,
        max_pages: Option<usize>,
    ) -> Result<(Vec<Harvested>, Vec<Option<String>>), FetchError> {
        let mut seen = HashSet::new();
        let mut token: Option<String> = None;
        let mut tokens = Vec::new();
        let mut out = Vec::new();
        loop {
            if max_pages.is_some_and(|m| tokens.len() >= m) {
                break;
            }
            tokens.push(token.clone());
            let page = self.fetch_remote(query, token.as_deref())?;
            out.extend(page.batch);
            match page.next_token {
                Some(next) => {
                    if !seen.insert(next.clone()) {
                        return Err(FetchError::PagingCycle(next));
                    }
                    token = Some(next);
                }
                None => break,
            }
        }
        Ok((out, tokens))
    }

    fn url(&self, path: &str, params: &[(&str, &str)]) -> Result<String, FetchError> {
        let base = self.config.base_url.trim_end_matches('/');
        Url::parse_with_params(&format!("{base}/{path}"), params)
            .map(String::from)
            .map_err(|e| FetchError::InvalidQuery(format!("bad base URL: {e}")))
    }

    fn fetch_crossref(&self, query: &str, cursor: Option<&str>) -> Result<Page, FetchError> {
        let word = crossref_exact_word(query)?;
        let rows = self.config.page_size.to_string();
        let mut params = vec![
            ("query", word.as_str()),
            ("rows", rows.as_str()),
            ("cursor", cursor.unwrap_or("*")),
        ];
        if !self.config.contact.is_empty() {
            params.push(("mailto", self.config.contact.as_str()));
        }
        let url = self.url("works", &params)?;
        let body = self.get(&url)?;
        parse_crossref_page(&body, self.config.page_size)
    }

    fn fetch_pubmed(&self, query: &str, retstart: Option<&str>) -> Result<Page, FetchError> {
        let start: usize = match retstart {
            Some(t) => t
                .parse()
                .map_err(|_| FetchError::InvalidQuery(format!("bad page token '{t}'")))?,
            None => 0,
        };
        let start_s = start.to_string();
        let retmax = self.config.page_size.to_string();
        let mut params = vec![
            ("db", "pubmed"),
            ("term", query),
            ("retstart", start_s.as_str()),
            ("retmax", retmax.as_str()),
            ("retmode", "json"),
            ("tool", "casma"),
        ];
        if !self.config.contact.is_empty() {
            params.push(("email", self.config.contact.as_str()));
        }
        let search = parse_esearch(&self.get(&self.url("esearch.fcgi", &params)?)?)?;
        if search.ids.is_empty() {
            return Ok(Page::default());
        }
        let ids = search.ids.join(",");
        let mut params = vec![
            ("db", "pubmed"),
            ("id", ids.as_str()),
            ("retmode", "xml"),
            ("rettype", "abstract"),
            ("tool", "casma"),
        ];
        if !self.config.contact.is_empty() {
            params.push(("email", self.config.contact.as_str()));
        }
        let (batch, skipped) = parse_pubmed_xml(&self.get(&self.url("efetch.fcgi", &params)?)?)?;
        let consumed = start + search.ids.len();
        Ok(Page {
            batch,
            next_token: (consumed < search.count).then(|| consumed.to_string()),
            skipped,
        })
    }
}

/// Crossref search is restricted to one exact, case-insensitive word.
pub fn crossref_exact_word(query: &str) -> Result<String, FetchError> {
    let q = query.trim();
    if q.is_empty() {
        return Err(FetchError::EmptyQuery);
    }
    if q.chars().any(|c| !(c.is_alphanumeric() || c == '-')) {
        return Err(FetchError::InvalidQuery(format!(
            "Crossref search takes a single exact word, got '{q}'"
        )));
    }
    Ok(q.to_lowercase())
}

#[derive(Deserialize)]
struct CrossrefEnvelope {
    message: CrossrefMessage,
}

#[derive(Deserialize)]
struct CrossrefMessage {
    #[serde(default)]
    items: Vec<CrossrefItem>,
    #[serde(rename = "next-cursor")]
    next_cursor: Option<String>,
}

#[derive(Deserialize)]
struct CrossrefItem {
    #[serde(rename = "DOI")]
    doi: String,
    #[serde(default)]
    title: Vec<String>,
    #[serde(rename = "abstract")]
    abstract_text: Option<String>,
    #[serde(rename = "type")]
    kind: Option<String>,
    created: Option<CrossrefDate>,
}

#[derive(Deserialize)]
struct CrossrefDate {
    #[serde(rename = "date-parts")]
    date_parts: Vec<Vec<Option<i32>>>,
}

impl CrossrefDate {
    fn to_date(&self) -> Option<NaiveDate> {
        let parts = self.date_parts.first()?;
        let year = (*parts.first()?)?;
        let month = parts.get(1).copied().flatten().unwrap_or(1);
        let day = parts.get(2).copied().flatten().unwrap_or(1);
        NaiveDate::from_ymd_opt(year, month as u32, day as u32)
    }
}

fn strip_markup(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_tag = false;
    for c in s.chars() {
        match c {
            '<' => in_tag = true,
            '>' if in_tag => {
                in_tag = false;
                out.push(' ');
            }
            _ if !in_tag => out.push(c),
            _ => {}
        }
    }
    out
}

/// Parse a Crossref `works` response. The cursor is only propagated when
/// the page was full; an empty or short page ends pagination.
pub fn parse_crossref_page(body: &str, page_size: usize) -> Result<Page, FetchError> {
    let env: CrossrefEnvelope =
        serde_json::from_str(body).map_err(|e| FetchError::Malformed(e.to_string()))?;
    let n_items = env.message.items.len();
    let mut page = Page::default();
    for item in env.message.items {
        let mut draft = RecordDraft::new(Source::Crossref, item.title.join(" "));
        draft.native_id = Some(item.doi.clone());
        draft.doi = Some(item.doi.clone());
        draft.abstract_text = item.abstract_text.as_deref().map(strip_markup);
        draft.record_type = item
            .kind
            .as_deref()
            .map(RecordType::from_crossref)
            .unwrap_or_default();
        draft.created_date = item.created.as_ref().and_then(CrossrefDate::to_date);
        match draft.into_record() {
            Ok(record) => page.batch.push(Harvested {
                native_id: item.doi,
                record,
            }),
            Err(_) => page.skipped += 1,
        }
    }
    page.next_token = if n_items == 0 || n_items < page_size {
        None
    } else {
        env.message.next_cursor
    };
    Ok(page)
}

pub(crate) struct SearchResult {
    pub count: usize,
    pub ids: Vec<String>,
}

pub(crate) fn parse_esearch(body: &str) -> Result<SearchResult, FetchError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| FetchError::Malformed(e.to_string()))?;
    let res = v
        .get("esearchresult")
        .ok_or_else(|| FetchError::Malformed("missing esearchresult".into()))?;
    if let Some(err) = res.get("ERROR") {
        return Err(FetchError::Malformed(format!("esearch error: {err}")));
    }
    let count = match res.get("count") {
        Some(serde_json::Value::String(s)) => s.parse().ok(),
        Some(serde_json::Value::Number(n)) => n.as_u64().map(|n| n as usize),
        _ => None,
    }
    .ok_or_else(|| FetchError::Malformed("missing count".into()))?;
    let ids = res
        .get("idlist")
        .and_then(|l| l.as_array())
        .ok_or_else(|| FetchError::Malformed("missing idlist".into()))?
        .iter()
        .filter_map(|x| x.as_str().map(str::to_string))
        .collect();
    Ok(SearchResult { count, ids })
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, name: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn text_of(node: roxmltree::Node) -> String {
    node.descendants()
        .filter(|n| n.is_text())
        .filter_map(|n| n.text())
        .collect::<String>()
}

fn month_number(s: &str) -> Option<u32> {
    if let Ok(n) = s.parse::<u32>() {
        return Some(n);
    }
    const MONTHS: [&str; 12] = [
        "jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec",
    ];
    let lower = s.to_ascii_lowercase();
    MONTHS
        .iter()
        .position(|m| lower.starts_with(m))
        .map(|i| i as u32 + 1)
}

fn ymd(node: roxmltree::Node) -> Option<NaiveDate> {
    let year: i32 = text_of(child(node, "Year")?).trim().parse().ok()?;
    let month = child(node, "Month")
        .and_then(|m| month_number(text_of(m).trim()))
        .unwrap_or(1);
    let day = child(node, "Day")
        .and_then(|d| text_of(d).trim().parse().ok())
        .unwrap_or(1);
    NaiveDate::from_ymd_opt(year, month, day)
}

/// Parse an `efetch` PubmedArticleSet document.
pub fn parse_pubmed_xml(body: &str) -> Result<(Vec<Harvested>, usize), FetchError> {
    let doc = roxmltree::Document::parse(body).map_err(|e| FetchError::Malformed(e.to_string()))?;
    let mut out = Vec::new();
    let mut skipped = 0;
    for article in doc.descendants().filter(|n| n.has_tag_name("PubmedArticle")) {
        let Some(citation) = child(article, "MedlineCitation") else {
            skipped += 1;
            continue;
        };
        let Some(pmid) = child(citation, "PMID").map(text_of) else {
            skipped += 1;
            continue;
        };
        let art = child(citation, "Article");
        let title = art
            .and_then(|a| child(a, "ArticleTitle"))
            .map(text_of)
            .unwrap_or_default();
        let abstract_text = art.and_then(|a| child(a, "Abstract")).map(|abs| {
            abs.children()
                .filter(|c| c.has_tag_name("AbstractText"))
                .map(text_of)
                .collect::<Vec<_>>()
                .join(" ")
        });
        let doi = article
            .descendants()
            .find(|n| n.has_tag_name("ArticleId") && n.attribute("IdType") == Some("doi"))
            .or_else(|| {
                art.and_then(|a| {
                    a.children().find(|n| {
                        n.has_tag_name("ELocationID") && n.attribute("EIdType") == Some("doi")
                    })
                })
            })
            .map(text_of);
        let created = article
            .descendants()
            .find(|n| n.has_tag_name("PubMedPubDate") && n.attribute("PubStatus") == Some("pubmed"))
            .and_then(ymd)
            .or_else(|| child(citation, "DateCompleted").and_then(ymd))
            .or_else(|| {
                art.and_then(|a| a.descendants().find(|n| n.has_tag_name("PubDate")))
                    .and_then(ymd)
            });
        let is_preprint = article
            .descendants()
            .filter(|n| n.has_tag_name("PublicationType"))
            .any(|n| text_of(n).eq_ignore_ascii_case("preprint"));

        let mut draft = RecordDraft::new(Source::Pubmed, title);
        draft.native_id = Some(pmid.trim().to_string());
        draft.abstract_text = abstract_text;
        draft.doi = doi;
        draft.created_date = created;
        draft.record_type = if is_preprint {
            RecordType::PostedContent
        } else {
            RecordType::JournalArticle
        };
        match draft.into_record() {
            Ok(record) => out.push(Harvested {
                native_id: pmid.trim().to_string(),
                record,
            }),
            Err(_) => skipped += 1,
        }
    }
    Ok((out, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_word_rule() {
        assert_eq!(crossref_exact_word(" Endometriosis ").unwrap(), "endometriosis");
        assert!(matches!(
            crossref_exact_word("endometriosis recurrence"),
            Err(FetchError::InvalidQuery(_))
        ));
        assert_eq!(crossref_exact_word(""), Err(FetchError::EmptyQuery));
    }

    #[test]
    fn crossref_item_mapping() {
        let body = r#"{"status":"ok","message":{"next-cursor":"C2","items":[
            {"DOI":"10.1101/2020.01.01.1","title":["A preprint"],"type":"posted-content",
             "abstract":"<jats:p>Some text</jats:p>","created":{"date-parts":[[2020,1,2]]}},
            {"DOI":"10.1/untitled","title":[],"type":"journal-article"}]}}"#;
        let page = parse_crossref_page(body, 2).unwrap();
        assert_eq!(page.batch.len(), 1);
        assert_eq!(page.skipped, 1);
        let h = &page.batch[0];
        assert_eq!(h.native_id, "10.1101/2020.01.01.1");
        assert_eq!(h.record.record_type, RecordType::PostedContent);
        assert_eq!(h.record.abstract_text.as_deref(), Some("Some text"));
        assert_eq!(h.record.created_date, NaiveDate::from_ymd_opt(2020, 1, 2));
        assert_eq!(page.next_token.as_deref(), Some("C2"));
    }

    #[test]
    fn crossref_short_page_ends_paging() {
        let body = r#"{"message":{"next-cursor":"C9","items":[{"DOI":"10.1/a","title":["A"]}]}}"#;
        assert_eq!(parse_crossref_page(body, 100).unwrap().next_token, None);
        let body = r#"{"message":{"next-cursor":"C9","items":[]}}"#;
        assert_eq!(parse_crossref_page(body, 100).unwrap().next_token, None);
        assert!(matches!(parse_crossref_page("{", 1), Err(FetchError::Malformed(_))));
    }

    #[test]
    fn pubmed_article_mapping() {
        let xml = r#"<?xml version="1.0"?>
        <PubmedArticleSet><PubmedArticle>
          <MedlineCitation><PMID Version="1">9352400</PMID>
            <Article><ArticleTitle>Use of nafarelin versus <i>placebo</i></ArticleTitle>
              <Abstract><AbstractText Label="A">First.</AbstractText><AbstractText>Second.</AbstractText></Abstract>
              <PublicationTypeList><PublicationType>Randomized Controlled Trial</PublicationType></PublicationTypeList>
            </Article></MedlineCitation>
          <PubmedData><History><PubMedPubDate PubStatus="pubmed"><Year>1997</Year><Month>11</Month><Day>14</Day></PubMedPubDate></History>
            <ArticleIdList><ArticleId IdType="pubmed">9352400</ArticleId><ArticleId IdType="doi">10.1016/S0015-0282(97)00397-X</ArticleId></ArticleIdList>
          </PubmedData></PubmedArticle></PubmedArticleSet>"#;
        let (batch, skipped) = parse_pubmed_xml(xml).unwrap();
        assert_eq!(skipped, 0);
        let r = &batch[0].record;
        assert_eq!(batch[0].native_id, "9352400");
        assert_eq!(r.title, "Use of nafarelin versus placebo");
        assert_eq!(r.abstract_text.as_deref(), Some("First. Second."));
        assert_eq!(r.doi.as_deref(), Some("10.1016/s0015-0282(97)00397-x"));
        assert_eq!(r.created_date, NaiveDate::from_ymd_opt(1997, 11, 14));
        assert_eq!(r.record_type, RecordType::JournalArticle);
    }
}
