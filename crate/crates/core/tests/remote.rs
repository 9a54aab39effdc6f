//! Harvester behaviour against a scripted in-memory transport.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use casma_core::ingest::remote::{
    FetchError, Harvester, HttpResponse, RemoteSource, SourceConfig, Transport, TransportError,
};

type Reply = Result<HttpResponse, TransportError>;

struct Scripted {
    replies: Mutex<VecDeque<Reply>>,
    calls: Mutex<Vec<(String, Instant)>>,
}

impl Scripted {
    fn new(replies: Vec<Reply>) -> Self {
        Scripted {
            replies: Mutex::new(replies.into()),
            calls: Mutex::new(Vec::new()),
        }
    }

    fn urls(&self) -> Vec<String> {
        self.calls.lock().unwrap().iter().map(|(u, _)| u.clone()).collect()
    }
}

impl Transport for &Scripted {
    fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
        self.calls.lock().unwrap().push((url.to_string(), Instant::now()));
        self.replies
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(TransportError("script exhausted".into())))
    }
}

fn ok(body: &str) -> Reply {
    Ok(HttpResponse {
        status: 200,
        body: body.to_string(),
    })
}

fn status(code: u16) -> Reply {
    Ok(HttpResponse {
        status: code,
        body: String::new(),
    })
}

fn config(page_size: usize) -> SourceConfig {
    SourceConfig {
        base_url: "https://example.test/api".into(),
        contact: "someone@example.test".into(),
        delay_ms: 0,
        page_size,
        max_retries: 2,
        backoff_base_ms: 1,
        backoff_cap_ms: 2,
    }
}

fn crossref_page(cursor: &str, dois: &[&str]) -> String {
    let items: Vec<String> = dois
        .iter()
        .map(|d| format!(r#"{{"DOI":"{d}","title":["Title {d}"],"type":"journal-article"}}"#))
        .collect();
    format!(
        r#"{{"message":{{"next-cursor":"{cursor}","items":[{}]}}}}"#,
        items.join(",")
    )
}

#[test]
fn zero_hits_is_an_empty_result() {
    let t = Scripted::new(vec![ok(&crossref_page("C1", &[]))]);
    let h = Harvester::new(RemoteSource::Crossref, config(2), &t);
    let (records, tokens) = h.fetch_all("endometriosis", None).unwrap();
    assert!(records.is_empty());
    assert_eq!(tokens, vec![None]);
}

#[test]
fn cursor_paging_visits_each_token_once() {
    let t = Scripted::new(vec![
        ok(&crossref_page("C1", &["10.1/a", "10.1/b"])),
        ok(&crossref_page("C2", &["10.1/c", "10.1/d"])),
        ok(&crossref_page("C3", &["10.1/e"])),
    ]);
    let h = Harvester::new(RemoteSource::Crossref, config(2), &t);
    let (records, tokens) = h.fetch_all("Endometriosis", None).unwrap();
    assert_eq!(records.len(), 5);
    assert_eq!(tokens, vec![None, Some("C1".into()), Some("C2".into())]);
    let urls = t.urls();
    assert_eq!(urls.len(), 3);
    assert!(urls[0].contains("query=endometriosis"));
    assert!(urls[0].contains("cursor=*") || urls[0].contains("cursor=%2A"));
    assert!(urls[1].contains("cursor=C1"));
    assert!(urls[0].contains("mailto=someone%40example.test"));
}

#[test]
fn repeated_cursor_is_reported() {
    let t = Scripted::new(vec![
        ok(&crossref_page("C1", &["10.1/a"])),
        ok(&crossref_page("C1", &["10.1/b"])),
    ]);
    let h = Harvester::new(RemoteSource::Crossref, config(1), &t);
    assert_eq!(
        h.fetch_all("word", None).unwrap_err(),
        FetchError::PagingCycle("C1".into())
    );
}

#[test]
fn multi_word_crossref_query_is_rejected_before_any_request() {
    let t = Scripted::new(vec![]);
    let h = Harvester::new(RemoteSource::Crossref, config(1), &t);
    assert!(matches!(h.fetch_remote("two words", None), Err(FetchError::InvalidQuery(_))));
    assert!(t.urls().is_empty());
}

#[test]
fn client_errors_are_not_retried() {
    let t = Scripted::new(vec![status(404), ok(&crossref_page("C1", &[]))]);
    let h = Harvester::new(RemoteSource::Crossref, config(1), &t);
    assert!(matches!(
        h.fetch_remote("word", None),
        Err(FetchError::Http { status: 404, .. })
    ));
    assert_eq!(t.urls().len(), 1);
}

#[test]
fn server_errors_are_retried_then_succeed() {
    let t = Scripted::new(vec![status(503), ok(&crossref_page("C1", &["10.1/a"]))]);
    let h = Harvester::new(RemoteSource::Crossref, config(5), &t);
    assert_eq!(h.fetch_remote("word", None).unwrap().batch.len(), 1);
    assert_eq!(t.urls().len(), 2);
}

#[test]
fn persistent_network_failure_surfaces_after_retries() {
    let t = Scripted::new(vec![
        Err(TransportError("reset".into())),
        Err(TransportError("reset".into())),
        Err(TransportError("timeout".into())),
    ]);
    let h = Harvester::new(RemoteSource::Crossref, config(1), &t);
    assert_eq!(
        h.fetch_remote("word", None).unwrap_err(),
        FetchError::Network {
            attempts: 3,
            message: "timeout".into()
        }
    );
}

#[test]
fn requests_are_spaced_by_the_configured_delay() {
    let t = Scripted::new(vec![
        ok(&crossref_page("C1", &["10.1/a"])),
        ok(&crossref_page("C2", &["10.1/b"])),
        ok(&crossref_page("C3", &[])),
    ]);
    let mut cfg = config(1);
    cfg.delay_ms = 40;
    let h = Harvester::new(RemoteSource::Crossref, cfg, &t);
    h.fetch_all("word", None).unwrap();
    let calls = t.calls.lock().unwrap();
    assert_eq!(calls.len(), 3);
    for w in calls.windows(2) {
        assert!(w[1].1.duration_since(w[0].1) >= Duration::from_millis(40));
    }
}

#[test]
fn pubmed_pages_by_offset_and_fetches_details() {
    let search = |ids: &[&str], count: usize| {
        ok(&format!(
            r#"{{"esearchresult":{{"count":"{count}","idlist":[{}]}}}}"#,
            ids.iter().map(|i| format!("\"{i}\"")).collect::<Vec<_>>().join(",")
        ))
    };
    let article = |pmid: &str| {
        format!(
            "<PubmedArticle><MedlineCitation><PMID>{pmid}</PMID><Article>\
             <ArticleTitle>Trial {pmid}</ArticleTitle></Article></MedlineCitation></PubmedArticle>"
        )
    };
    let set = |ids: &[&str]| {
        ok(&format!(
            "<PubmedArticleSet>{}</PubmedArticleSet>",
            ids.iter().map(|i| article(i)).collect::<String>()
        ))
    };
    let t = Scripted::new(vec![
        search(&["11", "12"], 3),
        set(&["11", "12"]),
        search(&["13"], 3),
        set(&["13"]),
    ]);
    let h = Harvester::new(RemoteSource::Pubmed, config(2), &t);
    let (records, tokens) = h.fetch_all("endometriosis AND gnrh", None).unwrap();
    let ids: Vec<&str> = records.iter().map(|r| r.native_id.as_str()).collect();
    assert_eq!(ids, ["11", "12", "13"]);
    assert_eq!(tokens, vec![None, Some("2".into())]);
    let urls = t.urls();
    assert!(urls[0].contains("esearch.fcgi") && urls[0].contains("retstart=0"));
    assert!(urls[1].contains("efetch.fcgi") && urls[1].contains("id=11%2C12"));
    assert!(urls[2].contains("retstart=2"));
}
