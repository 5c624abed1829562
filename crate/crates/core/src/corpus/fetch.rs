//! Issue ingestion from a GitHub-style REST API.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use chrono::{DateTime, NaiveDate, TimeZone, Utc};
use serde::Deserialize;

use super::cache::{CachedPage, PageCache};
use super::{Comment, Corpus, CorpusError, CorpusSource, IssueRecord, IssueState, Provenance};
use crate::http::{next_link, HttpRequest, HttpTransport};

pub const VCS_TOKEN_ENV: &str = "FAULTLOOM_VCS_TOKEN";

/// Inclusive range of creation dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DateWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateWindow {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        DateWindow { start, end }
    }

    pub fn contains(&self, at: DateTime<Utc>) -> bool {
        let day = at.date_naive();
        day >= self.start && day <= self.end
    }
}

#[derive(Debug, Clone)]
pub struct FetchConfig {
    pub api_base: String,
    pub per_page: u32,
    pub max_attempts: u32,
    pub backoff: Duration,
    pub cache_dir: Option<PathBuf>,
    pub cache_ttl: Duration,
    /// Upper bound on network requests issued by one fetcher (shared across repos).
    pub request_budget: Option<usize>,
}

impl Default for FetchConfig {
    fn default() -> Self {
        FetchConfig {
            api_base: "https://api.github.com".into(),
            per_page: 100,
            max_attempts: 4,
            backoff: Duration::from_secs(1),
            cache_dir: None,
            cache_ttl: Duration::from_secs(24 * 3600),
            request_budget: None,
        }
    }
}

#[derive(Deserialize)]
struct ApiLabel {
    name: String,
}

#[derive(Deserialize)]
struct ApiIssue {
    number: u64,
    title: String,
    state: String,
    created_at: DateTime<Utc>,
    updated_at: DateTime<Utc>,
    closed_at: Option<DateTime<Utc>>,
    body: Option<String>,
    #[serde(default)]
    labels: Vec<ApiLabel>,
    pull_request: Option<serde_json::Value>,
    html_url: String,
    #[serde(default)]
    comments: u64,
}

#[derive(Deserialize)]
struct ApiComment {
    author_association: Option<String>,
    created_at: DateTime<Utc>,
    body: Option<String>,
}

pub struct IssueFetcher<'a> {
    transport: &'a dyn HttpTransport,
    config: FetchConfig,
    token: Option<String>,
    cache: Option<PageCache>,
    clock: fn() -> DateTime<Utc>,
    requests: AtomicUsize,
}

impl<'a> IssueFetcher<'a> {
    pub fn new(transport: &'a dyn HttpTransport, config: FetchConfig, token: Option<String>) -> Self {
        let cache = config
            .cache_dir
            .as_ref()
            .map(|dir| PageCache::new(dir.clone(), config.cache_ttl));
        IssueFetcher {
            transport,
            config,
            token,
            cache,
            clock: Utc::now,
            requests: AtomicUsize::new(0),
        }
    }

    /// Token taken from `FAULTLOOM_VCS_TOKEN`, if set.
    pub fn from_env(transport: &'a dyn HttpTransport, config: FetchConfig) -> Self {
        let token = std::env::var(VCS_TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Self::new(transport, config, token)
    }

    pub fn with_clock(mut self, clock: fn() -> DateTime<Utc>) -> Self {
        self.clock = clock;
        self
    }

    /// Network requests issued so far (cache hits excluded).
    pub fn requests_issued(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn fetch_issues(&self, repo: &str, window: &DateWindow) -> Result<Corpus, CorpusError> {
        let base = self.config.api_base.trim_end_matches('/');
        let scope = |kind: &str| format!("{kind}|{repo}|{}|{}", window.start, window.end);
        let issues_scope = scope("issues");
        let comments_scope = scope("comments");

        let mut url = Some(format!(
            "{base}/repos/{repo}/issues?state=all&sort=created&direction=asc&per_page={}&since={}T00:00:00Z",
            self.config.per_page, window.start
        ));
        let mut records = Vec::new();
        while let Some(current) = url.take() {
            let page = self.get_page(&issues_scope, &current)?;
            let items: Vec<ApiIssue> =
                serde_json::from_str(&page.body).map_err(|e| CorpusError::Protocol {
                    url: current.clone(),
                    reason: e.to_string(),
                })?;
            for item in items {
                if item.pull_request.is_some() || !window.contains(item.created_at) {
                    continue;
                }
                let comments = if item.comments > 0 {
                    self.fetch_comments(&comments_scope, base, repo, item.number)?
                } else {
                    Vec::new()
                };
                records.push(IssueRecord {
                    repo: repo.to_string(),
                    number: item.number,
                    title: item.title,
                    state: if item.state == "closed" {
                        IssueState::Closed
                    } else {
                        IssueState::Open
                    },
                    created_at: item.created_at,
                    updated_at: item.updated_at,
                    closed_at: item.closed_at,
                    body: item.body.unwrap_or_default(),
                    labels: item.labels.into_iter().map(|l| l.name).collect(),
                    comments,
                    is_pull_request: false,
                    url: item.html_url,
                });
            }
            url = page.next;
        }
        Corpus::new(
            records,
            Provenance {
                source: CorpusSource::Live,
                fetched_at: (self.clock)(),
            },
        )
    }

    fn fetch_comments(
        &self,
        scope: &str,
        base: &str,
        repo: &str,
        number: u64,
    ) -> Result<Vec<Comment>, CorpusError> {
        let mut url = Some(format!(
            "{base}/repos/{repo}/issues/{number}/comments?per_page={}",
            self.config.per_page
        ));
        let mut out = Vec::new();
        while let Some(current) = url.take() {
            let page = self.get_page(scope, &current)?;
            let items: Vec<ApiComment> =
                serde_json::from_str(&page.body).map_err(|e| CorpusError::Protocol {
                    url: current.clone(),
                    reason: e.to_string(),
                })?;
            out.extend(items.into_iter().map(|c| Comment {
                author_role: c.author_association.unwrap_or_else(|| "NONE".into()),
                created_at: c.created_at,
                body: c.body.unwrap_or_default(),
            }));
            url = page.next;
        }
        out.sort_by_key(|c| c.created_at);
        Ok(out)
    }

    fn get_page(&self, scope: &str, url: &str) -> Result<CachedPage, CorpusError> {
        let now = (self.clock)();
        if let Some(page) = self.cache.as_ref().and_then(|c| c.lookup(scope, url, now)) {
            return Ok(page);
        }
        let page = self.get_with_retries(url)?;
        if let Some(cache) = &self.cache {
            if let Err(e) = cache.store(scope, url, &page, now) {
                tracing::warn!("cache write failed for {url}: {e}");
            }
        }
        Ok(page)
    }

    fn get_with_retries(&self, url: &str) -> Result<CachedPage, CorpusError> {
        let mut request = HttpRequest::get(url)
            .header("accept", "application/vnd.github+json")
            .header("user-agent", "faultloom");
        if let Some(token) = &self.token {
            request = request.header("authorization", format!("Bearer {token}"));
        }

        let attempts = self.config.max_attempts.max(1);
        let mut last_reason = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(self.config.backoff * 2u32.pow(attempt - 2));
            }
            if let Some(budget) = self.config.request_budget {
                if self.requests.fetch_add(1, Ordering::SeqCst) >= budget {
                    return Err(CorpusError::BudgetExhausted(budget));
                }
            } else {
                self.requests.fetch_add(1, Ordering::SeqCst);
            }

            let response = match self.transport.send(&request) {
                Ok(r) => r,
                Err(e) => {
                    last_reason = e.reason;
                    continue;
                }
            };
            match response.status {
                200..=299 => {
                    return Ok(CachedPage {
                        next: response.header("link").and_then(next_link),
                        body: response.body,
                    })
                }
                401 => {
                    return Err(CorpusError::Auth {
                        url: url.to_string(),
                        status: 401,
                    })
                }
                403 | 429 if response.header("x-ratelimit-remaining") == Some("0") => {
                    let reset = response
                        .header("x-ratelimit-reset")
                        .and_then(|s| s.parse::<i64>().ok())
                        .and_then(|secs| Utc.timestamp_opt(secs, 0).single())
                        .map(|t| t.to_rfc3339())
                        .unwrap_or_else(|| "unknown".into());
                    return Err(CorpusError::RateLimited { reset });
                }
                403 => {
                    return Err(CorpusError::Auth {
                        url: url.to_string(),
                        status: 403,
                    })
                }
                429 | 500..=599 => {
                    last_reason = format!("status {}", response.status);
                }
                status => {
                    return Err(CorpusError::Protocol {
                        url: url.to_string(),
                        reason: format!("status {status}"),
                    })
                }
            }
        }
        Err(CorpusError::Network {
            url: url.to_string(),
            attempts,
            reason: last_reason,
        })
    }
}

/// Fetches several repositories concurrently and concatenates them in `repos` order.
pub fn fetch_many(
    fetcher: &IssueFetcher<'_>,
    repos: &[String],
    window: &DateWindow,
    parallelism: usize,
) -> Result<Corpus, CorpusError> {
    let parallelism = parallelism.max(1);
    let mut results: Vec<Option<Result<Corpus, CorpusError>>> = (0..repos.len()).map(|_| None).collect();
    for (chunk_repos, chunk_out) in repos.chunks(parallelism).zip(results.chunks_mut(parallelism)) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk_repos
                .iter()
                .map(|repo| s.spawn(move || fetcher.fetch_issues(repo, window)))
                .collect();
            for (slot, handle) in chunk_out.iter_mut().zip(handles) {
                *slot = Some(handle.join().expect("fetch thread panicked"));
            }
        });
    }
    let mut records = Vec::new();
    let mut fetched_at = DateTime::<Utc>::UNIX_EPOCH;
    for result in results.into_iter().flatten() {
        let corpus = result?;
        fetched_at = fetched_at.max(corpus.provenance.fetched_at);
        records.extend(corpus.into_records());
    }
    Corpus::new(
        records,
        Provenance {
            source: CorpusSource::Live,
            fetched_at,
        },
    )
}
