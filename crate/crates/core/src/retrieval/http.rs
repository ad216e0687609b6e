//! Web search over HTTP.
//!
//! The client speaks the common custom-search JSON shape: a GET with `q`,
//! `num`, `key` and `cx` query parameters (plus `searchType=image` for image
//! queries), answered by `{"items": [{"title", "snippet", "link"}, ...]}`.
//! Credentials come from the environment:
//!
//! * `AGENTSEG_SEARCH_ENDPOINT` (required)
//! * `AGENTSEG_SEARCH_API_KEY`
//! * `AGENTSEG_SEARCH_ENGINE_ID`

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::Deserialize;

use super::{BackendError, ResultKind, SearchEngine, SearchEntry, SearchResultSet};
use crate::trajectory::{SearchCall, SearchTool};

pub const ENV_ENDPOINT: &str = "AGENTSEG_SEARCH_ENDPOINT";
pub const ENV_API_KEY: &str = "AGENTSEG_SEARCH_API_KEY";
pub const ENV_ENGINE_ID: &str = "AGENTSEG_SEARCH_ENGINE_ID";

#[derive(Debug, Clone, PartialEq)]
pub struct HttpSearchConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub engine_id: Option<String>,
    pub timeout: Duration,
    /// Additional attempts after a retryable failure.
    pub retries: u32,
    pub max_in_flight: usize,
}

impl HttpSearchConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpSearchConfig {
            endpoint: endpoint.into(),
            api_key: None,
            engine_id: None,
            timeout: Duration::from_secs(10),
            retries: 1,
            max_in_flight: 4,
        }
    }

    pub fn from_env() -> Result<Self, BackendError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, BackendError> {
        let endpoint = lookup(ENV_ENDPOINT).ok_or_else(|| BackendError::Config(ENV_ENDPOINT.into()))?;
        let mut cfg = Self::new(endpoint);
        cfg.api_key = lookup(ENV_API_KEY);
        cfg.engine_id = lookup(ENV_ENGINE_ID);
        Ok(cfg)
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Permits {
    free: Mutex<usize>,
    cond: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Permits {
            free: Mutex::new(n.max(1)),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cond.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cond.notify_one();
    }
}

#[derive(Debug, Deserialize)]
struct ProviderResponse {
    #[serde(default)]
    items: Vec<ProviderItem>,
}

#[derive(Debug, Deserialize)]
struct ProviderItem {
    #[serde(default)]
    title: String,
    #[serde(default)]
    snippet: String,
    #[serde(default)]
    link: String,
}

pub struct HttpSearch {
    cfg: HttpSearchConfig,
    agent: ureq::Agent,
    permits: Permits,
}

impl std::fmt::Debug for HttpSearch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpSearch").field("endpoint", &self.cfg.endpoint).finish()
    }
}

fn retryable(e: &BackendError) -> bool {
    match e {
        BackendError::Timeout | BackendError::Transport(_) | BackendError::Quota => true,
        BackendError::Status(code) => *code >= 500,
        _ => false,
    }
}

impl HttpSearch {
    pub fn new(cfg: HttpSearchConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let permits = Permits::new(cfg.max_in_flight);
        HttpSearch { cfg, agent, permits }
    }

    fn request_url(&self, call: &SearchCall, k: usize) -> Result<url::Url, BackendError> {
        let mut url = url::Url::parse(&self.cfg.endpoint)
            .map_err(|e| BackendError::Config(format!("bad endpoint URL: {e}")))?;
        {
            let mut q = url.query_pairs_mut();
            q.append_pair("q", &call.query);
            q.append_pair("num", &k.to_string());
            if let Some(key) = &self.cfg.api_key {
                q.append_pair("key", key);
            }
            if let Some(cx) = &self.cfg.engine_id {
                q.append_pair("cx", cx);
            }
            if call.tool == SearchTool::ImageSearch {
                q.append_pair("searchType", "image");
            }
        }
        Ok(url)
    }

    fn attempt(&self, url: &str) -> Result<String, BackendError> {
        let _permit = self.permits.acquire();
        let mut resp = self.agent.get(url).call().map_err(|e| match e {
            ureq::Error::Timeout(_) => BackendError::Timeout,
            ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => BackendError::Timeout,
            other => BackendError::Transport(other.to_string()),
        })?;
        match resp.status().as_u16() {
            200..=299 => resp
                .body_mut()
                .read_to_string()
                .map_err(|e| BackendError::Transport(e.to_string())),
            401 | 403 => Err(BackendError::Auth(resp.status().as_u16())),
            429 => Err(BackendError::Quota),
            code => Err(BackendError::Status(code)),
        }
    }

    /// One request, plus up to `retries` more on timeouts, transport
    /// failures, 429 and 5xx.
    pub fn http_search(&self, call: &SearchCall, k: usize) -> Result<SearchResultSet, BackendError> {
        let url = self.request_url(call, k)?;
        let mut attempts_left = self.cfg.retries + 1;
        let body = loop {
            attempts_left -= 1;
            match self.attempt(url.as_str()) {
                Ok(body) => break body,
                Err(e) if attempts_left > 0 && retryable(&e) => continue,
                Err(e) => return Err(e),
            }
        };
        let parsed: ProviderResponse =
            serde_json::from_str(&body).map_err(|e| BackendError::Decode(e.to_string()))?;
        let kind = match call.tool {
            SearchTool::TextSearch => ResultKind::Text,
            SearchTool::ImageSearch => ResultKind::Image,
        };
        let entries = parsed
            .items
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(rank, item)| SearchEntry {
                id: item.link.clone(),
                title: item.title,
                content: match kind {
                    ResultKind::Text => item.snippet.chars().take(super::SNIPPET_CHARS).collect(),
                    ResultKind::Image => item.link,
                },
                score: 1.0 / (rank as f64 + 1.0),
            })
            .collect();
        Ok(SearchResultSet { kind, entries })
    }
}

impl SearchEngine for HttpSearch {
    fn search(&self, call: &SearchCall, k: usize) -> Result<SearchResultSet, BackendError> {
        self.http_search(call, k)
    }
}
