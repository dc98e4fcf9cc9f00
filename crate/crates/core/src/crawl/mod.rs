//! Domain-bounded breadth-first crawler.

mod classify;
mod crawler;
mod fetch;
mod rate;
mod robots;
mod scope;
mod url;

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use self::classify::{classify_target, DocExtension, TargetClass};
pub use self::crawler::{crawl, CrawlReport, CrawlSink, FetchLogEntry, FetchedResource, SinkOutcome};
pub use self::fetch::{FetchError, FetchResponse, Fetcher, HttpFetcher, MAX_BODY_BYTES};
pub use self::rate::RateGate;
pub use self::robots::RobotsPolicy;
pub use self::scope::{in_scope, Scope, ScopeDecision};
pub use self::url::{host_of, normalize_url, origin_key, UrlError};

/// `[crawl]` configuration section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    pub seed_urls: Vec<String>,
    /// Empty means "the hosts of `seed_urls`".
    #[serde(default)]
    pub allowed_hosts: Vec<String>,
    #[serde(default)]
    pub allow_subdomains: bool,
    #[serde(default = "default_blacklist")]
    pub blacklist_patterns: Vec<String>,
    #[serde(default = "default_max_depth")]
    pub max_depth: u32,
    #[serde(default = "default_max_pages")]
    pub max_pages: usize,
    /// Requests per second per host.
    #[serde(default = "default_rate_limit")]
    pub rate_limit: f64,
    #[serde(default = "default_redirect_limit")]
    pub redirect_limit: u32,
    #[serde(default = "default_user_agent")]
    pub user_agent: String,
    #[serde(default = "default_fetch_timeout_ms")]
    pub fetch_timeout_ms: u64,
    #[serde(default = "default_true")]
    pub respect_robots: bool,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Harvest fails (exit 1) when more than this many URLs end in error.
    #[serde(default)]
    pub max_errors: u64,
}

fn default_blacklist() -> Vec<String> {
    vec!["/calendar".to_string(), "/login".to_string()]
}
fn default_max_depth() -> u32 {
    5
}
fn default_max_pages() -> usize {
    10_000
}
fn default_rate_limit() -> f64 {
    1.0
}
fn default_redirect_limit() -> u32 {
    5
}
fn default_user_agent() -> String {
    concat!("corpusforge/", env!("CARGO_PKG_VERSION")).to_string()
}
fn default_fetch_timeout_ms() -> u64 {
    30_000
}
fn default_true() -> bool {
    true
}
fn default_workers() -> usize {
    2
}

impl SeedConfig {
    pub fn new<I, S>(seeds: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        SeedConfig {
            seed_urls: seeds.into_iter().map(Into::into).collect(),
            allowed_hosts: Vec::new(),
            allow_subdomains: false,
            blacklist_patterns: default_blacklist(),
            max_depth: default_max_depth(),
            max_pages: default_max_pages(),
            rate_limit: default_rate_limit(),
            redirect_limit: default_redirect_limit(),
            user_agent: default_user_agent(),
            fetch_timeout_ms: default_fetch_timeout_ms(),
            respect_robots: true,
            workers: default_workers(),
            max_errors: 0,
        }
    }

    pub fn fetch_timeout(&self) -> Duration {
        Duration::from_millis(self.fetch_timeout_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CrawlConfigError {
    #[error("no seed URLs configured")]
    NoSeeds,
    #[error("invalid seed URL: {0}")]
    InvalidSeed(#[from] UrlError),
    #[error("seed `{0}` is not an http(s) URL")]
    SeedScheme(String),
    #[error("seed host `{0}` is not in allowed_hosts")]
    SeedHostNotAllowed(String),
    #[error("rate_limit must be a positive finite number, got {0}")]
    InvalidRateLimit(String),
    #[error("max_pages must be positive")]
    ZeroMaxPages,
    #[error("workers must be positive")]
    ZeroWorkers,
    #[error("invalid blacklist pattern `{0}`")]
    InvalidPattern(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UrlStatus {
    Pending,
    Fetched,
    Redirected,
    FilteredExternal,
    FilteredBlacklist,
    FilteredScheme,
    /// Fetched or classified as a format the pipeline does not handle.
    Skipped,
    Error,
}

/// Frontier bookkeeping for one canonical URL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrlRecord {
    pub canonical_url: String,
    pub discovered_from: Option<String>,
    pub depth: u32,
    pub status: UrlStatus,
    pub http_status: Option<u16>,
    pub redirect_target: Option<String>,
    pub target_class: Option<TargetClass>,
    /// Set when a `FilteredBlacklist` status came from robots.txt rather
    /// than a configured pattern.
    #[serde(default)]
    pub robots_disallowed: bool,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CrawlStats {
    pub discovered: u64,
    pub pages_fetched: u64,
    pub documents_fetched: u64,
    /// Counted per hop.
    pub redirects_followed: u64,
    pub filtered_external: u64,
    /// Includes `filtered_robots`.
    pub filtered_blacklist: u64,
    pub filtered_robots: u64,
    pub filtered_scheme: u64,
    pub skipped: u64,
    pub errors: u64,
    pub pending_at_cap: u64,
    pub extension_frequency: BTreeMap<DocExtension, u64>,
    #[serde(with = "duration_ms")]
    pub duration: Duration,
}

impl CrawlStats {
    /// Every discovered URL lands in exactly one terminal bucket.
    pub fn is_conserved(&self) -> bool {
        let terminal = self.pages_fetched
            + self.documents_fetched
            + self.redirects_followed
            + self.filtered_external
            + self.filtered_blacklist
            + self.filtered_scheme
            + self.skipped
            + self.errors
            + self.pending_at_cap;
        let ext_total: u64 = self.extension_frequency.values().sum();
        terminal == self.discovered && ext_total == self.documents_fetched
    }
}

pub(crate) mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}
