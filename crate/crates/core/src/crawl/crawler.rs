use std::collections::{HashMap, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use tokio::task::JoinSet;
use tracing::{debug, warn};
use url::Url;

use super::classify::{classify_target, TargetClass};
use super::fetch::{FetchError, FetchResponse, Fetcher};
use super::rate::RateGate;
use super::robots::RobotsPolicy;
use super::scope::{in_scope, Scope, ScopeDecision};
use super::url::{normalize_url, origin_key};
use super::{CrawlConfigError, CrawlStats, SeedConfig, UrlRecord, UrlStatus};

/// A successfully fetched resource handed to the extraction sink.
#[derive(Debug, Clone, Copy)]
pub struct FetchedResource<'a> {
    pub url: &'a Url,
    pub class: TargetClass,
    pub content_type: Option<&'a str>,
    pub body: &'a [u8],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SinkOutcome {
    /// Raw hrefs; the crawler normalizes and scope-checks them.
    pub outlinks: Vec<String>,
    /// Extraction or storage failure; the URL is recorded as an error but
    /// its outlinks are still followed.
    pub error: Option<String>,
}

impl SinkOutcome {
    pub fn ok(outlinks: Vec<String>) -> Self {
        SinkOutcome {
            outlinks,
            error: None,
        }
    }
}

#[async_trait]
pub trait CrawlSink: Send {
    async fn accept(&mut self, resource: FetchedResource<'_>) -> SinkOutcome;
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchLogEntry {
    pub url: String,
    pub host: String,
    /// Offset from crawl start at which the request was issued.
    pub issued_at: Duration,
    pub robots: bool,
}

#[derive(Debug, Clone)]
pub struct CrawlReport {
    pub stats: CrawlStats,
    /// In discovery order.
    pub records: Vec<UrlRecord>,
    pub fetch_log: Vec<FetchLogEntry>,
}

#[derive(Debug, Clone, Copy)]
struct Queued {
    record: usize,
    hops: u32,
}

struct Frontier {
    scope: Scope,
    max_depth: u32,
    records: Vec<UrlRecord>,
    by_url: HashMap<String, usize>,
    queue: VecDeque<Queued>,
    stats: CrawlStats,
}

impl Frontier {
    /// Records a newly discovered URL and either filters or enqueues it.
    /// Already-known URLs are ignored (first discovery wins).
    fn discover(&mut self, url: &Url, from: Option<&str>, depth: u32, hops: u32, urgent: bool) {
        if depth > self.max_depth {
            return;
        }
        let key = url.as_str();
        if self.by_url.contains_key(key) {
            return;
        }
        let idx = self.records.len();
        self.by_url.insert(key.to_string(), idx);
        self.stats.discovered += 1;
        let mut record = UrlRecord {
            canonical_url: key.to_string(),
            discovered_from: from.map(str::to_string),
            depth,
            status: UrlStatus::Pending,
            http_status: None,
            redirect_target: None,
            target_class: None,
            robots_disallowed: false,
            error: None,
        };
        match in_scope(url, &self.scope) {
            ScopeDecision::RejectScheme => {
                record.status = UrlStatus::FilteredScheme;
                self.stats.filtered_scheme += 1;
            }
            ScopeDecision::RejectExternal => {
                record.status = UrlStatus::FilteredExternal;
                self.stats.filtered_external += 1;
            }
            ScopeDecision::RejectBlacklist => {
                record.status = UrlStatus::FilteredBlacklist;
                self.stats.filtered_blacklist += 1;
            }
            ScopeDecision::Accept => {
                let class = classify_target(url, None);
                record.target_class = Some(class);
                if class == TargetClass::Skip {
                    record.status = UrlStatus::Skipped;
                    self.stats.skipped += 1;
                } else {
                    let item = Queued { record: idx, hops };
                    if urgent {
                        self.queue.push_front(item);
                    } else {
                        self.queue.push_back(item);
                    }
                }
            }
        }
        self.records.push(record);
    }

    fn fail(&mut self, idx: usize, http_status: Option<u16>, reason: String) {
        let rec = &mut self.records[idx];
        rec.status = UrlStatus::Error;
        rec.http_status = http_status.or(rec.http_status);
        rec.error = Some(reason);
        self.stats.errors += 1;
    }
}

struct FetchDone {
    item: Queued,
    url: Url,
    result: Result<FetchResponse, FetchError>,
}

/// Breadth-first crawl from `config.seed_urls`.
///
/// Configuration errors are returned before any request is made. Per-URL
/// failures are recorded in the report and never abort the crawl.
pub async fn crawl<F, S>(
    config: &SeedConfig,
    fetcher: Arc<F>,
    sink: &mut S,
) -> Result<CrawlReport, CrawlConfigError>
where
    F: Fetcher + ?Sized + 'static,
    S: CrawlSink + ?Sized,
{
    let scope = Scope::from_config(config)?;
    if !(config.rate_limit.is_finite() && config.rate_limit > 0.0) {
        return Err(CrawlConfigError::InvalidRateLimit(config.rate_limit.to_string()));
    }
    if config.max_pages == 0 {
        return Err(CrawlConfigError::ZeroMaxPages);
    }
    if config.workers == 0 {
        return Err(CrawlConfigError::ZeroWorkers);
    }

    let start = Instant::now();
    let gate = Arc::new(RateGate::new(config.rate_limit));
    let mut frontier = Frontier {
        scope,
        max_depth: config.max_depth,
        records: Vec::new(),
        by_url: HashMap::new(),
        queue: VecDeque::new(),
        stats: CrawlStats::default(),
    };
    for seed in &config.seed_urls {
        let url = normalize_url(seed, None)?;
        frontier.discover(&url, None, 0, 0, false);
    }

    let mut robots: HashMap<String, RobotsPolicy> = HashMap::new();
    let mut fetch_log = Vec::new();
    let mut fetches = 0usize;
    let mut inflight: JoinSet<(usize, Duration, FetchDone)> = JoinSet::new();

    loop {
        while inflight.len() < config.workers && fetches < config.max_pages {
            let Some(item) = frontier.queue.pop_front() else {
                break;
            };
            let url = Url::parse(&frontier.records[item.record].canonical_url)
                .expect("frontier holds canonical URLs");
            let host = url.host_str().unwrap_or_default().to_string();

            if config.respect_robots {
                let origin = origin_key(&url);
                if !robots.contains_key(&origin) {
                    let policy =
                        fetch_robots(&url, &host, config, &*fetcher, &gate, start, &mut fetch_log)
                            .await;
                    robots.insert(origin.clone(), policy);
                }
                if !robots[&origin].allowed(url.as_str()) {
                    let rec = &mut frontier.records[item.record];
                    rec.status = UrlStatus::FilteredBlacklist;
                    rec.robots_disallowed = true;
                    frontier.stats.filtered_blacklist += 1;
                    frontier.stats.filtered_robots += 1;
                    continue;
                }
            }

            fetches += 1;
            let fetcher = fetcher.clone();
            let gate = gate.clone();
            // The issue time is filled in when the task reports back.
            let log_slot = fetch_log.len();
            fetch_log.push(FetchLogEntry {
                url: url.to_string(),
                host: host.clone(),
                issued_at: Duration::ZERO,
                robots: false,
            });
            inflight.spawn(async move {
                gate.acquire(&host).await;
                let at = start.elapsed();
                let result = fetcher.fetch(&url).await;
                (log_slot, at, FetchDone { item, url, result })
            });
        }

        let Some(joined) = inflight.join_next().await else {
            break;
        };
        let (log_slot, issued_at, done) = match joined {
            Ok(v) => v,
            Err(e) => {
                warn!("fetch task failed: {e}");
                continue;
            }
        };
        fetch_log[log_slot].issued_at = issued_at;
        handle_response(config, &mut frontier, sink, done).await;
    }

    frontier.stats.pending_at_cap = frontier.queue.len() as u64;
    frontier.stats.duration = start.elapsed();
    debug_assert!(frontier.stats.is_conserved(), "{:?}", frontier.stats);
    Ok(CrawlReport {
        stats: frontier.stats,
        records: frontier.records,
        fetch_log,
    })
}

async fn fetch_robots<F: Fetcher + ?Sized>(
    url: &Url,
    host: &str,
    config: &SeedConfig,
    fetcher: &F,
    gate: &RateGate,
    start: Instant,
    log: &mut Vec<FetchLogEntry>,
) -> RobotsPolicy {
    let Ok(robots_url) = url.join("/robots.txt") else {
        return RobotsPolicy::allow_all();
    };
    gate.acquire(host).await;
    log.push(FetchLogEntry {
        url: robots_url.to_string(),
        host: host.to_string(),
        issued_at: start.elapsed(),
        robots: true,
    });
    match fetcher.fetch(&robots_url).await {
        Ok(resp) if (200..300).contains(&resp.status) => {
            RobotsPolicy::parse(&config.user_agent, &resp.body)
        }
        Ok(_) | Err(_) => RobotsPolicy::allow_all(),
    }
}

async fn handle_response<S: CrawlSink + ?Sized>(
    config: &SeedConfig,
    frontier: &mut Frontier,
    sink: &mut S,
    done: FetchDone,
) {
    let FetchDone { item, url, result } = done;
    let idx = item.record;
    let resp = match result {
        Ok(r) => r,
        Err(e) => {
            debug!(%url, "fetch failed: {e}");
            frontier.fail(idx, None, e.to_string());
            return;
        }
    };
    frontier.records[idx].http_status = Some(resp.status);

    if resp.is_redirect() {
        let Some(location) = resp.location.as_deref() else {
            frontier.fail(idx, Some(resp.status), "redirect without Location".into());
            return;
        };
        if item.hops >= config.redirect_limit {
            frontier.fail(idx, Some(resp.status), "redirect limit exceeded".into());
            return;
        }
        let target = match normalize_url(location, Some(&url)) {
            Ok(t) => t,
            Err(e) => {
                frontier.fail(idx, Some(resp.status), format!("bad redirect target: {e}"));
                return;
            }
        };
        let depth = frontier.records[idx].depth;
        let rec = &mut frontier.records[idx];
        rec.status = UrlStatus::Redirected;
        rec.redirect_target = Some(target.to_string());
        frontier.stats.redirects_followed += 1;
        frontier.discover(&target, Some(url.as_str()), depth, item.hops + 1, true);
        return;
    }

    if !(200..300).contains(&resp.status) {
        frontier.fail(idx, Some(resp.status), format!("HTTP {}", resp.status));
        return;
    }

    let class = classify_target(&url, resp.content_type.as_deref());
    frontier.records[idx].target_class = Some(class);
    if class == TargetClass::Skip {
        frontier.records[idx].status = UrlStatus::Skipped;
        frontier.stats.skipped += 1;
        return;
    }

    let outcome = sink
        .accept(FetchedResource {
            url: &url,
            class,
            content_type: resp.content_type.as_deref(),
            body: &resp.body,
        })
        .await;

    match outcome.error {
        Some(reason) => frontier.fail(idx, Some(resp.status), reason),
        None => {
            frontier.records[idx].status = UrlStatus::Fetched;
            match class {
                TargetClass::Document(ext) => {
                    frontier.stats.documents_fetched += 1;
                    *frontier.stats.extension_frequency.entry(ext).or_insert(0) += 1;
                }
                _ => frontier.stats.pages_fetched += 1,
            }
        }
    }

    if class == TargetClass::HtmlPage {
        let depth = frontier.records[idx].depth + 1;
        for href in &outcome.outlinks {
            match normalize_url(href, Some(&url)) {
                Ok(link) => frontier.discover(&link, Some(url.as_str()), depth, 0, false),
                Err(e) => debug!(%url, href, "unusable link: {e}"),
            }
        }
    }
}
