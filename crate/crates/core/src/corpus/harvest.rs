use async_trait::async_trait;
use tracing::warn;

use super::{CorpusStore, PutStatus, TierRule};
use crate::crawl::{CrawlSink, FetchedResource, SinkOutcome};
use crate::extract::{extract_resource, fetched_now, Converters, ExtractError};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HarvestSummary {
    pub added: usize,
    pub aliased: usize,
    pub unchanged: usize,
    /// `(url, reason)` for resources that could not be extracted or stored.
    pub failed: Vec<(String, String)>,
}

/// Extracts every fetched resource and stores it in a corpus.
pub struct StoreSink<'a> {
    store: &'a mut CorpusStore,
    converters: &'a Converters,
    rules: &'a [TierRule],
    pub summary: HarvestSummary,
}

impl<'a> StoreSink<'a> {
    pub fn new(store: &'a mut CorpusStore, converters: &'a Converters, rules: &'a [TierRule]) -> Self {
        StoreSink {
            store,
            converters,
            rules,
            summary: HarvestSummary::default(),
        }
    }

    fn failed(&mut self, url: &str, reason: String, outlinks: Vec<String>) -> SinkOutcome {
        warn!(%url, "not stored: {reason}");
        self.summary.failed.push((url.to_string(), reason.clone()));
        SinkOutcome {
            outlinks,
            error: Some(reason),
        }
    }
}

#[async_trait]
impl CrawlSink for StoreSink<'_> {
    async fn accept(&mut self, resource: FetchedResource<'_>) -> SinkOutcome {
        let url = resource.url.to_string();
        let (doc, outlinks) = match extract_resource(resource, self.converters, fetched_now()).await {
            Ok(v) => v,
            Err(ExtractError::EmptyContent { outlinks }) => {
                return self.failed(&url, "no text content after cleaning".into(), outlinks)
            }
            Err(e) => return self.failed(&url, e.to_string(), Vec::new()),
        };
        match self.store.put_document(&doc, self.rules) {
            Ok((_, PutStatus::Added)) => self.summary.added += 1,
            Ok((_, PutStatus::Aliased)) => self.summary.aliased += 1,
            Ok((_, PutStatus::Unchanged)) => self.summary.unchanged += 1,
            Err(e) => return self.failed(&url, e.to_string(), outlinks),
        }
        SinkOutcome::ok(outlinks)
    }
}
