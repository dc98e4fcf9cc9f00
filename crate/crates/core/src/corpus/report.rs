use std::collections::BTreeMap;
use std::fmt::Write;

use crate::crawl::CrawlStats;

use super::ManifestEntry;

/// Counts derived from the manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusSummary {
    pub documents: u64,
    /// Distinct source URLs, including aliases.
    pub source_urls: u64,
    pub total_bytes: u64,
    pub by_format: BTreeMap<String, u64>,
    pub by_tier: BTreeMap<String, u64>,
}

impl CorpusSummary {
    pub fn from_entries(entries: &[ManifestEntry]) -> Self {
        let mut s = CorpusSummary::default();
        for e in entries {
            s.documents += 1;
            s.source_urls += 1 + e.aliases.len() as u64;
            s.total_bytes += e.byte_size;
            *s.by_format.entry(e.format.to_string()).or_default() += 1;
            *s.by_tier.entry(e.tier.to_string()).or_default() += 1;
        }
        s
    }

    /// Source URLs to stored documents, as `urls:docs`.
    pub fn dedup_ratio(&self) -> String {
        format!("{}:{}", self.source_urls, self.documents)
    }
}

/// Plain-text statistics report. All map listings are sorted by key.
pub fn stats_report(entries: &[ManifestEntry], crawl: Option<&CrawlStats>) -> String {
    let default_stats = CrawlStats::default();
    let c = crawl.unwrap_or(&default_stats);
    let mut out = String::new();
    out.push_str("crawl:\n");
    let counters = [
        ("discovered", c.discovered),
        ("pages_fetched", c.pages_fetched),
        ("documents_fetched", c.documents_fetched),
        ("redirects_followed", c.redirects_followed),
        ("filtered_external", c.filtered_external),
        ("filtered_blacklist", c.filtered_blacklist),
        ("filtered_robots", c.filtered_robots),
        ("filtered_scheme", c.filtered_scheme),
        ("skipped", c.skipped),
        ("errors", c.errors),
        ("pending_at_cap", c.pending_at_cap),
    ];
    for (k, v) in counters {
        let _ = writeln!(out, "  {k}: {v}");
    }
    out.push_str("  extension_frequency:\n");
    for (ext, n) in &c.extension_frequency {
        let _ = writeln!(out, "    {ext}: {n}");
    }
    let _ = writeln!(out, "  duration_ms: {}", c.duration.as_millis());

    let s = CorpusSummary::from_entries(entries);
    out.push_str("corpus:\n");
    let _ = writeln!(out, "  documents: {}", s.documents);
    let _ = writeln!(out, "  source_urls: {}", s.source_urls);
    let _ = writeln!(out, "  dedup_ratio: {}", s.dedup_ratio());
    let _ = writeln!(out, "  total_bytes: {}", s.total_bytes);
    out.push_str("  by_format:\n");
    for (k, v) in &s.by_format {
        let _ = writeln!(out, "    {k}: {v}");
    }
    out.push_str("  by_tier:\n");
    for (k, v) in &s.by_tier {
        let _ = writeln!(out, "    {k}: {v}");
    }
    out
}
