//! Content-addressed document store with a JSON-lines manifest.

mod harvest;
mod ingest;
mod report;

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::crawl::CrawlStats;
use crate::extract::{render_header, DocFormat, ExtractedDocument};
use crate::tier::SecurityTier;

pub use self::harvest::{HarvestSummary, StoreSink};
pub use self::ingest::{ingest_directory, IngestSummary};
pub use self::report::{stats_report, CorpusSummary};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CRAWL_STATS_FILE: &str = "crawl_stats.json";
const LOCK_FILE: &str = ".corpusforge.lock";

/// Tier assigned to documents that match no rule.
pub const DEFAULT_TIER: SecurityTier = SecurityTier::Controlled;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierRule {
    pub url_prefix: String,
    pub tier: SecurityTier,
}

/// First matching prefix wins; unmatched URLs get [`DEFAULT_TIER`].
pub fn assign_tier(url: &str, rules: &[TierRule]) -> SecurityTier {
    rules
        .iter()
        .find(|r| url.starts_with(&r.url_prefix))
        .map(|r| r.tier)
        .unwrap_or(DEFAULT_TIER)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub doc_id: String,
    pub source_url: String,
    pub relative_path: String,
    pub sha256: String,
    pub tier: SecurityTier,
    pub byte_size: u64,
    pub fetched_at: DateTime<Utc>,
    pub format: DocFormat,
    pub title: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

impl ManifestEntry {
    pub fn urls(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.source_url.as_str()).chain(self.aliases.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutStatus {
    Added,
    /// Same content seen under a new URL.
    Aliased,
    /// Same content and URL already recorded; nothing written.
    Unchanged,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("corpus I/O at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt manifest line {line}: {reason}")]
    CorruptManifest { line: usize, reason: String },
    #[error("corpus at {0} is locked by another command")]
    Locked(PathBuf),
    #[error("unknown document {0}")]
    UnknownDocument(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes via a sibling temp file and rename.
pub(crate) fn replace_file(path: &Path, data: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(data)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn write_atomic(path: &Path, data: &[u8]) -> Result<(), CorpusError> {
    replace_file(path, data).map_err(io_err(path))
}

/// Single-writer document store rooted at a corpus directory.
#[derive(Debug)]
pub struct CorpusStore {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
    by_id: HashMap<String, usize>,
}

impl CorpusStore {
    /// Opens (creating if needed) the corpus at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CorpusError> {
        let root = root.into();
        fs::create_dir_all(root.join("docs")).map_err(io_err(&root))?;
        let entries = read_manifest(&root)?;
        let by_id = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.doc_id.clone(), i))
            .collect();
        Ok(CorpusStore {
            root,
            entries,
            by_id,
        })
    }

    /// Opens an existing corpus read-only; a missing manifest is an empty corpus.
    pub fn load(root: impl Into<PathBuf>) -> Result<Self, CorpusError> {
        let root = root.into();
        let entries = read_manifest(&root)?;
        let by_id = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.doc_id.clone(), i))
            .collect();
        Ok(CorpusStore {
            root,
            entries,
            by_id,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn get(&self, doc_id: &str) -> Option<&ManifestEntry> {
        self.by_id.get(doc_id).map(|&i| &self.entries[i])
    }

    pub fn relative_path_for(doc_id: &str) -> String {
        let shard = doc_id.get(..2).unwrap_or("00");
        format!("docs/{shard}/{doc_id}.md")
    }

    /// Stores `doc`, deduplicating by content hash.
    pub fn put_document(
        &mut self,
        doc: &ExtractedDocument,
        rules: &[TierRule],
    ) -> Result<(ManifestEntry, PutStatus), CorpusError> {
        if let Some(&i) = self.by_id.get(&doc.doc_id) {
            if self.entries[i].urls().any(|u| u == doc.source_url) {
                return Ok((self.entries[i].clone(), PutStatus::Unchanged));
            }
            self.entries[i].aliases.push(doc.source_url.clone());
            if let Err(e) = self.write_manifest() {
                self.entries[i].aliases.pop();
                return Err(e);
            }
            return Ok((self.entries[i].clone(), PutStatus::Aliased));
        }

        let relative_path = Self::relative_path_for(&doc.doc_id);
        let rendered = render_header(doc);
        write_atomic(&self.root.join(&relative_path), rendered.as_bytes())?;
        let entry = ManifestEntry {
            doc_id: doc.doc_id.clone(),
            source_url: doc.source_url.clone(),
            relative_path,
            sha256: doc.doc_id.clone(),
            tier: assign_tier(&doc.source_url, rules),
            byte_size: rendered.len() as u64,
            fetched_at: doc.fetched_at,
            format: doc.format,
            title: doc.title.clone(),
            aliases: Vec::new(),
        };
        self.entries.push(entry.clone());
        if let Err(e) = self.write_manifest() {
            self.entries.pop();
            return Err(e);
        }
        self.by_id.insert(entry.doc_id.clone(), self.entries.len() - 1);
        Ok((entry, PutStatus::Added))
    }

    /// The stored rendering (header + body) of a document.
    pub fn read_document(&self, doc_id: &str) -> Result<String, CorpusError> {
        let entry = self
            .get(doc_id)
            .ok_or_else(|| CorpusError::UnknownDocument(doc_id.to_string()))?;
        let path = self.root.join(&entry.relative_path);
        fs::read_to_string(&path).map_err(io_err(&path))
    }

    fn write_manifest(&self) -> Result<(), CorpusError> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entries serialize"));
            out.push('\n');
        }
        write_atomic(&self.root.join(MANIFEST_FILE), out.as_bytes())
    }

    pub fn save_crawl_stats(&self, stats: &CrawlStats) -> Result<(), CorpusError> {
        let json = serde_json::to_string_pretty(stats).expect("stats serialize");
        write_atomic(&self.root.join(CRAWL_STATS_FILE), json.as_bytes())
    }

    pub fn load_crawl_stats(&self) -> Result<Option<CrawlStats>, CorpusError> {
        let path = self.root.join(CRAWL_STATS_FILE);
        match fs::read_to_string(&path) {
            Ok(s) => serde_json::from_str(&s)
                .map(Some)
                .map_err(|e| CorpusError::CorruptManifest {
                    line: 0,
                    reason: format!("{}: {e}", CRAWL_STATS_FILE),
                }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}

fn read_manifest(root: &Path) -> Result<Vec<ManifestEntry>, CorpusError> {
    let path = root.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(&path)(e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CorpusError::CorruptManifest {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Advisory lock held by commands that mutate a corpus directory.
#[derive(Debug)]
pub struct CorpusLock {
    path: PathBuf,
}

impl CorpusLock {
    pub fn acquire(root: &Path) -> Result<Self, CorpusError> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        let path = root.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(CorpusLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CorpusError::Locked(root.to_path_buf()))
            }
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}

impl Drop for CorpusLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use chrono::TimeZone;

    use super::*;
    use crate::extract::{content_id, parse_header};

    fn doc(url: &str, raw: &[u8]) -> ExtractedDocument {
        ExtractedDocument {
            doc_id: content_id(raw),
            source_url: url.into(),
            title: "A page".into(),
            fetched_at: Utc.with_ymd_and_hms(2025, 3, 1, 12, 0, 0).unwrap(),
            format: DocFormat::Html,
            markdown_body: String::from_utf8_lossy(raw).into_owned(),
            extraction_tool: "test".into(),
            warnings: vec![],
        }
    }

    fn public_rule() -> Vec<TierRule> {
        vec![TierRule {
            url_prefix: "http://h.org/public/".into(),
            tier: SecurityTier::Public,
        }]
    }

    #[test]
    fn dedup_by_hash_records_alias() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = CorpusStore::open(dir.path()).unwrap();
        let (_, s1) = store.put_document(&doc("http://h.org/a", b"same"), &[]).unwrap();
        let (e, s2) = store.put_document(&doc("http://h.org/b", b"same"), &[]).unwrap();
        assert_eq!((s1, s2), (PutStatus::Added, PutStatus::Aliased));
        assert_eq!(store.entries().len(), 1);
        assert_eq!(e.aliases, vec!["http://h.org/b"]);

        let reopened = CorpusStore::open(dir.path()).unwrap();
        assert_eq!(reopened.entries(), store.entries());
    }

    #[test]
    fn tier_rules_first_match_and_default() {
        let mut rules = public_rule();
        rules.push(TierRule {
            url_prefix: "http://h.org/".into(),
            tier: SecurityTier::Collaboration,
        });
        assert_eq!(assign_tier("http://h.org/public/x", &rules), SecurityTier::Public);
        assert_eq!(assign_tier("http://h.org/internal/x", &rules), SecurityTier::Collaboration);
        assert_eq!(assign_tier("http://elsewhere.org/x", &rules), SecurityTier::Controlled);
        assert_eq!(assign_tier("http://h.org/public/x", &[]), SecurityTier::Controlled);
    }

    #[test]
    fn layout_and_content_addressing() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = CorpusStore::open(dir.path()).unwrap();
        let raw = b"original fetched bytes";
        let d = doc("http://h.org/public/x", raw);
        let (entry, _) = store.put_document(&d, &public_rule()).unwrap();
        assert_eq!(entry.tier, SecurityTier::Public);
        assert_eq!(entry.relative_path, format!("docs/{}/{}.md", &d.doc_id[..2], d.doc_id));
        let text = store.read_document(&d.doc_id).unwrap();
        assert_eq!(text.len() as u64, entry.byte_size);
        let (fields, body) = parse_header(&text).unwrap();
        assert_eq!(fields.doc_id, content_id(raw));
        assert_eq!(body, d.markdown_body);
        assert!(dir.path().join(MANIFEST_FILE).exists());
    }

    #[test]
    fn reingest_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = CorpusStore::open(dir.path()).unwrap();
        let d = doc("http://h.org/a", b"content");
        store.put_document(&d, &[]).unwrap();
        let manifest = dir.path().join(MANIFEST_FILE);
        let doc_path = dir.path().join(CorpusStore::relative_path_for(&d.doc_id));
        let before = (fs::metadata(&manifest).unwrap().modified().unwrap(), fs::metadata(&doc_path).unwrap().modified().unwrap());
        std::thread::sleep(std::time::Duration::from_millis(20));
        let (_, status) = store.put_document(&d, &[]).unwrap();
        assert_eq!(status, PutStatus::Unchanged);
        let after = (fs::metadata(&manifest).unwrap().modified().unwrap(), fs::metadata(&doc_path).unwrap().modified().unwrap());
        assert_eq!(before, after);
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let lock = CorpusLock::acquire(dir.path()).unwrap();
        assert!(matches!(CorpusLock::acquire(dir.path()), Err(CorpusError::Locked(_))));
        drop(lock);
        CorpusLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn corrupt_manifest_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "{not json}\n").unwrap();
        assert!(matches!(
            CorpusStore::open(dir.path()),
            Err(CorpusError::CorruptManifest { line: 1, .. })
        ));
    }

    #[test]
    fn crawl_stats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = CorpusStore::open(dir.path()).unwrap();
        assert_eq!(store.load_crawl_stats().unwrap(), None);
        let mut stats = CrawlStats {
            pages_fetched: 4,
            ..Default::default()
        };
        stats.extension_frequency.insert(crate::crawl::DocExtension::Pdf, 1);
        store.save_crawl_stats(&stats).unwrap();
        assert_eq!(store.load_crawl_stats().unwrap(), Some(stats));
    }
}
