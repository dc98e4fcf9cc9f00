use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::chunk::{chunk_text, Chunk, ChunkPolicy};
use super::persist::{load_index, persist_index, IndexFileError};
use super::search::{IndexEntry, IndexError, TopK, VectorIndex};
use super::{EmbedError, Embedder, EmbeddingVector};
use crate::corpus::{replace_file, CorpusError, CorpusStore};
use crate::extract::{parse_header, HeaderError};
use crate::SecurityTier;

pub const VECTORS_FILE: &str = "index.cfix";
pub const CHUNKS_FILE: &str = "chunks.jsonl";
pub const META_FILE: &str = "index.json";

const EMBED_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexMeta {
    /// `Embedder::describe` of the model that produced the vectors.
    pub embedder: String,
    pub dimension: usize,
    pub policy: ChunkPolicy,
    pub documents: usize,
    pub chunks: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BuildSummary {
    pub documents: usize,
    pub chunks: usize,
    /// Chunks with no embeddable tokens.
    pub skipped_chunks: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum SearchIndexError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("document {doc_id}: {source}")]
    Header { doc_id: String, source: HeaderError },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    File(#[from] IndexFileError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("index directory is inconsistent: {0}")]
    Inconsistent(String),
}

/// Vectors plus the chunk texts and provenance they point at.
#[derive(Debug, Clone)]
pub struct SearchIndex {
    pub meta: IndexMeta,
    vectors: VectorIndex,
    chunks: HashMap<String, Chunk>,
}

impl SearchIndex {
    /// An empty index for `embedder`'s vectors, filled with [`SearchIndex::insert`].
    pub fn empty(embedder: &dyn Embedder, policy: ChunkPolicy) -> Self {
        SearchIndex {
            meta: IndexMeta {
                embedder: embedder.describe(),
                dimension: embedder.dimension(),
                policy,
                documents: 0,
                chunks: 0,
            },
            vectors: VectorIndex::new(embedder.dimension()),
            chunks: HashMap::new(),
        }
    }

    pub fn insert(&mut self, chunk: Chunk, vector: EmbeddingVector, source_url: &str) -> Result<(), IndexError> {
        self.vectors.insert(IndexEntry {
            chunk_id: chunk.chunk_id.clone(),
            vector,
            tier: chunk.tier,
            source_url: source_url.to_string(),
        })?;
        self.meta.chunks += 1;
        self.chunks.insert(chunk.chunk_id.clone(), chunk);
        Ok(())
    }

    pub fn vectors(&self) -> &VectorIndex {
        &self.vectors
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.chunks.get(chunk_id)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn top_k(
        &self,
        query: &EmbeddingVector,
        k: usize,
        tier_ceiling: SecurityTier,
    ) -> Result<TopK, IndexError> {
        self.vectors.top_k(query, k, tier_ceiling)
    }

    pub fn save(&self, dir: &Path) -> Result<(), SearchIndexError> {
        let io = |p: &Path| {
            let path = p.display().to_string();
            move |source| SearchIndexError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        persist_index(&self.vectors, &dir.join(VECTORS_FILE))?;
        let mut lines = String::new();
        for e in self.vectors.entries() {
            lines.push_str(&serde_json::to_string(&self.chunks[&e.chunk_id]).expect("chunk serializes"));
            lines.push('\n');
        }
        let chunks_path = dir.join(CHUNKS_FILE);
        replace_file(&chunks_path, lines.as_bytes()).map_err(io(&chunks_path))?;
        let meta_path = dir.join(META_FILE);
        let meta = serde_json::to_string_pretty(&self.meta).expect("meta serializes");
        replace_file(&meta_path, meta.as_bytes()).map_err(io(&meta_path))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, SearchIndexError> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|source| SearchIndexError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        let meta: IndexMeta = serde_json::from_str(&read(META_FILE)?)
            .map_err(|e| SearchIndexError::Inconsistent(format!("{META_FILE}: {e}")))?;
        let vectors = load_index(&dir.join(VECTORS_FILE))?;
        let mut chunks = HashMap::new();
        for (n, line) in read(CHUNKS_FILE)?.lines().enumerate() {
            let c: Chunk = serde_json::from_str(line)
                .map_err(|e| SearchIndexError::Inconsistent(format!("{CHUNKS_FILE} line {}: {e}", n + 1)))?;
            chunks.insert(c.chunk_id.clone(), c);
        }
        if meta.dimension != vectors.dimension() || chunks.len() != vectors.len() {
            return Err(SearchIndexError::Inconsistent(format!(
                "meta says {} chunks of dimension {}, found {} vectors of dimension {} and {} chunk texts",
                meta.chunks,
                meta.dimension,
                vectors.len(),
                vectors.dimension(),
                chunks.len()
            )));
        }
        for e in vectors.entries() {
            match chunks.get(&e.chunk_id) {
                Some(c) if c.tier == e.tier => {}
                _ => {
                    return Err(SearchIndexError::Inconsistent(format!(
                        "no matching chunk text for {}",
                        e.chunk_id
                    )))
                }
            }
        }
        Ok(SearchIndex {
            meta,
            vectors,
            chunks,
        })
    }
}

async fn embed_chunks(
    embedder: &dyn Embedder,
    texts: &[String],
) -> Result<Vec<Option<EmbeddingVector>>, EmbedError> {
    match embedder.embed_batch(texts).await {
        Ok(vs) => Ok(vs.into_iter().map(Some).collect()),
        Err(EmbedError::ZeroVector) => {
            let mut out = Vec::with_capacity(texts.len());
            for t in texts {
                match embedder.embed_batch(std::slice::from_ref(t)).await {
                    Ok(mut v) => out.push(v.pop()),
                    Err(EmbedError::ZeroVector) => out.push(None),
                    Err(e) => return Err(e),
                }
            }
            Ok(out)
        }
        Err(e) => Err(e),
    }
}

/// Chunks and embeds every stored document, in manifest order.
pub async fn build_index(
    store: &CorpusStore,
    embedder: &dyn Embedder,
    policy: &ChunkPolicy,
) -> Result<(SearchIndex, BuildSummary), SearchIndexError> {
    let dim = embedder.dimension();
    let mut vectors = VectorIndex::new(dim);
    let mut chunks = HashMap::new();
    let mut summary = BuildSummary::default();
    for entry in store.entries() {
        let text = store.read_document(&entry.doc_id)?;
        let (_, body) = parse_header(&text).map_err(|source| SearchIndexError::Header {
            doc_id: entry.doc_id.clone(),
            source,
        })?;
        summary.documents += 1;
        let doc_chunks = chunk_text(&entry.doc_id, body, entry.tier, policy);
        for batch in doc_chunks.chunks(EMBED_BATCH) {
            let texts: Vec<String> = batch.iter().map(|c| c.text.clone()).collect();
            let embedded = embed_chunks(embedder, &texts).await?;
            for (chunk, vector) in batch.iter().zip(embedded) {
                let Some(vector) = vector else {
                    warn!(chunk_id = %chunk.chunk_id, "chunk has no embeddable tokens, skipped");
                    summary.skipped_chunks += 1;
                    continue;
                };
                if vector.dimension() != dim {
                    return Err(EmbedError::DimensionMismatch {
                        expected: dim,
                        got: vector.dimension(),
                    }
                    .into());
                }
                vectors.insert(IndexEntry {
                    chunk_id: chunk.chunk_id.clone(),
                    vector,
                    tier: entry.tier,
                    source_url: entry.source_url.clone(),
                })?;
                chunks.insert(chunk.chunk_id.clone(), chunk.clone());
                summary.chunks += 1;
            }
        }
    }
    info!(
        documents = summary.documents,
        chunks = summary.chunks,
        skipped = summary.skipped_chunks,
        "index built"
    );
    let meta = IndexMeta {
        embedder: embedder.describe(),
        dimension: dim,
        policy: *policy,
        documents: summary.documents,
        chunks: summary.chunks,
    };
    Ok((
        SearchIndex {
            meta,
            vectors,
            chunks,
        },
        summary,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TierRule;
    use crate::extract::{DocFormat, ExtractedDocument};
    use crate::index::{embed_hash, HashEmbedder};

    fn doc(url: &str, body: &str) -> ExtractedDocument {
        ExtractedDocument {
            doc_id: crate::extract::content_id(body.as_bytes()),
            source_url: url.into(),
            title: "t".into(),
            fetched_at: crate::extract::fetched_now(),
            format: DocFormat::Text,
            markdown_body: body.into(),
            extraction_tool: "test".into(),
            warnings: vec![],
        }
    }

    #[tokio::test]
    async fn build_save_load_query() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = CorpusStore::open(dir.path().join("corpus")).unwrap();
        let rules = vec![TierRule {
            url_prefix: "https://example.org/public/".into(),
            tier: SecurityTier::Public,
        }];
        store.put_document(&doc("https://example.org/public/a", "gold plated cavity tuning"), &rules).unwrap();
        store.put_document(&doc("https://example.org/secret/b", "magnet quench protection"), &rules).unwrap();
        store.put_document(&doc("https://example.org/public/c", "--- ***"), &rules).unwrap();

        let (idx, summary) = build_index(&store, &HashEmbedder::new(64), &ChunkPolicy::default()).await.unwrap();
        assert_eq!(summary, BuildSummary { documents: 3, chunks: 2, skipped_chunks: 1 });
        idx.save(&dir.path().join("index")).unwrap();
        let back = SearchIndex::load(&dir.path().join("index")).unwrap();
        assert_eq!(back.meta, idx.meta);
        assert_eq!(back.vectors(), idx.vectors());

        let q = embed_hash("magnet quench", 64).unwrap();
        let all = back.top_k(&q, 5, SecurityTier::Controlled).unwrap();
        let top = back.chunk(&all.hits[0].chunk_id).unwrap();
        assert_eq!(top.text, "magnet quench protection");
        assert_eq!(top.tier, SecurityTier::Controlled);
        let public = back.top_k(&q, 5, SecurityTier::Public).unwrap();
        assert!(public.hits.iter().all(|h| h.source_url.contains("/public/")));
    }

    #[test]
    fn load_detects_missing_chunk_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(SearchIndex::load(dir.path()), Err(SearchIndexError::Io { .. })));
    }
}
