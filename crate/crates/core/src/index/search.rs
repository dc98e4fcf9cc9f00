use std::cmp::Ordering;
use std::collections::HashMap;

use serde::Serialize;

use super::{dot, EmbeddingVector};
use crate::SecurityTier;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub chunk_id: String,
    pub vector: EmbeddingVector,
    pub tier: SecurityTier,
    pub source_url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IndexError {
    #[error("vector dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("chunk `{0}` is already indexed")]
    DuplicateChunk(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    Ok,
    /// The index holds no entries at all.
    EmptyIndex,
    /// Entries exist but none is at or below the tier ceiling.
    NoEligible,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hit {
    pub chunk_id: String,
    pub score: f64,
    pub tier: SecurityTier,
    pub source_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopK {
    pub status: SearchStatus,
    /// Entries at or below the tier ceiling.
    pub eligible: usize,
    pub hits: Vec<Hit>,
}

/// Exact cosine index over one fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dimension: usize,
    entries: Vec<IndexEntry>,
    norms: Vec<f64>,
    positions: HashMap<String, usize>,
}

impl VectorIndex {
    pub fn new(dimension: usize) -> Self {
        VectorIndex {
            dimension,
            entries: Vec::new(),
            norms: Vec::new(),
            positions: HashMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn get(&self, chunk_id: &str) -> Option<&IndexEntry> {
        self.positions.get(chunk_id).map(|&i| &self.entries[i])
    }

    pub fn insert(&mut self, entry: IndexEntry) -> Result<(), IndexError> {
        if entry.vector.dimension() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                got: entry.vector.dimension(),
            });
        }
        if self.positions.contains_key(&entry.chunk_id) {
            return Err(IndexError::DuplicateChunk(entry.chunk_id));
        }
        self.positions.insert(entry.chunk_id.clone(), self.entries.len());
        self.norms.push(entry.vector.norm());
        self.entries.push(entry);
        Ok(())
    }

    /// Exact scan: cosine score descending, ties by ascending chunk id.
    pub fn top_k(
        &self,
        query: &EmbeddingVector,
        k: usize,
        tier_ceiling: SecurityTier,
    ) -> Result<TopK, IndexError> {
        assert!(k >= 1, "k must be at least 1");
        if query.dimension() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                got: query.dimension(),
            });
        }
        if self.entries.is_empty() {
            return Ok(TopK {
                status: SearchStatus::EmptyIndex,
                eligible: 0,
                hits: Vec::new(),
            });
        }
        let qn = query.norm();
        let mut scored: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.tier <= tier_ceiling)
            .map(|(i, e)| (dot(query.values(), e.vector.values()) / (qn * self.norms[i]), i))
            .collect();
        let eligible = scored.len();
        let order = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            b.0.total_cmp(&a.0)
                .then_with(|| self.entries[a.1].chunk_id.cmp(&self.entries[b.1].chunk_id))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);
        let hits: Vec<Hit> = scored
            .into_iter()
            .map(|(score, i)| {
                let e = &self.entries[i];
                Hit {
                    chunk_id: e.chunk_id.clone(),
                    score,
                    tier: e.tier,
                    source_url: e.source_url.clone(),
                }
            })
            .collect();
        debug_assert!(hits.iter().all(|h| h.tier <= tier_ceiling));
        Ok(TopK {
            status: if eligible == 0 {
                SearchStatus::NoEligible
            } else {
                SearchStatus::Ok
            },
            eligible,
            hits,
        })
    }
}
