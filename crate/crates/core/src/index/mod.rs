//! Chunking, embedding and exact tier-filtered vector search.

mod build;
mod chunk;
mod hash;
mod persist;
mod search;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

pub use self::build::{
    build_index, BuildSummary, IndexMeta, SearchIndex, SearchIndexError, CHUNKS_FILE, META_FILE,
    VECTORS_FILE,
};
pub use self::chunk::{chunk_document, chunk_text, Chunk, ChunkPolicy, ChunkPolicyError};
pub use self::hash::{embed_hash, HashEmbedder, DEFAULT_DIMENSION};
pub use self::persist::{
    decode_index, encode_index, load_index, persist_index, IndexFileError, FORMAT_VERSION,
    MAX_CHUNK_ID_BYTES,
};
pub use self::search::{Hit, IndexEntry, IndexError, SearchStatus, TopK, VectorIndex};

/// A unit-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    /// Scales `values` to unit L2 norm.
    pub fn normalized(values: Vec<f32>) -> Result<Self, EmbedError> {
        let norm = values.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbedError::ZeroVector);
        }
        Ok(EmbeddingVector {
            values: values.iter().map(|&x| (f64::from(x) / norm) as f32).collect(),
        })
    }

    /// Wraps values already known to be unit length, e.g. read back from disk.
    pub(crate) fn from_unit(values: Vec<f32>) -> Self {
        EmbeddingVector { values }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Cosine similarity, computed in f64.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let d = dot(&a.values, &b.values);
    d / (a.norm() * b.norm())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EmbedError {
    #[error("text has no embeddable tokens")]
    ZeroVector,
    #[error("embedding dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding backend failed: {0}")]
    Backend(String),
}

/// Turns texts into vectors of one fixed dimension.
#[async_trait]
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    /// Stable identifier stored alongside an index so queries use the same model.
    fn describe(&self) -> String;
    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;
}
