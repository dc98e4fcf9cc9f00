use std::hash::Hasher;

use async_trait::async_trait;
use fnv::FnvHasher;

use super::{EmbedError, Embedder, EmbeddingVector};

pub const DEFAULT_DIMENSION: usize = 384;

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Feature-hashed bag of unigrams and bigrams.
///
/// Each feature is FNV-1a 64 hashed; the low bits modulo `d` pick the slot
/// and bit 63 picks the sign.
pub fn embed_hash(text: &str, d: usize) -> Result<EmbeddingVector, EmbedError> {
    assert!(d > 0, "dimension must be positive");
    let words = words(text);
    if words.is_empty() {
        return Err(EmbedError::ZeroVector);
    }
    let mut acc = vec![0f64; d];
    let mut add = |feature: &str| {
        let h = fnv1a(feature.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        acc[(h % d as u64) as usize] += sign;
    };
    for w in &words {
        add(w);
    }
    for pair in words.windows(2) {
        add(&format!("{} {}", pair[0], pair[1]));
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok(EmbeddingVector::from_unit(
        acc.iter().map(|x| (x / norm) as f32).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        HashEmbedder { dimension }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(DEFAULT_DIMENSION)
    }
}

#[async_trait]
impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn describe(&self) -> String {
        format!("hash-fnv1a:{}", self.dimension)
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts.iter().map(|t| embed_hash(t, self.dimension)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::cosine;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn deterministic_and_unit_norm() {
        let t = "Beam energy scan at 200 GeV";
        let a = embed_hash(t, 384).unwrap();
        let b = embed_hash(t, 384).unwrap();
        assert_eq!(
            a.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert!((a.norm() - 1.0).abs() < 1e-6);
        assert!((cosine(&a, &b) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pinned_slots() {
        // "alpha" alone: one feature, one slot at full weight.
        let h = fnv1a(b"alpha");
        let v = embed_hash("ALPHA!", 384).unwrap();
        let slot = (h % 384) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        assert_eq!(v.values()[slot], sign);
        assert_eq!(v.values().iter().filter(|x| **x != 0.0).count(), 1);
    }

    #[test]
    fn similar_text_scores_higher() {
        let a = embed_hash("alpha beta", 384).unwrap();
        let b = embed_hash("alpha beta", 384).unwrap();
        let c = embed_hash("gamma delta", 384).unwrap();
        // Oracle: recompute the dot products from raw values.
        let raw = |x: &EmbeddingVector, y: &EmbeddingVector| -> f64 {
            x.values().iter().zip(y.values()).map(|(p, q)| *p as f64 * *q as f64).sum()
        };
        assert!(raw(&a, &b) > raw(&a, &c));
        assert!(cosine(&a, &b) > cosine(&a, &c));
    }

    #[test]
    fn no_tokens_is_zero_vector() {
        assert_eq!(embed_hash("  --- !!", 16), Err(EmbedError::ZeroVector));
    }
}
