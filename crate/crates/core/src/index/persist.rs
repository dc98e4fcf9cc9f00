//! `CFIX` binary layout, all integers little-endian:
//!
//! ```text
//! "CFIX" | version u16 | dimension u16 | count u64
//! count × ( chunk_id [72 bytes, NUL padded] | tier u8 | url_index u32 | dimension × f32 )
//! url_count u32 | url_count × ( len u32 | utf-8 bytes )
//! crc32 u32 over every preceding byte
//! ```

use std::collections::HashMap;
use std::path::Path;

use super::search::{IndexEntry, VectorIndex};
use super::EmbeddingVector;
use crate::corpus::replace_file;
use crate::SecurityTier;

pub const FORMAT_VERSION: u16 = 1;
pub const MAX_CHUNK_ID_BYTES: usize = 72;
const MAGIC: &[u8; 4] = b"CFIX";
const HEADER_LEN: usize = 4 + 2 + 2 + 8;

#[derive(Debug, thiserror::Error)]
pub enum IndexFileError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an index file")]
    BadMagic,
    #[error("unsupported index format version {0}")]
    UnsupportedVersion(u16),
    #[error("index file checksum mismatch (truncated or corrupt)")]
    Checksum,
    #[error("index file is malformed: {0}")]
    Malformed(String),
    #[error("cannot store index: {0}")]
    Unrepresentable(String),
}

pub fn encode_index(index: &VectorIndex) -> Result<Vec<u8>, IndexFileError> {
    let dim = u16::try_from(index.dimension())
        .map_err(|_| IndexFileError::Unrepresentable(format!("dimension {}", index.dimension())))?;
    let mut urls: Vec<&str> = Vec::new();
    let mut url_ids: HashMap<&str, u32> = HashMap::new();
    let record_len = MAX_CHUNK_ID_BYTES + 1 + 4 + 4 * index.dimension();
    let mut out = Vec::with_capacity(HEADER_LEN + record_len * index.len() + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&(index.len() as u64).to_le_bytes());
    for e in index.entries() {
        let id = e.chunk_id.as_bytes();
        if id.len() > MAX_CHUNK_ID_BYTES || id.contains(&0) {
            return Err(IndexFileError::Unrepresentable(format!("chunk id `{}`", e.chunk_id)));
        }
        out.extend_from_slice(id);
        out.resize(out.len() + MAX_CHUNK_ID_BYTES - id.len(), 0);
        out.push(e.tier.as_u8());
        let next = urls.len() as u32;
        let url_id = *url_ids.entry(e.source_url.as_str()).or_insert_with(|| {
            urls.push(e.source_url.as_str());
            next
        });
        out.extend_from_slice(&url_id.to_le_bytes());
        for x in e.vector.values() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out.extend_from_slice(&(urls.len() as u32).to_le_bytes());
    for u in urls {
        out.extend_from_slice(&(u.len() as u32).to_le_bytes());
        out.extend_from_slice(u.as_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexFileError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| IndexFileError::Malformed("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, IndexFileError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, IndexFileError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, IndexFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, IndexFileError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_index(bytes: &[u8]) -> Result<VectorIndex, IndexFileError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(IndexFileError::BadMagic);
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(IndexFileError::Checksum);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(IndexFileError::UnsupportedVersion(version));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(IndexFileError::Checksum);
    }

    let mut r = Reader { buf: body, pos: 6 };
    let dim = r.u16()? as usize;
    let count = r.u64()?;
    let record_len = MAX_CHUNK_ID_BYTES + 1 + 4 + 4 * dim;
    let count = usize::try_from(count)
        .ok()
        .filter(|c| c.checked_mul(record_len).is_some_and(|n| n <= body.len()))
        .ok_or_else(|| IndexFileError::Malformed(format!("entry count {count}")))?;
    let mut raw = Vec::with_capacity(count);
    for _ in 0..count {
        let id = r.take(MAX_CHUNK_ID_BYTES)?;
        let id_len = id.iter().position(|&b| b == 0).unwrap_or(MAX_CHUNK_ID_BYTES);
        let chunk_id = std::str::from_utf8(&id[..id_len])
            .map_err(|_| IndexFileError::Malformed("chunk id is not utf-8".into()))?
            .to_string();
        let tier_byte = r.u8()?;
        let tier = SecurityTier::from_u8(tier_byte)
            .ok_or_else(|| IndexFileError::Malformed(format!("tier byte {tier_byte}")))?;
        let url_id = r.u32()?;
        let values: Vec<f32> = r
            .take(4 * dim)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        raw.push((chunk_id, tier, url_id, values));
    }
    let url_count = r.u32()? as usize;
    let mut urls = Vec::with_capacity(url_count.min(body.len()));
    for _ in 0..url_count {
        let len = r.u32()? as usize;
        let s = std::str::from_utf8(r.take(len)?)
            .map_err(|_| IndexFileError::Malformed("url is not utf-8".into()))?;
        urls.push(s.to_string());
    }
    if r.pos != body.len() {
        return Err(IndexFileError::Malformed("trailing bytes".into()));
    }
    let mut index = VectorIndex::new(dim);
    for (chunk_id, tier, url_id, values) in raw {
        let source_url = urls
            .get(url_id as usize)
            .ok_or_else(|| IndexFileError::Malformed(format!("url index {url_id}")))?
            .clone();
        index
            .insert(IndexEntry {
                chunk_id,
                vector: EmbeddingVector::from_unit(values),
                tier,
                source_url,
            })
            .map_err(|e| IndexFileError::Malformed(e.to_string()))?;
    }
    Ok(index)
}

pub fn persist_index(index: &VectorIndex, path: &Path) -> Result<(), IndexFileError> {
    let bytes = encode_index(index)?;
    replace_file(path, &bytes)?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<VectorIndex, IndexFileError> {
    decode_index(&std::fs::read(path)?)
}
