use serde::{Deserialize, Serialize};

use crate::backends::piece_tokens;
use crate::extract::ExtractedDocument;
use crate::SecurityTier;

/// A bounded-token span of a document body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub text: String,
    pub token_count: usize,
    pub tier: SecurityTier,
    /// Byte offsets `[start, end)` into the document body.
    pub char_span: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkPolicy {
    #[serde(default = "default_target")]
    pub target_tokens: usize,
    #[serde(default = "default_overlap")]
    pub overlap_tokens: usize,
}

fn default_target() -> usize {
    512
}
fn default_overlap() -> usize {
    64
}

impl Default for ChunkPolicy {
    fn default() -> Self {
        ChunkPolicy {
            target_tokens: default_target(),
            overlap_tokens: default_overlap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("overlap_tokens ({overlap}) must be smaller than target_tokens ({target})")]
pub struct ChunkPolicyError {
    pub target: usize,
    pub overlap: usize,
}

impl ChunkPolicy {
    pub fn new(target_tokens: usize, overlap_tokens: usize) -> Result<Self, ChunkPolicyError> {
        let p = ChunkPolicy {
            target_tokens,
            overlap_tokens,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ChunkPolicyError> {
        if self.overlap_tokens >= self.target_tokens {
            return Err(ChunkPolicyError {
                target: self.target_tokens,
                overlap: self.overlap_tokens,
            });
        }
        Ok(())
    }
}

/// A contiguous slice of the body: one whitespace-delimited piece (or a
/// fragment of an oversized one) plus the whitespace that follows it.
#[derive(Debug, Clone, Copy)]
struct Unit {
    start: usize,
    weight: usize,
    /// Piece begins a Markdown heading line.
    heading: bool,
    /// Whitespace before the piece holds a blank line.
    paragraph: bool,
}

fn is_heading_line(line: &str) -> bool {
    let hashes = line.bytes().take_while(|&b| b == b'#').count();
    (1..=6).contains(&hashes)
        && line[hashes..].chars().next().is_none_or(char::is_whitespace)
}

fn units(body: &str, max_weight: usize) -> Vec<Unit> {
    let mut out = Vec::new();
    let mut pos = 0;
    let mut gap = "";
    let mut at_line_start = true;
    while pos < body.len() {
        let rest = &body[pos..];
        let ws_len = rest.find(|c: char| !c.is_whitespace()).unwrap_or(rest.len());
        if ws_len > 0 {
            gap = &rest[..ws_len];
            if gap.contains('\n') {
                at_line_start = true;
            }
            if out.is_empty() {
                // Leading whitespace rides along with the first piece.
                if ws_len == rest.len() {
                    out.push(Unit {
                        start: 0,
                        weight: 0,
                        heading: false,
                        paragraph: false,
                    });
                }
            }
            pos += ws_len;
            continue;
        }
        let piece_len = rest.find(char::is_whitespace).unwrap_or(rest.len());
        let piece = &rest[..piece_len];
        let line_start = at_line_start || pos == 0;
        let heading = line_start && {
            let line_end = rest.find('\n').unwrap_or(rest.len());
            is_heading_line(&rest[..line_end])
        };
        let paragraph = gap.matches('\n').count() >= 2;
        let first_start = if out.is_empty() { 0 } else { pos };
        if piece_tokens(piece) <= max_weight {
            out.push(Unit {
                start: first_start,
                weight: piece_tokens(piece),
                heading,
                paragraph,
            });
        } else {
            // Hard cut an oversized piece at char boundaries.
            let max_bytes = max_weight * 4;
            let mut off = 0;
            let mut first = true;
            while off < piece.len() {
                let mut end = (off + max_bytes).min(piece.len());
                while !piece.is_char_boundary(end) {
                    end -= 1;
                }
                if end == off {
                    // A single char wider than the limit.
                    end = off + piece[off..].chars().next().map_or(1, char::len_utf8);
                }
                out.push(Unit {
                    start: if first { first_start } else { pos + off },
                    weight: piece_tokens(&piece[off..end]),
                    heading: first && heading,
                    paragraph: first && paragraph,
                });
                first = false;
                off = end;
            }
        }
        at_line_start = false;
        gap = "";
        pos += piece_len;
    }
    out
}

/// Splits `body` into overlapping chunks.
///
/// Each chunk is cut at the last heading that fits, else the last paragraph
/// break, else as late as the token budget allows. Consecutive chunks share
/// the longest run of whole units weighing at most `overlap_tokens`.
pub fn chunk_text(doc_id: &str, body: &str, tier: SecurityTier, policy: &ChunkPolicy) -> Vec<Chunk> {
    assert!(policy.validate().is_ok(), "invalid chunk policy");
    if body.is_empty() {
        return Vec::new();
    }
    let target = policy.target_tokens;
    let overlap = policy.overlap_tokens;
    let units = units(body, target - overlap);
    let n = units.len();
    let start_of = |i: usize| if i == n { body.len() } else { units[i].start };

    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut a = 0;
    let mut prev_end = 0;
    loop {
        let mut weight = 0;
        let mut max_end = a;
        while max_end < n && weight + units[max_end].weight <= target {
            weight += units[max_end].weight;
            max_end += 1;
        }
        let b = if max_end == n {
            n
        } else {
            // Candidate cuts must add new text and carry more than the overlap.
            let min_weight_ok = |b: usize| {
                b > prev_end && units[a..b].iter().map(|u| u.weight).sum::<usize>() > overlap
            };
            let last = |pred: &dyn Fn(&Unit) -> bool| {
                (a + 1..=max_end)
                    .rev()
                    .find(|&b| b < n && pred(&units[b]) && min_weight_ok(b))
            };
            last(&|u| u.heading)
                .or_else(|| last(&|u| u.paragraph))
                .unwrap_or(max_end)
        };
        spans.push((a, b));
        if b == n {
            break;
        }
        let mut s = b;
        let mut w = 0;
        while s > a + 1 && w + units[s - 1].weight <= overlap {
            w += units[s - 1].weight;
            s -= 1;
        }
        prev_end = b;
        a = s;
    }

    let width = spans.len().saturating_sub(1).to_string().len().max(4);
    spans
        .iter()
        .enumerate()
        .map(|(seq, &(a, b))| {
            let (start, end) = (start_of(a), start_of(b));
            let text = body[start..end].to_string();
            Chunk {
                chunk_id: format!("{doc_id}#{seq:0width$}"),
                doc_id: doc_id.to_string(),
                token_count: crate::backends::count_tokens(&text),
                text,
                tier,
                char_span: (start, end),
            }
        })
        .collect()
}

pub fn chunk_document(doc: &ExtractedDocument, tier: SecurityTier, policy: &ChunkPolicy) -> Vec<Chunk> {
    chunk_text(&doc.doc_id, &doc.markdown_body, tier, policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::count_tokens;

    fn policy(t: usize, o: usize) -> ChunkPolicy {
        ChunkPolicy::new(t, o).unwrap()
    }

    /// Independent reconstruction: drop the shared prefix of each chunk.
    fn reconstruct(chunks: &[Chunk]) -> String {
        let mut out = String::new();
        let mut end = 0usize;
        for c in chunks {
            let skip = end.saturating_sub(c.char_span.0);
            out.push_str(&c.text[skip..]);
            end = c.char_span.1;
        }
        out
    }

    #[test]
    fn small_body_is_one_chunk() {
        let body = vec!["tok"; 100].join(" ");
        let c = chunk_text("d", &body, SecurityTier::Public, &ChunkPolicy::default());
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].text, body);
        assert_eq!(c[0].chunk_id, "d#0000");
        assert_eq!(c[0].char_span, (0, body.len()));
        assert_eq!(c[0].token_count, 100);
    }

    #[test]
    fn uniform_thousand_tokens() {
        let body = vec!["tok"; 1000].join(" ");
        let c = chunk_text("d", &body, SecurityTier::Public, &policy(512, 64));
        // Oracle: windows of 512 advancing by 512 - 64.
        assert_eq!(c.iter().map(|c| c.token_count).collect::<Vec<_>>(), vec![512, 512, 104]);
        for pair in c.windows(2) {
            let shared = &body[pair[1].char_span.0..pair[0].char_span.1];
            assert_eq!(count_tokens(shared), 64);
        }
        assert_eq!(reconstruct(&c), body);
        assert!(c.windows(2).all(|w| w[0].chunk_id < w[1].chunk_id));
    }

    #[test]
    fn cuts_prefer_headings() {
        let section = |h: &str| format!("## {h}\n\n{}\n\n{}\n\n", vec!["w"; 30].join(" "), vec!["w"; 30].join(" "));
        let body = format!("{}{}{}", section("One"), section("Two"), section("Three"));
        let c = chunk_text("d", &body, SecurityTier::Public, &policy(80, 8));
        // Heading boundaries in the body.
        let headings: Vec<usize> = body.match_indices("## ").map(|(i, _)| i).collect();
        assert_eq!(headings.len(), 3);
        // Every non-final chunk ends exactly at a heading.
        for ch in &c[..c.len() - 1] {
            assert!(headings.contains(&ch.char_span.1), "cut at {}", ch.char_span.1);
        }
        assert_eq!(reconstruct(&c), body);
    }

    #[test]
    fn paragraphs_beat_hard_cuts() {
        let para = vec!["w"; 40].join(" ");
        let body = format!("{para}\n\n{para}\n\n{para}");
        let c = chunk_text("d", &body, SecurityTier::Public, &policy(100, 10));
        let breaks: Vec<usize> = body.match_indices("\n\n").map(|(i, _)| i + 2).collect();
        assert!(breaks.contains(&c[0].char_span.1));
        assert_eq!(reconstruct(&c), body);
    }

    #[test]
    fn oversized_piece_is_hard_cut() {
        let body = format!("intro {} outro", "x".repeat(5000));
        let c = chunk_text("d", &body, SecurityTier::Public, &policy(100, 20));
        assert!(c.len() > 1);
        assert!(c.iter().all(|c| c.token_count <= 100));
        assert_eq!(reconstruct(&c), body);
    }

    #[test]
    fn leading_and_only_whitespace() {
        let c = chunk_text("d", "   ", SecurityTier::Public, &ChunkPolicy::default());
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].text, "   ");
        let c = chunk_text("d", "\n\n# Title\nbody", SecurityTier::Public, &ChunkPolicy::default());
        assert_eq!(reconstruct(&c), "\n\n# Title\nbody");
    }

    #[test]
    fn heading_detection() {
        assert!(is_heading_line("# a"));
        assert!(is_heading_line("###### a"));
        assert!(!is_heading_line("####### a"));
        assert!(!is_heading_line("#hashtag"));
    }

    #[test]
    fn policy_rejects_overlap_not_below_target() {
        assert!(ChunkPolicy::new(64, 64).is_err());
        assert!(ChunkPolicy::new(65, 64).is_ok());
    }
}
