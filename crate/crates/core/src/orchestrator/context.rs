use serde::Serialize;

use super::provenance_line;
use crate::backends::count_tokens;
use crate::SecurityTier;

/// Budget charged for each chunk's provenance line, whatever its length.
pub const PROVENANCE_TOKENS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContextChunk {
    pub chunk_id: String,
    pub source_url: String,
    pub text: String,
    pub token_count: usize,
    pub tier: SecurityTier,
}

impl ContextChunk {
    pub fn new(chunk_id: &str, source_url: &str, text: &str, tier: SecurityTier) -> Self {
        ContextChunk {
            chunk_id: chunk_id.into(),
            source_url: source_url.into(),
            text: text.into(),
            token_count: count_tokens(text),
            tier,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledContext {
    pub text: String,
    /// Leading prefix of the ranked input that made it in.
    pub included: usize,
    /// Chunk tokens, framing charges and question tokens.
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContextError {
    #[error("context budget of {budget} tokens cannot hold {needed} tokens")]
    ContextBudgetTooSmall { budget: usize, needed: usize },
}

pub(crate) fn question_line(question: &str) -> String {
    format!("Question: {question}")
}

/// Greedily frames ranked chunks until the next one would overflow
/// `budget`, then appends the question as the final line.
pub fn assemble_context(
    ranked: &[ContextChunk],
    budget: usize,
    question: &str,
) -> Result<AssembledContext, ContextError> {
    let q_line = question_line(question);
    let mut total = count_tokens(&q_line);
    let mut included = 0;
    for c in ranked {
        let cost = c.token_count + PROVENANCE_TOKENS;
        if total + cost > budget {
            break;
        }
        total += cost;
        included += 1;
    }
    if total > budget || (included == 0 && !ranked.is_empty()) {
        let needed = total + ranked.first().map_or(0, |c| c.token_count + PROVENANCE_TOKENS);
        return Err(ContextError::ContextBudgetTooSmall { budget, needed });
    }
    let mut text = String::new();
    for c in &ranked[..included] {
        text.push_str(&provenance_line(&c.chunk_id, &c.source_url));
        text.push('\n');
        text.push_str(c.text.trim_end());
        text.push_str("\n\n");
    }
    text.push_str(&q_line);
    Ok(AssembledContext {
        text,
        included,
        tokens: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::parse_provenance_line;

    fn chunk(id: &str, tokens: usize) -> ContextChunk {
        ContextChunk::new(id, &format!("https://example.org/{id}"), &vec!["w"; tokens].join(" "), SecurityTier::Public)
    }

    #[test]
    fn two_of_three_fit_in_250() {
        let ranked = [chunk("a", 100), chunk("b", 100), chunk("c", 100)];
        let ctx = assemble_context(&ranked, 250, "q").unwrap();
        // Oracle: 100+8 + 100+8 + "Question: q" (3+1) = 220 <= 250; one more chunk is 328.
        assert_eq!(ctx.included, 2);
        assert_eq!(ctx.tokens, 220);
        let ids: Vec<&str> = ctx.text.lines().filter_map(parse_provenance_line).map(|(id, _)| id).collect();
        assert_eq!(ids, ["a", "b"]);
        assert_eq!(ctx.text.lines().last(), Some("Question: q"));
    }

    #[test]
    fn too_small_for_top_chunk() {
        let ranked = [chunk("a", 100)];
        assert!(matches!(
            assemble_context(&ranked, 10, "q"),
            Err(ContextError::ContextBudgetTooSmall { budget: 10, .. })
        ));
    }

    #[test]
    fn huge_budget_takes_everything_in_order() {
        let ranked: Vec<_> = (0..5).map(|i| chunk(&format!("c{i}"), 10 + i)).collect();
        let ctx = assemble_context(&ranked, 1_000_000, "what").unwrap();
        assert_eq!(ctx.included, 5);
        let ids: Vec<&str> = ctx.text.lines().filter_map(parse_provenance_line).map(|(id, _)| id).collect();
        assert_eq!(ids, ["c0", "c1", "c2", "c3", "c4"]);
    }

    #[test]
    fn no_chunks_is_just_the_question() {
        let ctx = assemble_context(&[], 100, "anything?").unwrap();
        assert_eq!(ctx.text, "Question: anything?");
        assert_eq!(ctx.included, 0);
    }
}
