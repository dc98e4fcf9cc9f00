/// Approximate token count shared by chunking and every budget check.
///
/// Text is split on Unicode whitespace and each piece costs
/// `ceil(bytes / 4)` tokens. This is not any model's tokenizer; it only has
/// to be applied consistently.
pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().map(piece_tokens).sum()
}

/// Token cost of a single whitespace-free piece.
pub fn piece_tokens(piece: &str) -> usize {
    piece.len().div_ceil(4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_arithmetic() {
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("ab cd"), 2);
        assert_eq!(count_tokens("internationalization"), 5);
        assert_eq!(count_tokens("  a\u{3000}bcdef\n\tg "), 1 + 2 + 1);
        assert_eq!(count_tokens("\u{e9}\u{e9}\u{e9}"), 2);
    }
}
