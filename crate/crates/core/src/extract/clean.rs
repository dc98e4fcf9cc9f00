use unicode_normalization::UnicodeNormalization;

/// Normalizes extracted text before it is stored.
///
/// Line endings become LF, control characters other than `\n`/`\t` are
/// dropped, text is NFC-normalized, trailing whitespace is stripped from
/// every line, runs of three or more blank lines shrink to one, and the
/// result is trimmed. The function is idempotent.
pub fn clean_text(raw: &str) -> String {
    let unified = raw.replace("\r\n", "\n").replace('\r', "\n");
    let stripped: String = unified
        .chars()
        .filter(|&c| c == '\n' || c == '\t' || !c.is_control())
        .collect();
    // NFC after control removal: removing a control character can bring a
    // base character and a combining mark together.
    let composed: String = stripped.nfc().collect();

    let mut out = String::with_capacity(composed.len());
    let mut blank_run = 0usize;
    let mut pending_blanks = 0usize;
    for line in composed.split('\n') {
        let line = line.trim_end();
        if line.is_empty() {
            blank_run += 1;
            continue;
        }
        if blank_run > 0 {
            pending_blanks = if blank_run >= 3 { 1 } else { blank_run };
        }
        if !out.is_empty() {
            out.push('\n');
            for _ in 0..pending_blanks {
                out.push('\n');
            }
        }
        pending_blanks = 0;
        blank_run = 0;
        out.push_str(line);
    }
    out.trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapses_blank_runs_and_trims() {
        assert_eq!(clean_text("a\r\n\r\n\r\n\r\nb "), "a\n\nb");
    }

    #[test]
    fn keeps_short_blank_runs() {
        assert_eq!(clean_text("a\n\nb"), "a\n\nb");
        assert_eq!(clean_text("a\n\n\nb"), "a\n\n\nb");
        assert_eq!(clean_text("a\n\n\n\n\n\nb"), "a\n\nb");
    }

    #[test]
    fn strips_control_characters() {
        assert_eq!(clean_text("x\u{0000}y"), "xy");
        assert_eq!(clean_text("a\tb\u{7f}\u{85}"), "a\tb");
    }

    #[test]
    fn composes_to_nfc() {
        assert_eq!(clean_text("e\u{0301}"), "\u{00e9}");
        assert_eq!(clean_text("e\u{0000}\u{0301}"), "\u{00e9}");
    }

    #[test]
    fn whitespace_only_lines_count_as_blank() {
        assert_eq!(clean_text("a  \n \t\n\u{a0}\n\nb\t"), "a\n\nb");
    }

    #[test]
    fn lone_carriage_returns() {
        assert_eq!(clean_text("a\rb"), "a\nb");
    }

    #[test]
    fn empty_and_blank_input() {
        assert_eq!(clean_text(""), "");
        assert_eq!(clean_text(" \n\n \r\n"), "");
    }
}
