use chrono::{DateTime, SecondsFormat, Utc};

use super::{DocFormat, ExtractedDocument};

/// Metadata carried in the front-matter header of every stored document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeaderFields {
    pub source_url: String,
    pub title: String,
    pub fetched_at: DateTime<Utc>,
    pub format: DocFormat,
    pub doc_id: String,
}

impl From<&ExtractedDocument> for HeaderFields {
    fn from(doc: &ExtractedDocument) -> Self {
        HeaderFields {
            source_url: doc.source_url.clone(),
            title: doc.title.clone(),
            fetched_at: doc.fetched_at,
            format: doc.format,
            doc_id: doc.doc_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HeaderError {
    #[error("document does not start with a metadata header")]
    MissingHeader,
    #[error("expected header key `{expected}` on line {line}")]
    UnexpectedKey { expected: &'static str, line: usize },
    #[error("invalid value for `{key}`: {value}")]
    InvalidValue { key: &'static str, value: String },
    #[error("unterminated header")]
    Unterminated,
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Renders the header followed by the Markdown body.
pub fn render_header(doc: &ExtractedDocument) -> String {
    let mut out = String::with_capacity(doc.markdown_body.len() + 256);
    out.push_str("---\n");
    out.push_str("source_url: ");
    out.push_str(&doc.source_url);
    out.push_str("\ntitle: ");
    out.push_str(&doc.title);
    out.push_str("\nfetched_at: ");
    out.push_str(&format_timestamp(&doc.fetched_at));
    out.push_str("\nformat: ");
    out.push_str(doc.format.as_str());
    out.push_str("\ndoc_id: ");
    out.push_str(&doc.doc_id);
    out.push_str("\n---\n\n");
    out.push_str(&doc.markdown_body);
    out
}

const KEYS: [&str; 5] = ["source_url", "title", "fetched_at", "format", "doc_id"];

/// Parses a rendered document back into its header fields and body.
pub fn parse_header(text: &str) -> Result<(HeaderFields, &str), HeaderError> {
    let rest = text.strip_prefix("---\n").ok_or(HeaderError::MissingHeader)?;
    let mut values = [""; 5];
    let mut cursor = rest;
    for (i, key) in KEYS.iter().enumerate() {
        let (line, tail) = cursor.split_once('\n').ok_or(HeaderError::Unterminated)?;
        values[i] = line
            .strip_prefix(key)
            .and_then(|l| l.strip_prefix(": ").or_else(|| (l == ":").then_some("")))
            .ok_or(HeaderError::UnexpectedKey {
                expected: key,
                line: i + 2,
            })?;
        cursor = tail;
    }
    let body = cursor
        .strip_prefix("---\n\n")
        .or_else(|| (cursor == "---\n").then_some(""))
        .ok_or(HeaderError::Unterminated)?;

    let fetched_at = DateTime::parse_from_rfc3339(values[2])
        .map_err(|_| HeaderError::InvalidValue {
            key: "fetched_at",
            value: values[2].to_string(),
        })?
        .with_timezone(&Utc);
    let format = values[3].parse().map_err(|_| HeaderError::InvalidValue {
        key: "format",
        value: values[3].to_string(),
    })?;
    Ok((
        HeaderFields {
            source_url: values[0].to_string(),
            title: values[1].to_string(),
            fetched_at,
            format,
            doc_id: values[4].to_string(),
        },
        body,
    ))
}
