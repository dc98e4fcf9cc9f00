//! Turning fetched bytes into cleaned Markdown with provenance.

mod clean;
mod convert;
mod header;
mod html;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use url::Url;

use crate::crawl::{DocExtension, FetchedResource, TargetClass};

pub use self::clean::clean_text;
pub use self::convert::{
    convert_external, Conversion, ConvertError, ConverterSpec, Converters, OutputKind,
    DEFAULT_CONVERTER_PROCESSES,
};
pub use self::header::{format_timestamp, parse_header, render_header, HeaderError, HeaderFields};
pub use self::html::{decode_html, html_to_markdown, Html5Ever, HtmlContent, HtmlParser};

/// Source format of a stored document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DocFormat {
    Html,
    Document(DocExtension),
    /// Plain text or Markdown ingested from a local directory.
    Text,
}

impl DocFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            DocFormat::Html => "html",
            DocFormat::Document(ext) => ext.as_str(),
            DocFormat::Text => "text",
        }
    }
}

impl fmt::Display for DocFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DocFormat {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        if s == "html" {
            Ok(DocFormat::Html)
        } else if s == "text" {
            Ok(DocFormat::Text)
        } else {
            s.parse().map(DocFormat::Document)
        }
    }
}

impl Serialize for DocFormat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for DocFormat {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse()
            .map_err(|_| serde::de::Error::custom(format!("unknown format `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedDocument {
    /// Lowercase hex SHA-256 of the raw fetched bytes.
    pub doc_id: String,
    pub source_url: String,
    pub title: String,
    pub fetched_at: DateTime<Utc>,
    pub format: DocFormat,
    pub markdown_body: String,
    pub extraction_tool: String,
    pub warnings: Vec<String>,
}

pub fn content_id(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Current time at the header's one-second resolution.
pub fn fetched_now() -> DateTime<Utc> {
    Utc::now().trunc_subsecs(0)
}

/// Header values are single-line.
fn header_value(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, thiserror::Error)]
pub enum ExtractError {
    /// Nothing survived cleaning. Links found on the page are still
    /// returned so the crawl can continue past it.
    #[error("no text content after cleaning")]
    EmptyContent { outlinks: Vec<String> },
    #[error(transparent)]
    Convert(#[from] ConvertError),
    #[error("target is not extractable")]
    Unsupported,
}

pub const HTML_TOOL: &str = "html5ever";

/// Extracts an HTML page from one parse: the document plus raw outlinks.
pub fn extract_html(
    bytes: &[u8],
    url: &Url,
    content_type: Option<&str>,
    fetched_at: DateTime<Utc>,
) -> Result<(ExtractedDocument, Vec<String>), ExtractError> {
    extract_html_with(&Html5Ever, bytes, url, content_type, fetched_at)
}

pub fn extract_html_with(
    parser: &dyn HtmlParser,
    bytes: &[u8],
    url: &Url,
    content_type: Option<&str>,
    fetched_at: DateTime<Utc>,
) -> Result<(ExtractedDocument, Vec<String>), ExtractError> {
    let (text, warning) = decode_html(bytes, content_type);
    let content = html_to_markdown(parser, &text);
    let body = clean_text(&content.markdown);
    if body.is_empty() {
        return Err(ExtractError::EmptyContent {
            outlinks: content.outlinks,
        });
    }
    let doc = ExtractedDocument {
        doc_id: content_id(bytes),
        source_url: url.to_string(),
        title: header_value(&clean_text(&content.title)),
        fetched_at,
        format: DocFormat::Html,
        markdown_body: body,
        extraction_tool: HTML_TOOL.to_string(),
        warnings: warning.into_iter().collect(),
    };
    Ok((doc, content.outlinks))
}

/// First Markdown heading of a body, else the URL's file name.
fn document_title(body: &str, url: &Url) -> String {
    body.lines()
        .find_map(|l| {
            let t = l.trim_start_matches('#');
            (t.len() < l.len() && t.starts_with(' ')).then(|| t.trim().to_string())
        })
        .unwrap_or_else(|| {
            url.path_segments()
                .and_then(|mut s| s.next_back())
                .unwrap_or("")
                .to_string()
        })
}

/// Runs the configured converter for a linked document.
pub async fn extract_document(
    bytes: &[u8],
    ext: DocExtension,
    url: &Url,
    converters: &Converters,
    fetched_at: DateTime<Utc>,
) -> Result<ExtractedDocument, ExtractError> {
    let conv = convert_external(bytes, ext, converters).await?;
    let body = clean_text(&conv.text);
    if body.is_empty() {
        return Err(ExtractError::EmptyContent { outlinks: vec![] });
    }
    Ok(ExtractedDocument {
        doc_id: content_id(bytes),
        source_url: url.to_string(),
        title: header_value(&document_title(&body, url)),
        fetched_at,
        format: DocFormat::Document(ext),
        markdown_body: body,
        extraction_tool: conv.tool,
        warnings: conv.warnings,
    })
}

/// Dispatches a fetched resource to the HTML extractor or a converter.
pub async fn extract_resource(
    resource: FetchedResource<'_>,
    converters: &Converters,
    fetched_at: DateTime<Utc>,
) -> Result<(ExtractedDocument, Vec<String>), ExtractError> {
    match resource.class {
        TargetClass::HtmlPage => {
            extract_html(resource.body, resource.url, resource.content_type, fetched_at)
        }
        TargetClass::Document(ext) => {
            extract_document(resource.body, ext, resource.url, converters, fetched_at)
                .await
                .map(|d| (d, Vec::new()))
        }
        TargetClass::Skip => Err(ExtractError::Unsupported),
    }
}

#[cfg(test)]
mod tests {
    use std::cell::Cell;

    use chrono::TimeZone;
    use scraper::Html;

    use super::*;

    fn ts() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2025, 1, 2, 3, 4, 5).unwrap()
    }

    fn url(s: &str) -> Url {
        Url::parse(s).unwrap()
    }

    #[test]
    fn minimal_page_document() {
        let html = b"<title>T</title><h1>A</h1><p>Hello <a href='/x'>x</a></p>";
        let (doc, links) = extract_html(html, &url("http://h.org/p"), None, ts()).unwrap();
        assert_eq!(doc.title, "T");
        assert_eq!(doc.markdown_body, "# A\n\nHello [x](/x)");
        assert_eq!(links, vec!["/x"]);
        assert_eq!(doc.doc_id, content_id(html));
        assert_eq!(doc.doc_id.len(), 64);
        assert_eq!(doc.format, DocFormat::Html);
    }

    #[test]
    fn empty_after_cleaning() {
        let err = extract_html(b"<p></p><script>s()</script>", &url("http://h.org/"), None, ts())
            .unwrap_err();
        assert!(matches!(err, ExtractError::EmptyContent { .. }));
    }

    #[test]
    fn nav_only_page_still_yields_links() {
        let html = b"<nav><a href='/a'>a</a><a href='/b'>b</a></nav>";
        match extract_html(html, &url("http://h.org/"), None, ts()) {
            Err(ExtractError::EmptyContent { outlinks }) => assert_eq!(outlinks, vec!["/a", "/b"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ten_anchors_two_in_nav() {
        let mut html = String::from("<nav><a href='/n1'>Nav one</a><a href='/n2'>Nav two</a></nav><main>");
        for i in 0..8 {
            html.push_str(&format!("<p>Para {i} <a href='/b{i}'>link {i}</a></p>"));
        }
        html.push_str("</main>");
        let (doc, links) = extract_html(html.as_bytes(), &url("http://h.org/"), None, ts()).unwrap();
        assert_eq!(links.len(), 10);
        assert_eq!(links.iter().filter(|l| l.starts_with("/b")).count(), 8);
        assert!(!doc.markdown_body.contains("Nav one"));
        assert_eq!(doc.markdown_body.matches("](/b").count(), 8);
    }

    struct CountingParser(Cell<usize>);

    impl HtmlParser for CountingParser {
        fn parse(&self, html: &str) -> Html {
            self.0.set(self.0.get() + 1);
            Html::parse_document(html)
        }
    }

    #[test]
    fn pages_are_parsed_once() {
        let parser = CountingParser(Cell::new(0));
        let html = b"<title>x</title><p>a <a href='/1'>1</a></p><nav><a href='/2'>2</a></nav>";
        let (_, links) =
            extract_html_with(&parser, html, &url("http://h.org/"), None, ts()).unwrap();
        assert_eq!(links.len(), 2);
        assert_eq!(parser.0.get(), 1);
    }

    #[test]
    fn extraction_is_deterministic() {
        let html = b"<title>Run log</title><h2>Setup</h2><p>Detector <b>TPC</b> calibration.</p>";
        let a = extract_html(html, &url("http://h.org/x"), None, ts()).unwrap();
        let b = extract_html(html, &url("http://h.org/x"), None, ts()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn format_names() {
        assert_eq!("html".parse::<DocFormat>(), Ok(DocFormat::Html));
        assert_eq!("eps".parse::<DocFormat>(), Ok(DocFormat::Document(DocExtension::Eps)));
        assert!("xls".parse::<DocFormat>().is_err());
    }

    #[test]
    fn document_titles() {
        let u = url("http://h.org/files/talk.pdf");
        assert_eq!(document_title("intro\n## Results here\ntext", &u), "Results here");
        assert_eq!(document_title("#hashtag only", &u), "talk.pdf");
    }
}
