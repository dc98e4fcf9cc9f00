use std::sync::OnceLock;

use ego_tree::NodeRef;
use regex::bytes::Regex;
use scraper::{Html, Node};

/// Parses an HTML document. A seam so tests can count parses.
pub trait HtmlParser {
    fn parse(&self, html: &str) -> Html;
}

/// The default html5ever-backed parser.
#[derive(Debug, Clone, Copy, Default)]
pub struct Html5Ever;

impl HtmlParser for Html5Ever {
    fn parse(&self, html: &str) -> Html {
        Html::parse_document(html)
    }
}

/// Text and links recovered from one parse of a page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HtmlContent {
    pub title: String,
    /// Uncleaned Markdown.
    pub markdown: String,
    /// Every anchor `href`, in document order, unnormalized.
    pub outlinks: Vec<String>,
}

/// Decodes page bytes: HTTP charset, then `<meta charset>`, then UTF-8
/// (lossy, with a warning when invalid).
pub fn decode_html(bytes: &[u8], content_type: Option<&str>) -> (String, Option<String>) {
    let declared = content_type
        .and_then(charset_param)
        .or_else(|| sniff_meta_charset(bytes));
    if let Some(label) = declared {
        if let Some(enc) = encoding_rs::Encoding::for_label(label.as_bytes()) {
            let (text, _, had_errors) = enc.decode(bytes);
            let warning = had_errors.then(|| format!("invalid {} sequences replaced", enc.name()));
            return (text.into_owned(), warning);
        }
    }
    match std::str::from_utf8(bytes) {
        Ok(s) => (s.strip_prefix('\u{feff}').unwrap_or(s).to_string(), None),
        Err(_) => (
            String::from_utf8_lossy(bytes).into_owned(),
            Some("undeclared charset and invalid UTF-8; decoded lossily".to_string()),
        ),
    }
}

fn charset_param(content_type: &str) -> Option<String> {
    content_type.split(';').skip(1).find_map(|param| {
        let (k, v) = param.split_once('=')?;
        k.trim()
            .eq_ignore_ascii_case("charset")
            .then(|| v.trim().trim_matches('"').to_string())
    })
}

fn sniff_meta_charset(bytes: &[u8]) -> Option<String> {
    static META: OnceLock<Regex> = OnceLock::new();
    let re = META.get_or_init(|| {
        Regex::new(r#"(?i)<meta[^>]+charset\s*=\s*["']?([A-Za-z0-9_:.\-]+)"#).expect("valid regex")
    });
    let head = &bytes[..bytes.len().min(2048)];
    re.captures(head)
        .map(|c| String::from_utf8_lossy(&c[1]).into_owned())
}

/// Converts a page to Markdown and collects its links from a single parse.
pub fn html_to_markdown(parser: &dyn HtmlParser, html: &str) -> HtmlContent {
    let doc = parser.parse(html);
    let mut w = Writer::default();
    w.walk(doc.tree.root(), true);
    w.flush_block();
    HtmlContent {
        title: w.title.unwrap_or_default(),
        markdown: w.blocks.join("\n\n"),
        outlinks: w.links,
    }
}

const DROPPED: [&str; 9] = [
    "script", "style", "noscript", "template", "nav", "header", "footer", "head", "svg",
];

const BLOCKS: [&str; 27] = [
    "p", "div", "section", "article", "main", "aside", "blockquote", "ul", "ol", "dl", "dt", "dd",
    "table", "thead", "tbody", "tfoot", "tr", "form", "figure", "figcaption", "address", "body",
    "html", "fieldset", "details", "summary", "hr",
];

#[derive(Default)]
struct Writer {
    title: Option<String>,
    blocks: Vec<String>,
    /// Inline buffers; index 0 is the current block, deeper entries belong
    /// to open inline constructs (links, headings, emphasis).
    stack: Vec<String>,
    links: Vec<String>,
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl Writer {
    fn buf(&mut self) -> &mut String {
        if self.stack.is_empty() {
            self.stack.push(String::new());
        }
        self.stack.last_mut().expect("non-empty stack")
    }

    fn push_text(&mut self, text: &str) {
        let starts_ws = text.starts_with(char::is_whitespace);
        let ends_ws = text.ends_with(char::is_whitespace);
        let body = collapse_ws(text);
        let buf = self.buf();
        if (starts_ws || body.is_empty()) && !buf.is_empty() && !buf.ends_with([' ', '\n']) {
            buf.push(' ');
        }
        buf.push_str(&body);
        if ends_ws && !body.is_empty() {
            buf.push(' ');
        }
    }

    fn flush_block(&mut self) {
        if self.stack.len() > 1 {
            // Block inside an inline construct: keep it on one line.
            self.push_text(" ");
            return;
        }
        if let Some(buf) = self.stack.pop() {
            let block = buf
                .lines()
                .map(str::trim)
                .collect::<Vec<_>>()
                .join("\n")
                .trim()
                .to_string();
            if !block.is_empty() {
                self.blocks.push(block);
            }
        }
    }

    fn inline_children(&mut self, node: NodeRef<'_, Node>, emit: bool) -> String {
        self.stack.push(String::new());
        for child in node.children() {
            self.walk(child, emit);
        }
        collapse_ws(&self.stack.pop().unwrap_or_default())
    }

    fn walk(&mut self, node: NodeRef<'_, Node>, emit: bool) {
        match node.value() {
            Node::Text(t) => {
                if emit {
                    self.push_text(t);
                }
            }
            Node::Element(el) => {
                let name = el.name();
                if name == "title" {
                    if self.title.is_none() {
                        let text: String = node
                            .descendants()
                            .filter_map(|d| d.value().as_text().map(|t| t.to_string()))
                            .collect();
                        self.title = Some(collapse_ws(&text));
                    }
                    return;
                }
                if DROPPED.contains(&name) {
                    for child in node.children() {
                        self.walk(child, false);
                    }
                    return;
                }
                if name == "a" {
                    let href = el.attr("href").map(str::trim);
                    if let Some(h) = href {
                        self.links.push(h.to_string());
                    }
                    let text = self.inline_children(node, emit);
                    if emit {
                        match href {
                            Some(h) if !text.is_empty() && !h.is_empty() => {
                                self.push_text(&format!("[{text}]({h})"))
                            }
                            _ => self.push_text(&text),
                        }
                    }
                    return;
                }
                if !emit {
                    for child in node.children() {
                        self.walk(child, false);
                    }
                    return;
                }
                match name {
                    "h1" | "h2" | "h3" | "h4" | "h5" | "h6" => {
                        let level = (name.as_bytes()[1] - b'0') as usize;
                        self.flush_block();
                        let text = self.inline_children(node, true);
                        if !text.is_empty() {
                            self.push_text(&format!("{} {}", "#".repeat(level), text));
                        }
                        self.flush_block();
                    }
                    "li" => {
                        self.flush_block();
                        let text = self.inline_children(node, true);
                        if !text.is_empty() {
                            self.push_text(&format!("- {text}"));
                        }
                        self.flush_block();
                    }
                    "pre" => {
                        self.flush_block();
                        let raw: String = node
                            .descendants()
                            .filter_map(|d| d.value().as_text().map(|t| t.to_string()))
                            .collect();
                        let raw = raw.trim_matches('\n');
                        if !raw.trim().is_empty() {
                            self.blocks.push(format!("```\n{raw}\n```"));
                        }
                    }
                    "br" => self.buf().push('\n'),
                    "code" | "kbd" | "samp" => {
                        let text = self.inline_children(node, true);
                        if !text.is_empty() {
                            self.push_text(&format!("`{text}`"));
                        }
                    }
                    "strong" | "b" => self.wrap_inline(node, "**"),
                    "em" | "i" => self.wrap_inline(node, "*"),
                    "td" | "th" => {
                        let text = self.inline_children(node, true);
                        let buf = self.buf();
                        if !buf.trim().is_empty() {
                            buf.push_str(" | ");
                        }
                        buf.push_str(&text);
                    }
                    n if BLOCKS.contains(&n) => {
                        self.flush_block();
                        for child in node.children() {
                            self.walk(child, true);
                        }
                        self.flush_block();
                    }
                    _ => {
                        for child in node.children() {
                            self.walk(child, true);
                        }
                    }
                }
            }
            _ => {
                for child in node.children() {
                    self.walk(child, emit);
                }
            }
        }
    }

    fn wrap_inline(&mut self, node: NodeRef<'_, Node>, marker: &str) {
        let text = self.inline_children(node, true);
        if !text.is_empty() {
            self.push_text(&format!("{marker}{text}{marker}"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn md(html: &str) -> HtmlContent {
        html_to_markdown(&Html5Ever, html)
    }

    #[test]
    fn minimal_page() {
        let c = md("<title>T</title><h1>A</h1><p>Hello <a href='/x'>x</a></p>");
        assert_eq!(c.title, "T");
        assert_eq!(c.markdown, "# A\n\nHello [x](/x)");
        assert_eq!(c.outlinks, vec!["/x"]);
    }

    #[test]
    fn drops_chrome_but_keeps_links() {
        let c = md("<nav><a href='/n1'>Home</a></nav><header>Banner</header>\
                    <p>Body <a href='/b'>b</a></p><footer><a href='/f'>f</a> (c)</footer>\
                    <script>var a='<a href=/s>';</script><style>p{}</style>");
        assert_eq!(c.markdown, "Body [b](/b)");
        assert_eq!(c.outlinks, vec!["/n1", "/b", "/f"]);
    }

    #[test]
    fn blocks_lists_and_inline_markup() {
        let c = md("<div>One</div><div>Two <strong>bold</strong> <em>it</em> <code>x()</code></div>\
                    <ul><li>a</li><li>b</li></ul><h3>Sub</h3><pre>  fn x()\n    y</pre>");
        assert_eq!(
            c.markdown,
            "One\n\nTwo **bold** *it* `x()`\n\n- a\n\n- b\n\n### Sub\n\n```\n  fn x()\n    y\n```"
        );
    }

    #[test]
    fn whitespace_is_collapsed() {
        let c = md("<title>\n  A   long\n title </title><p>  many \n\n  spaces  here </p>");
        assert_eq!(c.title, "A long title");
        assert_eq!(c.markdown, "many spaces here");
    }

    #[test]
    fn tables_and_breaks() {
        let c = md("<table><tr><th>k</th><th>v</th></tr><tr><td>a</td><td>1</td></tr></table>\
                    <p>line1<br>line2</p>");
        assert_eq!(c.markdown, "k | v\n\na | 1\n\nline1\nline2");
    }

    #[test]
    fn anchor_without_href_is_plain_text() {
        let c = md("<p><a name='top'>Top</a> and <a href=''>empty</a></p>");
        assert_eq!(c.markdown, "Top and empty");
        assert_eq!(c.outlinks, vec![""]);
    }

    #[test]
    fn charset_detection() {
        let latin1 = b"<p>caf\xe9</p>";
        let (text, warn) = decode_html(latin1, Some("text/html; charset=ISO-8859-1"));
        assert!(text.contains("caf\u{e9}"));
        assert!(warn.is_none());

        let meta = b"<meta charset=\"windows-1252\"><p>caf\xe9</p>";
        let (text, _) = decode_html(meta, Some("text/html"));
        assert!(text.contains("caf\u{e9}"));

        let (text, warn) = decode_html(latin1, None);
        assert!(text.contains('\u{fffd}'));
        assert!(warn.is_some());
    }
}
