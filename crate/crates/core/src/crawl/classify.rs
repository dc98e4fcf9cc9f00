use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use url::Url;

/// Linked-document formats handled by external converters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocExtension {
    Pdf,
    Docx,
    Doc,
    Pptx,
    Ppt,
    Ps,
    Eps,
}

impl DocExtension {
    pub const ALL: [DocExtension; 7] = [
        DocExtension::Pdf,
        DocExtension::Docx,
        DocExtension::Doc,
        DocExtension::Pptx,
        DocExtension::Ppt,
        DocExtension::Ps,
        DocExtension::Eps,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DocExtension::Pdf => "pdf",
            DocExtension::Docx => "docx",
            DocExtension::Doc => "doc",
            DocExtension::Pptx => "pptx",
            DocExtension::Ppt => "ppt",
            DocExtension::Ps => "ps",
            DocExtension::Eps => "eps",
        }
    }
}

impl fmt::Display for DocExtension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DocExtension {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        DocExtension::ALL
            .into_iter()
            .find(|e| e.as_str().eq_ignore_ascii_case(s))
            .ok_or(())
    }
}

/// What the pipeline does with a fetched resource.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "extension", rename_all = "snake_case")]
pub enum TargetClass {
    HtmlPage,
    Document(DocExtension),
    Skip,
}

const HTML_EXTENSIONS: [&str; 4] = ["html", "htm", "php", "asp"];

/// Lowercased extension of the last path segment, if any.
pub(crate) fn path_extension(url: &Url) -> Option<String> {
    let segment = url.path().rsplit('/').next().unwrap_or("");
    let (stem, ext) = segment.rsplit_once('.')?;
    if stem.is_empty() || ext.is_empty() {
        return None;
    }
    Some(ext.to_ascii_lowercase())
}

fn class_from_extension(url: &Url) -> TargetClass {
    match path_extension(url) {
        None => TargetClass::HtmlPage,
        Some(ext) => {
            if let Ok(doc) = ext.parse::<DocExtension>() {
                TargetClass::Document(doc)
            } else if HTML_EXTENSIONS.contains(&ext.as_str()) {
                TargetClass::HtmlPage
            } else {
                TargetClass::Skip
            }
        }
    }
}

/// `None` for content types that say nothing about the format.
fn class_from_content_type(content_type: &str, by_ext: TargetClass) -> Option<TargetClass> {
    let mime = content_type
        .split(';')
        .next()
        .unwrap_or("")
        .trim()
        .to_ascii_lowercase();
    let class = match mime.as_str() {
        "" | "application/octet-stream" | "binary/octet-stream" => return None,
        "text/html" | "application/xhtml+xml" => TargetClass::HtmlPage,
        "application/pdf" | "application/x-pdf" => TargetClass::Document(DocExtension::Pdf),
        "application/msword" => TargetClass::Document(DocExtension::Doc),
        "application/vnd.openxmlformats-officedocument.wordprocessingml.document" => {
            TargetClass::Document(DocExtension::Docx)
        }
        "application/vnd.ms-powerpoint" => TargetClass::Document(DocExtension::Ppt),
        "application/vnd.openxmlformats-officedocument.presentationml.presentation" => {
            TargetClass::Document(DocExtension::Pptx)
        }
        "application/postscript" => match by_ext {
            TargetClass::Document(DocExtension::Eps) => TargetClass::Document(DocExtension::Eps),
            _ => TargetClass::Document(DocExtension::Ps),
        },
        "application/eps" | "application/x-eps" | "image/eps" | "image/x-eps" => {
            TargetClass::Document(DocExtension::Eps)
        }
        _ => TargetClass::Skip,
    };
    Some(class)
}

/// Classify by path extension; an informative `content_type` overrides it.
pub fn classify_target(url: &Url, content_type: Option<&str>) -> TargetClass {
    let by_ext = class_from_extension(url);
    content_type
        .and_then(|ct| class_from_content_type(ct, by_ext))
        .unwrap_or(by_ext)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class(u: &str, ct: Option<&str>) -> TargetClass {
        classify_target(&Url::parse(u).unwrap(), ct)
    }

    #[test]
    fn extension_is_case_insensitive() {
        assert_eq!(
            class("http://h.org/talk.PPT", None),
            TargetClass::Document(DocExtension::Ppt)
        );
    }

    #[test]
    fn html_pages() {
        assert_eq!(class("http://h.org/index.html", Some("text/html")), TargetClass::HtmlPage);
        assert_eq!(class("http://h.org/dir/", None), TargetClass::HtmlPage);
        assert_eq!(class("http://h.org/page.php?id=3", None), TargetClass::HtmlPage);
        assert_eq!(class("http://h.org/.hidden", None), TargetClass::HtmlPage);
    }

    #[test]
    fn unknown_binary_is_skipped() {
        assert_eq!(class("http://h.org/data.tar.gz", None), TargetClass::Skip);
        assert_eq!(class("http://h.org/img.png", Some("image/png")), TargetClass::Skip);
    }

    #[test]
    fn content_type_wins_over_extension() {
        assert_eq!(
            class("http://h.org/report.pdf", Some("text/html; charset=utf-8")),
            TargetClass::HtmlPage
        );
        assert_eq!(
            class("http://h.org/getfile?id=9", Some("application/pdf")),
            TargetClass::Document(DocExtension::Pdf)
        );
        assert_eq!(
            class("http://h.org/fig.eps", Some("application/postscript")),
            TargetClass::Document(DocExtension::Eps)
        );
        assert_eq!(
            class("http://h.org/slides.pptx", Some("application/octet-stream")),
            TargetClass::Document(DocExtension::Pptx)
        );
    }

    #[test]
    fn all_seven_extensions() {
        for ext in DocExtension::ALL {
            let u = format!("http://h.org/f.{}", ext.as_str().to_uppercase());
            assert_eq!(class(&u, None), TargetClass::Document(ext));
        }
    }
}
