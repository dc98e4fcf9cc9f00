use std::fs;
use std::path::{Path, PathBuf};

use tracing::warn;
use url::Url;

use crate::crawl::DocExtension;
use crate::extract::{
    clean_text, content_id, extract_document, extract_html, fetched_now, DocFormat,
    ExtractedDocument,
};

use super::{CorpusError, CorpusStore, PutStatus, TierRule};
use crate::extract::Converters;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestSummary {
    pub added: usize,
    pub aliased: usize,
    pub unchanged: usize,
    pub skipped: usize,
    /// `(path, reason)` for files that could not be extracted.
    pub failed: Vec<(PathBuf, String)>,
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if e.file_type()?.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Ingests a local directory of pre-exported material (for example mailing
/// list archives). Files are addressed by `file://` URLs so tier rules can
/// match on directory prefixes.
pub async fn ingest_directory(
    store: &mut CorpusStore,
    dir: &Path,
    converters: &Converters,
    rules: &[TierRule],
) -> Result<IngestSummary, CorpusError> {
    let root = dir.canonicalize().map_err(|source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    collect_files(&root, &mut files).map_err(|source| CorpusError::Io {
        path: root.clone(),
        source,
    })?;

    let mut summary = IngestSummary::default();
    for path in files {
        let Ok(url) = Url::from_file_path(&path) else {
            summary.skipped += 1;
            continue;
        };
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        let bytes = fs::read(&path).map_err(|source| CorpusError::Io {
            path: path.clone(),
            source,
        })?;
        let extracted: Result<ExtractedDocument, String> = match ext.as_str() {
            "html" | "htm" => extract_html(&bytes, &url, None, fetched_now())
                .map(|(d, _)| d)
                .map_err(|e| e.to_string()),
            "md" | "txt" | "markdown" => text_document(&bytes, &url, &path),
            other => match other.parse::<DocExtension>() {
                Ok(doc_ext) => extract_document(&bytes, doc_ext, &url, converters, fetched_now())
                    .await
                    .map_err(|e| e.to_string()),
                Err(()) => {
                    summary.skipped += 1;
                    continue;
                }
            },
        };
        match extracted {
            Ok(doc) => match store.put_document(&doc, rules)?.1 {
                PutStatus::Added => summary.added += 1,
                PutStatus::Aliased => summary.aliased += 1,
                PutStatus::Unchanged => summary.unchanged += 1,
            },
            Err(reason) => {
                warn!(path = %path.display(), "ingest failed: {reason}");
                summary.failed.push((path, reason));
            }
        }
    }
    Ok(summary)
}

fn text_document(bytes: &[u8], url: &Url, path: &Path) -> Result<ExtractedDocument, String> {
    let body = clean_text(&String::from_utf8_lossy(bytes));
    if body.is_empty() {
        return Err("no text content after cleaning".into());
    }
    let title = path
        .file_name()
        .map(|f| f.to_string_lossy().split_whitespace().collect::<Vec<_>>().join(" "))
        .unwrap_or_default();
    Ok(ExtractedDocument {
        doc_id: content_id(bytes),
        source_url: url.to_string(),
        title,
        fetched_at: fetched_now(),
        format: DocFormat::Text,
        markdown_body: body,
        extraction_tool: "text".into(),
        warnings: Vec::new(),
    })
}
