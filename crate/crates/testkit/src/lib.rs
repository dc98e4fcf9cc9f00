//! In-process HTTP fixtures for crawler, client and service tests.

mod openai;
mod site;

pub use openai::{OpenAiFixture, RecordedCall, Scripted};
pub use site::{FixtureSite, RequestRecord, SiteTruth, GEN_PAGES, PDF_BYTES, QUERY_PHRASE};

/// Converter command for the fixture PDF: pulls the text-showing operands
/// out of an uncompressed content stream. Stands in for `pdftotext`.
pub const PDF_STUB_COMMAND: &str = "sed -n 's/.*(\\(.*\\)) Tj.*/\\1/p' {input} > {output}";
