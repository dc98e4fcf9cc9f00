//! Core library for `corpusforge`: harvest a bounded web domain into a
//! provenance-carrying Markdown corpus, index it into a tier-aware exact
//! vector index, and answer questions through a staged, budgeted
//! orchestration protocol over pluggable generation backends.
//!
//! The modules follow the data path:
//!
//! - [`crawl`]: URL canonicalization, scope filtering, per-host rate limiting
//!   and the breadth-first crawl loop.
//! - [`extract`]: HTML-to-Markdown extraction, external converter
//!   invocation, text cleaning and the metadata header.
//! - [`corpus`]: content-addressed document store, manifest and statistics.
//! - [`index`]: chunking, hash embeddings, exact top-k search, persistence.
//! - [`backends`]: token counting, mock and OpenAI-compatible backends,
//!   throughput measurement.
//! - [`orchestrator`]: request header validation, planning and execution.

pub mod backends;
pub mod corpus;
pub mod crawl;
pub mod extract;
pub mod index;
pub mod orchestrator;
pub mod tier;

pub use tier::SecurityTier;
