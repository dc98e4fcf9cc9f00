//! Per-request staged pipelines: header validation, planning, context
//! assembly and concurrent execution with full stage traces.

mod context;
mod execute;
mod graph;
mod header;

pub use self::context::{assemble_context, AssembledContext, ContextChunk, ContextError, PROVENANCE_TOKENS};
pub use self::execute::{
    Answer, AskError, Citation, ExecutionFailure, FanoutResult, Orchestrator, RetrievalInfo, StageStatus,
    StageTrace,
};
pub use self::graph::{plan, GraphNode, NodeRole, OrchestrationGraph};
pub use self::header::{validate_header, McpError, McpHeader, PlanDefaults, StageKind, StageSpec};

/// The line that frames each chunk in an assembled context.
pub fn provenance_line(chunk_id: &str, source_url: &str) -> String {
    format!("[source: {chunk_id} | {source_url}]")
}

/// Inverse of [`provenance_line`].
pub fn parse_provenance_line(line: &str) -> Option<(&str, &str)> {
    let inner = line.trim_end().strip_prefix("[source: ")?.strip_suffix(']')?;
    let (id, url) = inner.split_once(" | ")?;
    (!id.is_empty()).then_some((id, url))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provenance_round_trip() {
        let line = provenance_line("abc#0001", "https://example.org/a?b=1|2");
        assert_eq!(parse_provenance_line(&line), Some(("abc#0001", "https://example.org/a?b=1|2")));
        assert_eq!(parse_provenance_line("[source:  | x]"), None);
        assert_eq!(parse_provenance_line("plain text"), None);
    }
}
