use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::future::join_all;
use serde::Serialize;
use serde_json::{json, Value};

use super::context::{assemble_context, ContextChunk};
use super::graph::{plan, OrchestrationGraph};
use super::header::{validate_header, McpError, McpHeader, PlanDefaults, StageKind, StageSpec};
use crate::backends::{count_tokens, BackendRegistry, Generation};
use crate::index::{EmbedError, Embedder, SearchIndex, SearchStatus};
use crate::SecurityTier;

const SUMMARIZE_INSTRUCTION: &str = "Summarize the following passage, keeping names, numbers and units.";
const EVALUATE_INSTRUCTION: &str =
    "Check whether the answer below is supported by the sources. Reply with `verdict: ok` or `verdict: unsupported` and one sentence of reasoning.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FanoutResult {
    pub backend: String,
    pub status: StageStatus,
    /// Reported only when timing is requested.
    #[serde(skip)]
    pub duration: Duration,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RetrievalInfo {
    pub k: usize,
    pub status: SearchStatus,
    /// Index entries at or below the request tier.
    pub eligible: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageTrace {
    pub stage_index: usize,
    pub kind: StageKind,
    pub backend_used: Option<String>,
    pub input_tokens: usize,
    pub output_tokens: usize,
    /// Reported only when timing is requested.
    #[serde(skip)]
    pub duration: Duration,
    pub chunk_ids_used: Vec<String>,
    pub status: StageStatus,
    pub fanout_results: Vec<FanoutResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl StageTrace {
    fn new(stage_index: usize, kind: StageKind) -> Self {
        StageTrace {
            stage_index,
            kind,
            backend_used: None,
            input_tokens: 0,
            output_tokens: 0,
            duration: Duration::ZERO,
            chunk_ids_used: Vec::new(),
            status: StageStatus::Skipped,
            fanout_results: Vec::new(),
            retrieval: None,
            output: None,
            verdict: None,
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Citation {
    pub chunk_id: String,
    pub source_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Answer {
    pub text: String,
    pub citations: Vec<Citation>,
    pub traces: Vec<StageTrace>,
    pub header_echo: McpHeader,
}

fn traces_json(traces: &[StageTrace], include_timing: bool) -> Value {
    let mut v = serde_json::to_value(traces).expect("traces serialize");
    if include_timing {
        for (t, tv) in traces.iter().zip(v.as_array_mut().expect("array")) {
            tv["duration_ms"] = json!(t.duration.as_secs_f64() * 1000.0);
            for (f, fv) in t
                .fanout_results
                .iter()
                .zip(tv["fanout_results"].as_array_mut().expect("array"))
            {
                fv["duration_ms"] = json!(f.duration.as_secs_f64() * 1000.0);
            }
        }
    }
    v
}

impl Answer {
    /// The `/ask` response body. Durations vary run to run, so they are
    /// only included on request.
    pub fn to_json(&self, include_timing: bool) -> Value {
        json!({
            "answer": self.text,
            "citations": self.citations,
            "traces": traces_json(&self.traces, include_timing),
            "mcp": self.header_echo,
        })
    }
}

/// A mandatory stage failed; traces cover every stage.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("stage {stage_index} ({kind}) failed: {reason}")]
pub struct ExecutionFailure {
    pub stage_index: usize,
    pub kind: StageKind,
    pub reason: String,
    pub traces: Vec<StageTrace>,
    pub header_echo: McpHeader,
}

impl ExecutionFailure {
    pub fn to_json(&self, include_timing: bool) -> Value {
        json!({
            "error": "stage_failed",
            "message": self.to_string(),
            "stage_index": self.stage_index,
            "traces": traces_json(&self.traces, include_timing),
            "mcp": self.header_echo,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AskError {
    #[error(transparent)]
    Header(#[from] McpError),
    #[error(transparent)]
    Execution(#[from] Box<ExecutionFailure>),
}

struct LeafOutcome {
    backend: String,
    duration: Duration,
    result: Result<Vec<Generation>, String>,
}

impl LeafOutcome {
    fn fanout(&self) -> FanoutResult {
        FanoutResult {
            backend: self.backend.clone(),
            status: if self.result.is_ok() {
                StageStatus::Ok
            } else {
                StageStatus::Failed
            },
            duration: self.duration,
            error: self.result.as_ref().err().cloned(),
        }
    }
}

/// Shared, read-only serving state.
#[derive(Clone)]
pub struct Orchestrator {
    backends: BackendRegistry,
    index: Arc<SearchIndex>,
    embedder: Arc<dyn Embedder>,
    defaults: PlanDefaults,
}

impl std::fmt::Debug for Orchestrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Orchestrator")
            .field("backends", &self.backends)
            .field("chunks", &self.index.len())
            .field("embedder", &self.embedder.describe())
            .field("defaults", &self.defaults)
            .finish()
    }
}

/// Working state threaded through the stages of one request.
struct RunState {
    chunks: Vec<ContextChunk>,
    query: String,
    answer: Option<String>,
    cited: Vec<ContextChunk>,
}

impl Orchestrator {
    pub fn new(
        backends: BackendRegistry,
        index: Arc<SearchIndex>,
        embedder: Arc<dyn Embedder>,
        defaults: PlanDefaults,
    ) -> Self {
        Orchestrator {
            backends,
            index,
            embedder,
            defaults,
        }
    }

    pub fn backends(&self) -> &BackendRegistry {
        &self.backends
    }

    pub fn index(&self) -> &SearchIndex {
        &self.index
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn defaults(&self) -> &PlanDefaults {
        &self.defaults
    }

    pub fn validate(&self, raw: Option<&Value>, session_tier: SecurityTier) -> Result<McpHeader, McpError> {
        validate_header(raw, session_tier, &self.defaults, &self.backends)
    }

    /// Validate, plan and execute in one go.
    pub async fn ask(
        &self,
        raw_header: Option<&Value>,
        session_tier: SecurityTier,
        question: &str,
    ) -> Result<Answer, AskError> {
        let header = self.validate(raw_header, session_tier)?;
        let graph = plan(&header);
        self.execute(&graph, question).await.map_err(|e| AskError::Execution(Box::new(e)))
    }

    async fn run_leaves<F, Fut>(&self, backends: &[&str], call: F) -> Vec<LeafOutcome>
    where
        F: Fn(Arc<dyn crate::backends::Backend>) -> Fut,
        Fut: std::future::Future<Output = Result<Vec<Generation>, String>>,
    {
        let futures = backends.iter().map(|name| {
            let backend = self.backends.get(name).cloned();
            let call = &call;
            async move {
                let start = Instant::now();
                let result = match backend {
                    Some(b) => call(b).await,
                    None => Err(format!("backend `{name}` is not registered")),
                };
                LeafOutcome {
                    backend: name.to_string(),
                    duration: start.elapsed(),
                    result,
                }
            }
        });
        join_all(futures).await
    }

    /// Runs the stages in order. Sibling backends of a stage run concurrently;
    /// the join waits for all of them and takes the first ok in configured order.
    pub async fn execute(&self, graph: &OrchestrationGraph, question: &str) -> Result<Answer, ExecutionFailure> {
        let header = &graph.header;
        let mut state = RunState {
            chunks: Vec::new(),
            query: question.to_string(),
            answer: None,
            cited: Vec::new(),
        };
        let mut traces: Vec<StageTrace> = Vec::with_capacity(header.stack.len());
        let mut failure: Option<(usize, StageKind, String)> = None;

        for (i, stage) in header.stack.iter().enumerate() {
            if let Some((fi, fk, _)) = &failure {
                let mut t = StageTrace::new(i, stage.kind);
                t.warnings.push(format!("not run: stage {fi} ({fk}) failed"));
                traces.push(t);
                continue;
            }
            let budget = header.budget(i);
            let start = Instant::now();
            let mut trace = StageTrace::new(i, stage.kind);
            let leaves = graph.leaves(i);
            let outcome = match stage.kind {
                StageKind::Retrieve => self.retrieve(stage, budget, header.security_tier, &mut state, &mut trace).await,
                StageKind::Summarize => {
                    self.summarize(stage, &leaves, budget, &mut state, &mut trace).await;
                    Ok(())
                }
                StageKind::Infer => self.infer(stage, &leaves, budget, question, &mut state, &mut trace).await,
                StageKind::Evaluate => {
                    self.evaluate(stage, &leaves, budget, question, &state, &mut trace).await;
                    Ok(())
                }
            };
            trace.duration = start.elapsed();
            assert!(
                trace.input_tokens <= budget,
                "stage {i} consumed {} tokens over a budget of {budget}",
                trace.input_tokens
            );
            if let Err(reason) = outcome {
                trace.status = StageStatus::Failed;
                trace.warnings.push(reason.clone());
                failure = Some((i, stage.kind, reason));
            }
            traces.push(trace);
        }

        self.check_tiers(header.security_tier, &traces, &state.cited);

        if let Some((stage_index, kind, reason)) = failure {
            return Err(ExecutionFailure {
                stage_index,
                kind,
                reason,
                traces,
                header_echo: header.clone(),
            });
        }
        let Some(text) = state.answer else {
            // A stack without an infer stage answers with the retrieved context.
            let text = state
                .chunks
                .iter()
                .map(|c| c.text.trim_end())
                .collect::<Vec<_>>()
                .join("\n\n");
            let citations = state.chunks.iter().map(citation).collect();
            return Ok(Answer {
                text,
                citations,
                traces,
                header_echo: header.clone(),
            });
        };
        Ok(Answer {
            text,
            citations: state.cited.iter().map(citation).collect(),
            traces,
            header_echo: header.clone(),
        })
    }

    /// Every chunk that surfaces anywhere must sit at or below the request
    /// tier. A violation is a bug, not a recoverable condition.
    fn check_tiers(&self, tier: SecurityTier, traces: &[StageTrace], cited: &[ContextChunk]) {
        let ids = traces
            .iter()
            .flat_map(|t| t.chunk_ids_used.iter())
            .chain(cited.iter().map(|c| &c.chunk_id));
        for id in ids {
            let entry_tier = self.index.chunk(id).map(|c| c.tier);
            assert!(
                entry_tier.is_some_and(|t| t <= tier),
                "chunk {id} with tier {entry_tier:?} surfaced in a {tier} request"
            );
        }
    }

    async fn retrieve(
        &self,
        stage: &StageSpec,
        budget: usize,
        tier: SecurityTier,
        state: &mut RunState,
        trace: &mut StageTrace,
    ) -> Result<(), String> {
        let k = stage.k();
        let input = count_tokens(&state.query);
        if input > budget {
            return Err(format!("query needs {input} tokens, budget is {budget}"));
        }
        trace.input_tokens = input;
        let query = match self.embedder.embed_batch(std::slice::from_ref(&state.query)).await {
            Ok(mut v) if v.len() == 1 => Some(v.remove(0)),
            Ok(_) => return Err("embedder returned the wrong number of vectors".into()),
            Err(EmbedError::ZeroVector) => None,
            Err(e) => return Err(e.to_string()),
        };
        let hits = match query {
            Some(q) => {
                let top = self.index.top_k(&q, k, tier).map_err(|e| e.to_string())?;
                trace.retrieval = Some(RetrievalInfo {
                    k,
                    status: top.status,
                    eligible: top.eligible,
                });
                top.hits
            }
            None => {
                trace.warnings.push("query has no embeddable tokens; nothing retrieved".into());
                Vec::new()
            }
        };
        for h in &hits {
            let chunk = self
                .index
                .chunk(&h.chunk_id)
                .ok_or_else(|| format!("index has no text for {}", h.chunk_id))?;
            trace.chunk_ids_used.push(h.chunk_id.clone());
            trace.output_tokens += chunk.token_count;
            if !state.chunks.iter().any(|c| c.chunk_id == h.chunk_id) {
                state.chunks.push(ContextChunk {
                    chunk_id: h.chunk_id.clone(),
                    source_url: h.source_url.clone(),
                    text: chunk.text.clone(),
                    token_count: chunk.token_count,
                    tier: h.tier,
                });
            }
        }
        trace.output = Some(trace.chunk_ids_used.join(", "));
        trace.status = StageStatus::Ok;
        Ok(())
    }

    async fn summarize(
        &self,
        stage: &StageSpec,
        leaves: &[&str],
        budget: usize,
        state: &mut RunState,
        trace: &mut StageTrace,
    ) {
        let mut kept = 0;
        let mut input = 0;
        for c in &state.chunks {
            if input + c.token_count > budget {
                break;
            }
            input += c.token_count;
            kept += 1;
        }
        if kept == 0 {
            trace.warnings.push(if state.chunks.is_empty() {
                "nothing to summarize".to_string()
            } else {
                format!("top chunk exceeds the budget of {budget} tokens")
            });
            return;
        }
        trace.input_tokens = input;
        trace.chunk_ids_used = state.chunks[..kept].iter().map(|c| c.chunk_id.clone()).collect();
        let prompts: Vec<String> = state.chunks[..kept]
            .iter()
            .map(|c| format!("{SUMMARIZE_INSTRUCTION}\n\n{}", c.text))
            .collect();
        let params = stage.gen_params();
        let outcomes = self
            .run_leaves(leaves, |b| {
                let prompts = &prompts;
                let params = &params;
                async move {
                    let mut out = Vec::with_capacity(prompts.len());
                    for p in prompts {
                        out.push(b.generate(p, params).await.map_err(|e| e.to_string())?);
                    }
                    Ok(out)
                }
            })
            .await;
        trace.fanout_results = outcomes.iter().map(LeafOutcome::fanout).collect();
        let Some(winner) = outcomes.into_iter().find(|o| o.result.is_ok()) else {
            trace.warnings.push("every summarize backend failed; chunks left as retrieved".into());
            return;
        };
        let generations = winner.result.expect("checked ok");
        let dropped = state.chunks.len() - kept;
        if dropped > 0 {
            trace.warnings.push(format!("{dropped} chunk(s) beyond the summarize budget were dropped"));
        }
        state.chunks.truncate(kept);
        for (c, g) in state.chunks.iter_mut().zip(&generations) {
            c.text = g.text.clone();
            c.token_count = count_tokens(&g.text);
        }
        trace.output_tokens = generations.iter().map(|g| g.usage.completion_tokens).sum();
        trace.output = Some(generations.iter().map(|g| g.text.as_str()).collect::<Vec<_>>().join("\n\n"));
        trace.backend_used = Some(winner.backend);
        trace.status = StageStatus::Ok;
    }

    async fn infer(
        &self,
        stage: &StageSpec,
        leaves: &[&str],
        budget: usize,
        question: &str,
        state: &mut RunState,
        trace: &mut StageTrace,
    ) -> Result<(), String> {
        let ctx = assemble_context(&state.chunks, budget, question).map_err(|e| e.to_string())?;
        trace.input_tokens = ctx.tokens;
        trace.chunk_ids_used = state.chunks[..ctx.included].iter().map(|c| c.chunk_id.clone()).collect();
        let params = stage.gen_params();
        let outcomes = self
            .run_leaves(leaves, |b| {
                let prompt = &ctx.text;
                let params = &params;
                async move { b.generate(prompt, params).await.map(|g| vec![g]).map_err(|e| e.to_string()) }
            })
            .await;
        trace.fanout_results = outcomes.iter().map(LeafOutcome::fanout).collect();
        let Some(winner) = outcomes.into_iter().find(|o| o.result.is_ok()) else {
            return Err("every infer backend failed".into());
        };
        let generation = winner.result.expect("checked ok").remove(0);
        trace.output_tokens = generation.usage.completion_tokens;
        trace.output = Some(generation.text.clone());
        trace.backend_used = Some(winner.backend);
        trace.status = StageStatus::Ok;
        state.cited = state.chunks[..ctx.included].to_vec();
        state.query = generation.text.clone();
        state.answer = Some(generation.text);
        Ok(())
    }

    async fn evaluate(
        &self,
        stage: &StageSpec,
        leaves: &[&str],
        budget: usize,
        question: &str,
        state: &RunState,
        trace: &mut StageTrace,
    ) {
        let Some(answer) = &state.answer else {
            trace.warnings.push("no answer to evaluate yet".into());
            return;
        };
        let answer_tokens = count_tokens(answer);
        let ctx = match budget
            .checked_sub(answer_tokens)
            .ok_or_else(|| format!("answer alone exceeds the budget of {budget} tokens"))
            .and_then(|rest| assemble_context(&state.cited, rest, question).map_err(|e| e.to_string()))
        {
            Ok(ctx) => ctx,
            Err(reason) => {
                trace.warnings.push(reason);
                return;
            }
        };
        trace.input_tokens = answer_tokens + ctx.tokens;
        trace.chunk_ids_used = state.cited[..ctx.included].iter().map(|c| c.chunk_id.clone()).collect();
        let prompt = format!("{EVALUATE_INSTRUCTION}\n\nAnswer:\n{answer}\n\n{}", ctx.text);
        let params = stage.gen_params();
        let outcomes = self
            .run_leaves(leaves, |b| {
                let prompt = &prompt;
                let params = &params;
                async move { b.generate(prompt, params).await.map(|g| vec![g]).map_err(|e| e.to_string()) }
            })
            .await;
        trace.fanout_results = outcomes.iter().map(LeafOutcome::fanout).collect();
        let Some(winner) = outcomes.into_iter().find(|o| o.result.is_ok()) else {
            trace.warnings.push("every evaluate backend failed; answer not assessed".into());
            return;
        };
        let generation = winner.result.expect("checked ok").remove(0);
        trace.output_tokens = generation.usage.completion_tokens;
        trace.verdict = parse_verdict(&generation.text);
        trace.output = Some(generation.text);
        trace.backend_used = Some(winner.backend);
        trace.status = StageStatus::Ok;
    }
}

fn citation(c: &ContextChunk) -> Citation {
    Citation {
        chunk_id: c.chunk_id.clone(),
        source_url: c.source_url.clone(),
    }
}

/// Text after the first `verdict:` line, if any.
fn parse_verdict(text: &str) -> Option<String> {
    text.lines().find_map(|l| {
        let l = l.trim();
        l.get(..8)
            .filter(|p| p.eq_ignore_ascii_case("verdict:"))
            .map(|_| l[8..].trim().to_string())
    })
}

#[cfg(test)]
mod tests;
