use std::collections::BTreeMap;

use async_trait::async_trait;

use super::*;
use crate::backends::{mock_output, Backend, BackendError, GenParams, MockBackend, Usage};
use crate::index::{chunk_text, embed_hash, ChunkPolicy, HashEmbedder};
use crate::orchestrator::{parse_provenance_line, PROVENANCE_TOKENS};

const DIM: usize = 64;

const DOCS: [(&str, &str, &str, SecurityTier); 3] = [
    ("cavity", "https://ex.org/pub/cavity", "gold plated cavity tuning procedure for the booster ring", SecurityTier::Public),
    ("magnet", "https://ex.org/collab/magnet", "magnet quench protection heater firing sequence", SecurityTier::Collaboration),
    ("cryo", "https://ex.org/ctrl/cryo", "cryogenic helium refrigerator maintenance schedule", SecurityTier::Controlled),
];

fn fixture_index() -> SearchIndex {
    let embedder = HashEmbedder::new(DIM);
    let mut idx = SearchIndex::empty(&embedder, ChunkPolicy::default());
    for (id, url, body, tier) in DOCS {
        for c in chunk_text(id, body, tier, &ChunkPolicy::default()) {
            let v = embed_hash(&c.text, DIM).unwrap();
            idx.insert(c, v, url).unwrap();
        }
    }
    idx
}

fn orchestrator(backends: BackendRegistry) -> Orchestrator {
    Orchestrator::new(
        backends,
        Arc::new(fixture_index()),
        Arc::new(HashEmbedder::new(DIM)),
        PlanDefaults::new("local"),
    )
}

fn header(stack: Vec<StageSpec>, budget: usize, tier: SecurityTier) -> McpHeader {
    McpHeader {
        budgets: (0..stack.len()).map(|i| (i, budget)).collect::<BTreeMap<_, _>>(),
        stack,
        security_tier: tier,
    }
}

/// Always answers with the same text.
struct Fixed(&'static str, &'static str);

#[async_trait]
impl Backend for Fixed {
    fn name(&self) -> &str {
        self.0
    }
    async fn generate(&self, _prompt: &str, _params: &GenParams) -> Result<Generation, BackendError> {
        Ok(Generation {
            text: self.1.into(),
            usage: Usage { prompt_tokens: 0, completion_tokens: count_tokens(self.1) },
        })
    }
}

#[tokio::test]
async fn default_plan_cites_what_fits() {
    let o = orchestrator(BackendRegistry::new().with(MockBackend::new("local")));
    let q = "magnet quench heater";
    let answer = o.ask(None, SecurityTier::Controlled, q).await.unwrap();

    // Oracle: rank all chunks directly, then apply the budget arithmetic.
    let qv = embed_hash(q, DIM).unwrap();
    let mut ranked: Vec<(f64, &str, &str, usize)> = DOCS
        .iter()
        .map(|(id, url, body, _)| {
            let v = embed_hash(body, DIM).unwrap();
            let s: f64 = qv.values().iter().zip(v.values()).map(|(a, b)| *a as f64 * *b as f64).sum();
            (s, *id, *url, count_tokens(body))
        })
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    let mut total = count_tokens(&format!("Question: {q}"));
    let mut expected = Vec::new();
    for (_, id, url, tokens) in ranked.iter().take(8) {
        if total + tokens + PROVENANCE_TOKENS > 4096 {
            break;
        }
        total += tokens + PROVENANCE_TOKENS;
        expected.push(Citation { chunk_id: format!("{id}#0000"), source_url: url.to_string() });
    }
    assert_eq!(answer.citations, expected);
    assert_eq!(answer.citations[0].chunk_id, "magnet#0000");

    // The echo backend exposes exactly the ids it was shown.
    let echoed = answer.text.lines().next().unwrap().strip_prefix("MOCK[local]: ").unwrap();
    let ids: Vec<&str> = echoed.split(", ").collect();
    assert_eq!(ids, expected.iter().map(|c| c.chunk_id.as_str()).collect::<Vec<_>>());
    assert_eq!(answer.text.lines().last().unwrap(), format!("Question: {q}"));
    assert_eq!(answer.traces.len(), 2);
    assert_eq!(answer.traces[1].input_tokens, total);
}

#[tokio::test]
async fn join_prefers_configured_order() {
    let reg = BackendRegistry::new()
        .with(MockBackend::new("a"))
        .with(MockBackend::new("b"))
        .with(MockBackend::new("c"));
    let o = orchestrator(reg);
    let h = header(
        vec![StageSpec::retrieve(2), StageSpec::generate(StageKind::Infer, &["a", "b", "c"])],
        1000,
        SecurityTier::Controlled,
    );
    let a = o.execute(&plan(&h), "booster cavity").await.unwrap();
    let t = &a.traces[1];
    assert_eq!(t.backend_used.as_deref(), Some("a"));
    assert_eq!(t.fanout_results.iter().map(|f| (f.backend.as_str(), f.status)).collect::<Vec<_>>(), [
        ("a", StageStatus::Ok),
        ("b", StageStatus::Ok),
        ("c", StageStatus::Ok)
    ]);
    assert!(a.text.starts_with("MOCK[a]: "));
}

#[tokio::test]
async fn failed_leaf_falls_through_to_next() {
    let reg = BackendRegistry::new()
        .with(MockBackend::new("a").failing(true))
        .with(MockBackend::new("b"));
    let o = orchestrator(reg);
    let h = header(
        vec![StageSpec::retrieve(2), StageSpec::generate(StageKind::Infer, &["a", "b"])],
        1000,
        SecurityTier::Controlled,
    );
    let a = o.execute(&plan(&h), "booster cavity").await.unwrap();
    let t = &a.traces[1];
    assert_eq!(t.backend_used.as_deref(), Some("b"));
    assert_eq!(t.fanout_results[0].status, StageStatus::Failed);
    assert!(t.fanout_results[0].error.is_some());
    assert!(a.text.starts_with("MOCK[b]: "));
}

#[tokio::test]
async fn fan_out_runs_concurrently() {
    let reg = BackendRegistry::new()
        .with(MockBackend::new("d100").with_delay(Duration::from_millis(100)))
        .with(MockBackend::new("d150").with_delay(Duration::from_millis(150)))
        .with(MockBackend::new("d200").with_delay(Duration::from_millis(200)));
    let o = orchestrator(reg);
    let h = header(
        vec![StageSpec::retrieve(3), StageSpec::generate(StageKind::Infer, &["d100", "d150", "d200"])],
        1000,
        SecurityTier::Controlled,
    );
    let a = o.execute(&plan(&h), "helium").await.unwrap();
    let d = a.traces[1].duration;
    assert!(d >= Duration::from_millis(200) && d < Duration::from_millis(450), "{d:?}");
    assert_eq!(a.traces[1].backend_used.as_deref(), Some("d100"));
}

#[tokio::test]
async fn repeated_requests_are_byte_identical() {
    let reg = BackendRegistry::new()
        .with(MockBackend::new("a").with_delay(Duration::from_millis(20)))
        .with(MockBackend::new("b"));
    let o = orchestrator(reg);
    let h = header(
        vec![StageSpec::retrieve(3), StageSpec::generate(StageKind::Infer, &["a", "b"])],
        1000,
        SecurityTier::Collaboration,
    );
    let one = serde_json::to_vec(&o.execute(&plan(&h), "quench").await.unwrap().to_json(false)).unwrap();
    let two = serde_json::to_vec(&o.execute(&plan(&h), "quench").await.unwrap().to_json(false)).unwrap();
    assert_eq!(one, two);
    let timed = o.execute(&plan(&h), "quench").await.unwrap().to_json(true);
    assert!(timed["traces"][1]["duration_ms"].as_f64().unwrap() >= 20.0);
    assert!(timed["traces"][1]["fanout_results"][0]["duration_ms"].is_number());
}

#[tokio::test]
async fn evaluate_is_advisory() {
    let reg = BackendRegistry::new()
        .with(MockBackend::new("local"))
        .with(Fixed("judge", "verdict: ok\nlooks supported"));
    let o = orchestrator(reg);
    let h = header(
        vec![
            StageSpec::retrieve(2),
            StageSpec::generate(StageKind::Infer, &["local"]),
            StageSpec::generate(StageKind::Evaluate, &["judge"]),
        ],
        1000,
        SecurityTier::Controlled,
    );
    let with_eval = o.execute(&plan(&h), "cryogenic schedule").await.unwrap();
    let mut plain = h.clone();
    plain.stack.pop();
    plain.budgets.remove(&2);
    let without = o.execute(&plan(&plain), "cryogenic schedule").await.unwrap();
    assert_eq!(with_eval.text, without.text);
    assert_eq!(with_eval.traces[2].verdict.as_deref(), Some("ok"));
    assert_eq!(with_eval.traces[2].status, StageStatus::Ok);
}

#[tokio::test]
async fn tier_partition_leaves_public_without_context() {
    let o = orchestrator(BackendRegistry::new().with(MockBackend::new("local")));
    let h = header(
        vec![StageSpec::retrieve(8), StageSpec::generate(StageKind::Infer, &["local"])],
        1000,
        SecurityTier::Public,
    );
    let a = o.execute(&plan(&h), "cryogenic helium refrigerator").await.unwrap();
    // Only the public chunk is eligible, whatever its relevance.
    assert_eq!(a.traces[0].retrieval.as_ref().unwrap().eligible, 1);
    assert!(a.citations.iter().all(|c| c.source_url.contains("/pub/")));
    assert!(a.traces.iter().flat_map(|t| &t.chunk_ids_used).all(|id| id == "cavity#0000"));
}

#[tokio::test]
async fn tier_with_no_eligible_entries() {
    let embedder = HashEmbedder::new(DIM);
    let mut idx = SearchIndex::empty(&embedder, ChunkPolicy::default());
    for c in chunk_text("secret", "cryogenic helium plan", SecurityTier::Controlled, &ChunkPolicy::default()) {
        let v = embed_hash(&c.text, DIM).unwrap();
        idx.insert(c, v, "https://ex.org/ctrl").unwrap();
    }
    let o = Orchestrator::new(
        BackendRegistry::new().with(MockBackend::new("local")),
        Arc::new(idx),
        Arc::new(embedder),
        PlanDefaults::new("local"),
    );
    let a = o.ask(None, SecurityTier::Public, "cryogenic helium").await.unwrap();
    assert!(a.citations.is_empty());
    let r = a.traces[0].retrieval.as_ref().unwrap();
    assert_eq!((r.status, r.eligible), (SearchStatus::NoEligible, 0));
    assert_eq!(a.text, mock_output("local", "Question: cryogenic helium"));
}

#[tokio::test]
async fn failed_infer_keeps_every_trace() {
    let reg = BackendRegistry::new()
        .with(MockBackend::new("down").failing(true))
        .with(MockBackend::new("judge"));
    let o = orchestrator(reg);
    let h = header(
        vec![
            StageSpec::retrieve(2),
            StageSpec::generate(StageKind::Infer, &["down"]),
            StageSpec::generate(StageKind::Evaluate, &["judge"]),
        ],
        1000,
        SecurityTier::Controlled,
    );
    let err = o.execute(&plan(&h), "booster").await.unwrap_err();
    assert_eq!(err.stage_index, 1);
    assert_eq!(err.traces.len(), 3);
    assert_eq!(
        err.traces.iter().map(|t| t.status).collect::<Vec<_>>(),
        [StageStatus::Ok, StageStatus::Failed, StageStatus::Skipped]
    );
    assert_eq!(err.to_json(false)["error"], "stage_failed");
}

#[tokio::test]
async fn budget_too_small_fails_infer() {
    let o = orchestrator(BackendRegistry::new().with(MockBackend::new("local")));
    let mut h = header(
        vec![StageSpec::retrieve(2), StageSpec::generate(StageKind::Infer, &["local"])],
        1000,
        SecurityTier::Controlled,
    );
    h.budgets.insert(1, 5);
    let err = o.execute(&plan(&h), "booster").await.unwrap_err();
    assert!(err.reason.contains("budget"));
    assert_eq!(err.traces[1].input_tokens, 0);
}

#[tokio::test]
async fn summarize_replaces_text_and_degrades() {
    let reg = BackendRegistry::new()
        .with(MockBackend::new("local"))
        .with(Fixed("short", "tl;dr"))
        .with(MockBackend::new("down").failing(true));
    let o = orchestrator(reg);
    let stack = |summarizer: &'static str| {
        vec![
            StageSpec::retrieve(3),
            StageSpec::generate(StageKind::Summarize, &[summarizer]),
            StageSpec::generate(StageKind::Infer, &["local"]),
        ]
    };
    let ok = o.execute(&plan(&header(stack("short"), 1000, SecurityTier::Controlled)), "booster").await.unwrap();
    assert_eq!(ok.traces[1].status, StageStatus::Ok);
    assert_eq!(ok.traces[1].backend_used.as_deref(), Some("short"));
    // Each cited chunk was framed with its summary instead of its text.
    let per_chunk = count_tokens("tl;dr") + PROVENANCE_TOKENS;
    assert_eq!(ok.traces[2].input_tokens, 3 * per_chunk + count_tokens("Question: booster"));

    let degraded = o.execute(&plan(&header(stack("down"), 1000, SecurityTier::Controlled)), "booster").await.unwrap();
    assert_eq!(degraded.traces[1].status, StageStatus::Skipped);
    assert!(!degraded.traces[1].warnings.is_empty());
    assert_eq!(degraded.citations.len(), 3);
}

#[tokio::test]
async fn summarize_budget_drops_tail_chunks() {
    let reg = BackendRegistry::new().with(MockBackend::new("local")).with(Fixed("short", "tl;dr"));
    let o = orchestrator(reg);
    let mut h = header(
        vec![
            StageSpec::retrieve(3),
            StageSpec::generate(StageKind::Summarize, &["short"]),
            StageSpec::generate(StageKind::Infer, &["local"]),
        ],
        1000,
        SecurityTier::Controlled,
    );
    // The top hit for "booster" is the cavity chunk; one token of slack admits nothing else.
    let budget = count_tokens(DOCS[0].2) + 1;
    h.budgets.insert(1, budget);
    let a = o.execute(&plan(&h), "booster").await.unwrap();
    assert_eq!(a.traces[1].chunk_ids_used, ["cavity#0000"]);
    assert_eq!(a.citations.len(), 1);
    assert!(a.traces[1].input_tokens <= budget);
}

#[test]
fn verdict_parsing() {
    assert_eq!(parse_verdict("Verdict: unsupported\nwhy"), Some("unsupported".into()));
    assert_eq!(parse_verdict("no idea"), None);
    assert_eq!(parse_verdict("  verdict:ok"), Some("ok".into()));
}

#[test]
fn provenance_ids_parse_from_prompts() {
    let ctx = assemble_context(
        &[ContextChunk::new("x#0001", "u", "t", SecurityTier::Public), ContextChunk::new("y#0002", "v", "t", SecurityTier::Public)],
        100,
        "q",
    )
    .unwrap();
    let ids: Vec<&str> = ctx.text.lines().filter_map(parse_provenance_line).map(|(i, _)| i).collect();
    assert_eq!(ids, ["x#0001", "y#0002"]);
    assert_eq!(mock_output("m", &ctx.text), "MOCK[m]: x#0001, y#0002\nQuestion: q");
}
