//! Subcommand implementations. Each writes its report to `out` and maps
//! failures to an exit code through [`CliError`].

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use corpusforge_core::backends::{
    measure_throughput, rank_by_mean, render_report, BackendRegistry, GenParams,
};
use corpusforge_core::corpus::{
    ingest_directory, stats_report, CorpusError, CorpusLock, CorpusStore, HarvestSummary, StoreSink,
};
use corpusforge_core::crawl::{crawl, CrawlReport, HttpFetcher};
use corpusforge_core::index::{build_index, BuildSummary, SearchIndex};
use corpusforge_core::orchestrator::{AskError, Orchestrator};
use corpusforge_core::SecurityTier;
use serde_json::{json, Value};

use crate::config::{AppConfig, ConfigError};
use crate::server::{self, AppState, AuthConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration or arguments; exit 2.
    #[error("{0}")]
    Usage(String),
    /// The command ran and failed; exit 1.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

fn emit(out: &mut (dyn Write + Send), text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(failed)
}

fn lock(dir: &Path) -> Result<CorpusLock, CliError> {
    CorpusLock::acquire(dir).map_err(failed)
}

#[derive(Debug)]
pub struct HarvestRun {
    pub report: CrawlReport,
    pub stored: HarvestSummary,
}

/// Crawl, extract and store. Fails when crawl errors exceed `max_errors`;
/// the report is printed either way.
pub async fn harvest(config: &AppConfig, out: &mut (dyn Write + Send)) -> Result<HarvestRun, CliError> {
    let seed = config
        .crawl
        .as_ref()
        .ok_or_else(|| CliError::Usage("harvest needs a [crawl] section".into()))?;
    let converters = config.converters()?;
    let corpus_dir = &config.paths.corpus_dir;
    let _lock = lock(corpus_dir)?;
    let mut store = CorpusStore::open(corpus_dir).map_err(failed)?;
    let fetcher = Arc::new(HttpFetcher::new(&seed.user_agent, seed.fetch_timeout()).map_err(failed)?);

    let mut sink = StoreSink::new(&mut store, &converters, &config.tiers.rules);
    let report = crawl(seed, fetcher, &mut sink)
        .await
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let stored = std::mem::take(&mut sink.summary);
    store.save_crawl_stats(&report.stats).map_err(failed)?;

    emit(out, &stats_report(store.entries(), Some(&report.stats)))?;
    emit(
        out,
        &format!(
            "stored: {} added, {} aliased, {} unchanged, {} failed\n",
            stored.added,
            stored.aliased,
            stored.unchanged,
            stored.failed.len()
        ),
    )?;
    for (url, reason) in &stored.failed {
        emit(out, &format!("  failed {url}: {reason}\n"))?;
    }
    if report.stats.errors > seed.max_errors {
        return Err(CliError::Failed(format!(
            "{} errors exceed max_errors = {}",
            report.stats.errors, seed.max_errors
        )));
    }
    Ok(HarvestRun { report, stored })
}

/// Chunk and embed the whole corpus, replacing the index directory contents.
pub async fn index(config: &AppConfig, out: &mut (dyn Write + Send)) -> Result<BuildSummary, CliError> {
    let policy = config.chunk_policy().map_err(|e| CliError::Usage(e.to_string()))?;
    let embedder = config.embedder()?;
    let corpus_dir = &config.paths.corpus_dir;
    let _lock = lock(corpus_dir)?;
    let store = load_store(corpus_dir)?;
    if store.entries().is_empty() {
        return Err(CliError::Failed(format!("corpus at {} is empty", corpus_dir.display())));
    }
    let (index, summary) = build_index(&store, embedder.as_ref(), &policy).await.map_err(failed)?;
    if index.is_empty() {
        return Err(CliError::Failed("no chunk could be embedded".into()));
    }
    index.save(&config.paths.index_dir).map_err(failed)?;
    emit(
        out,
        &format!(
            "documents: {}\nchunks: {}\nskipped_chunks: {}\nembedder: {}\nindex: {}\n",
            summary.documents,
            summary.chunks,
            summary.skipped_chunks,
            index.meta.embedder,
            config.paths.index_dir.display()
        ),
    )?;
    Ok(summary)
}

fn load_store(dir: &Path) -> Result<CorpusStore, CliError> {
    match CorpusStore::load(dir) {
        Ok(s) => Ok(s),
        Err(CorpusError::Io { path, source }) if source.kind() == std::io::ErrorKind::NotFound => Err(
            CliError::Failed(format!("no corpus at {}; run `corpusforge harvest` first", path.display())),
        ),
        Err(e) => Err(failed(e)),
    }
}

/// Loads the index and backends and checks the index was built with the
/// configured embedder.
pub fn load_orchestrator(config: &AppConfig) -> Result<Orchestrator, CliError> {
    let embedder = config.embedder()?;
    let defaults = config.plan_defaults()?;
    let backends = BackendRegistry::from_configs(config.backends.values()).map_err(|e| CliError::Usage(e.to_string()))?;
    let dir = &config.paths.index_dir;
    let index = SearchIndex::load(dir)
        .map_err(|e| CliError::Failed(format!("cannot load index at {}: {e}", dir.display())))?;
    if index.meta.embedder != embedder.describe() || index.meta.dimension != embedder.dimension() {
        return Err(CliError::Usage(format!(
            "index was built with {} (dimension {}) but the config selects {}; rerun `corpusforge index`",
            index.meta.embedder,
            index.meta.dimension,
            embedder.describe()
        )));
    }
    Ok(Orchestrator::new(backends, Arc::new(index), embedder, defaults))
}

pub fn serving_state(config: &AppConfig) -> Result<AppState, CliError> {
    let orchestrator = load_orchestrator(config)?;
    let store = load_store(&config.paths.corpus_dir)?;
    let auth = AuthConfig {
        tokens: config.serve.tokens.clone(),
        allow_anonymous: config.serve.allow_anonymous,
    };
    Ok(AppState::new(orchestrator, store, auth))
}

pub fn app(config: &AppConfig) -> Result<axum::Router, CliError> {
    let state = Arc::new(serving_state(config)?);
    Ok(server::router(state, config.serve.ui_dir.clone()))
}

/// Serves until interrupted. The bound address is printed first so callers
/// can use port 0.
pub async fn serve(config: &AppConfig, listen: Option<&str>, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let app = app(config)?;
    let addr = listen.unwrap_or(&config.serve.listen);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::Failed(format!("cannot listen on {addr}: {e}")))?;
    let local = listener.local_addr().map_err(failed)?;
    emit(out, &format!("listening on http://{local}\n"))?;
    out.flush().map_err(failed)?;
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(failed)
}

#[derive(Debug, Clone, Default)]
pub struct AskArgs {
    pub question: String,
    pub local: bool,
    pub url: Option<String>,
    pub token: Option<String>,
    pub k: Option<usize>,
    pub backend: Option<String>,
    pub trace: bool,
}

/// The header implied by `--k` / `--backend`, or none to use the defaults.
pub fn header_from_flags(config: &AppConfig, k: Option<usize>, backend: Option<&str>) -> Result<Option<Value>, CliError> {
    if k.is_none() && backend.is_none() {
        return Ok(None);
    }
    let defaults = config.plan_defaults()?;
    let backend = backend.unwrap_or(&defaults.default_backend);
    Ok(Some(json!({
        "stack": [
            {"kind": "retrieve", "params": {"k": k.unwrap_or(defaults.retrieve_k)}},
            {"kind": "infer", "backends": [backend]},
        ],
        "budgets": {"0": defaults.retrieve_budget, "1": defaults.infer_budget},
    })))
}

/// Terminal client of `/ask`, remote by default or in-process with `local`.
pub async fn ask(config: &AppConfig, args: &AskArgs, out: &mut (dyn Write + Send)) -> Result<Value, CliError> {
    if args.k == Some(0) {
        return Err(CliError::Usage("--k must be positive".into()));
    }
    let header = header_from_flags(config, args.k, args.backend.as_deref())?;
    let body = if args.local {
        ask_local(config, args, header.as_ref()).await?
    } else {
        ask_remote(config, args, header).await?
    };
    emit(out, &render_answer(&body, args.trace))?;
    Ok(body)
}

async fn ask_local(config: &AppConfig, args: &AskArgs, header: Option<&Value>) -> Result<Value, CliError> {
    let tier = match &args.token {
        Some(t) => *config
            .serve
            .tokens
            .get(t)
            .ok_or_else(|| CliError::Failed("unknown token".into()))?,
        None if config.serve.allow_anonymous => SecurityTier::Public,
        None => return Err(CliError::Failed("a token is required".into())),
    };
    let orchestrator = load_orchestrator(config)?;
    match orchestrator.ask(header, tier, &args.question).await {
        Ok(answer) => Ok(answer.to_json(false)),
        Err(AskError::Header(e)) => {
            let msg = format!("{}: {e}", e.code());
            Err(match e {
                corpusforge_core::orchestrator::McpError::UnknownBackend(_) => CliError::Usage(msg),
                _ => CliError::Failed(msg),
            })
        }
        Err(AskError::Execution(f)) => Err(CliError::Failed(f.to_string())),
    }
}

async fn ask_remote(config: &AppConfig, args: &AskArgs, header: Option<Value>) -> Result<Value, CliError> {
    let base = args
        .url
        .clone()
        .unwrap_or_else(|| format!("http://{}", config.serve.listen));
    let mut body = json!({"question": args.question});
    if let Some(h) = header {
        body["mcp"] = h;
    }
    let client = reqwest::Client::new();
    let mut req = client.post(format!("{}/ask", base.trim_end_matches('/'))).json(&body);
    if let Some(t) = &args.token {
        req = req.bearer_auth(t);
    }
    let resp = req
        .send()
        .await
        .map_err(|e| CliError::Failed(format!("cannot reach {base}: {e}")))?;
    let status = resp.status();
    let text = resp.text().await.map_err(failed)?;
    let value: Value = serde_json::from_str(&text).unwrap_or_else(|_| json!({"message": text}));
    if status.is_success() {
        return Ok(value);
    }
    let code = value["error"].as_str().unwrap_or("error");
    let msg = format!("{status}: {code}: {}", value["message"].as_str().unwrap_or(""));
    Err(if code == "unknown_backend" {
        CliError::Usage(msg)
    } else {
        CliError::Failed(msg)
    })
}

/// Answer, then sources, then optionally one row per stage.
pub fn render_answer(body: &Value, trace: bool) -> String {
    let mut s = String::new();
    s.push_str(body["answer"].as_str().unwrap_or("").trim_end());
    s.push_str("\n\nSources:\n");
    let citations = body["citations"].as_array().map(Vec::as_slice).unwrap_or(&[]);
    if citations.is_empty() {
        s.push_str("  (none)\n");
    }
    for (i, c) in citations.iter().enumerate() {
        s.push_str(&format!(
            "  [{}] {} ({})\n",
            i + 1,
            c["source_url"].as_str().unwrap_or("?"),
            c["chunk_id"].as_str().unwrap_or("?")
        ));
    }
    if trace {
        s.push_str(&format!(
            "\n{:<5} {:<10} {:<16} {:>7} {:>7} {:<8} {:>6}\n",
            "stage", "kind", "backend", "in", "out", "status", "chunks"
        ));
        for t in body["traces"].as_array().map(Vec::as_slice).unwrap_or(&[]) {
            s.push_str(&format!(
                "{:<5} {:<10} {:<16} {:>7} {:>7} {:<8} {:>6}\n",
                t["stage_index"].as_u64().unwrap_or(0),
                t["kind"].as_str().unwrap_or("?"),
                t["backend_used"].as_str().unwrap_or("-"),
                t["input_tokens"].as_u64().unwrap_or(0),
                t["output_tokens"].as_u64().unwrap_or(0),
                t["status"].as_str().unwrap_or("?"),
                t["chunk_ids_used"].as_array().map_or(0, Vec::len)
            ));
        }
    }
    s
}

/// Non-empty lines of a prompt file.
pub fn read_prompts(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read prompts {}: {e}", path.display())))?;
    let prompts: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if prompts.is_empty() {
        return Err(CliError::Usage(format!("{} holds no prompts", path.display())));
    }
    Ok(prompts)
}

/// Throughput of each named backend (all configured ones when empty).
/// Any failed request makes the command fail after the report is printed.
pub async fn bench(
    config: &AppConfig,
    backends: &[String],
    prompts: &Path,
    repetitions: usize,
    out: &mut (dyn Write + Send),
) -> Result<(), CliError> {
    if repetitions == 0 {
        return Err(CliError::Usage("-n must be at least 1".into()));
    }
    let prompts = read_prompts(prompts)?;
    let names: Vec<String> = if backends.is_empty() {
        config.backends.keys().cloned().collect()
    } else {
        backends.to_vec()
    };
    if names.is_empty() {
        return Err(CliError::Usage("no backends configured".into()));
    }
    let mut reports = Vec::new();
    for name in &names {
        let cfg = config
            .backends
            .get(name)
            .ok_or_else(|| CliError::Usage(format!("unknown backend `{name}`")))?;
        let backend = cfg.build().map_err(|e| CliError::Usage(e.to_string()))?;
        reports.push(measure_throughput(backend.as_ref(), &prompts, repetitions, &GenParams::default()).await);
    }
    rank_by_mean(&mut reports);
    emit(out, &render_report(&reports))?;
    let errors: usize = reports.iter().map(|r| r.errors.len()).sum();
    if errors > 0 {
        return Err(CliError::Failed(format!("{errors} requests failed")));
    }
    Ok(())
}

pub async fn ingest(config: &AppConfig, dir: &Path, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let converters = config.converters()?;
    let corpus_dir = &config.paths.corpus_dir;
    let _lock = lock(corpus_dir)?;
    let mut store = CorpusStore::open(corpus_dir).map_err(failed)?;
    let s = ingest_directory(&mut store, dir, &converters, &config.tiers.rules)
        .await
        .map_err(failed)?;
    emit(
        out,
        &format!(
            "ingested: {} added, {} aliased, {} unchanged, {} skipped, {} failed\n",
            s.added,
            s.aliased,
            s.unchanged,
            s.skipped,
            s.failed.len()
        ),
    )?;
    for (path, reason) in &s.failed {
        emit(out, &format!("  failed {}: {reason}\n", path.display()))?;
    }
    Ok(())
}

pub fn stats(config: &AppConfig, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let store = load_store(&config.paths.corpus_dir)?;
    let crawl = store.load_crawl_stats().map_err(failed)?;
    emit(out, &stats_report(store.entries(), crawl.as_ref()))
}

pub fn default_config_path() -> PathBuf {
    PathBuf::from("corpusforge.toml")
}
