//! Client for servers speaking the OpenAI-compatible chat/embeddings
//! protocol (vLLM, Ollama, llama.cpp server and hosted APIs).

use std::future::Future;
use std::time::Duration;

use async_trait::async_trait;
use futures::StreamExt;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::debug;

use super::{count_tokens, Backend, BackendConfig, BackendError, GenParams, Generation, Usage};
use crate::index::{EmbedError, Embedder, EmbeddingVector};

const BACKOFF_BASE: Duration = Duration::from_millis(250);
const BODY_EXCERPT: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatCompletion {
    pub text: String,
    pub usage: Usage,
    /// Requests sent, including the successful one.
    pub attempts: u32,
    /// False when the server sent no usage and it was estimated locally.
    pub usage_reported: bool,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: usize,
    #[serde(default)]
    completion_tokens: usize,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireCompletion {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireEmbedding {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f32>,
}

#[derive(Deserialize)]
struct WireEmbeddings {
    data: Vec<WireEmbedding>,
}

#[derive(Debug, Clone)]
pub struct OpenAiClient {
    config: BackendConfig,
    http: reqwest::Client,
    api_key: Option<String>,
}

fn transport(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout
    } else {
        BackendError::Transport(e.to_string())
    }
}

fn excerpt(body: &[u8]) -> String {
    let s = String::from_utf8_lossy(body);
    s.chars().take(BODY_EXCERPT).collect()
}

impl OpenAiClient {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let http = reqwest::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(OpenAiClient {
            config,
            http,
            api_key,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn endpoint(&self, path: &str) -> String {
        let base = self.config.base_url.as_deref().unwrap_or_default();
        format!("{}/v1/{path}", base.trim_end_matches('/'))
    }

    fn model(&self) -> &str {
        self.config.model.as_deref().unwrap_or_default()
    }

    /// Runs `op`, retrying retryable failures with 250 ms * 2^n backoff.
    async fn with_retries<T, F, Fut>(&self, mut op: F) -> Result<(T, u32), BackendError>
    where
        F: FnMut() -> Fut,
        Fut: Future<Output = Result<T, BackendError>>,
    {
        let mut attempt: u32 = 0;
        loop {
            attempt += 1;
            match op().await {
                Ok(v) => return Ok((v, attempt)),
                Err(e) if e.is_retryable() && attempt <= self.config.max_retries => {
                    let wait = BACKOFF_BASE * 2u32.pow(attempt - 1);
                    debug!(backend = %self.config.name, attempt, ?wait, "retrying: {e}");
                    tokio::time::sleep(wait).await;
                }
                Err(e) if e.is_retryable() && attempt > 1 => {
                    return Err(BackendError::RetriesExhausted {
                        attempts: attempt,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }

    async fn post(&self, path: &str, body: &Value) -> Result<reqwest::Response, BackendError> {
        let mut req = self.http.post(self.endpoint(path)).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(transport)?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.bytes().await.unwrap_or_default();
            return Err(BackendError::HttpStatus {
                code: status.as_u16(),
                body: excerpt(&body),
            });
        }
        Ok(resp)
    }

    async fn post_read(&self, path: &str, body: &Value) -> Result<Vec<u8>, BackendError> {
        let resp = self.post(path, body).await?;
        Ok(resp.bytes().await.map_err(transport)?.to_vec())
    }

    fn chat_body(&self, messages: &[ChatMessage], params: &GenParams, stream: bool) -> Value {
        let mut body = json!({
            "model": self.model(),
            "messages": messages,
            "stream": stream,
        });
        if let Some(t) = params.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(m) = params.max_tokens {
            body["max_tokens"] = json!(m);
        }
        if stream {
            body["stream_options"] = json!({ "include_usage": true });
        }
        body
    }

    fn estimated_usage(messages: &[ChatMessage], text: &str) -> Usage {
        Usage {
            prompt_tokens: messages.iter().map(|m| count_tokens(&m.content)).sum(),
            completion_tokens: count_tokens(text),
        }
    }

    /// Non-streaming `POST {base_url}/v1/chat/completions`.
    pub async fn chat_complete(
        &self,
        messages: &[ChatMessage],
        params: &GenParams,
    ) -> Result<ChatCompletion, BackendError> {
        let body = self.chat_body(messages, params, false);
        let (bytes, attempts) = self
            .with_retries(|| self.post_read("chat/completions", &body))
            .await?;
        let parsed: WireCompletion = serde_json::from_slice(&bytes)
            .map_err(|e| BackendError::MalformedResponse(format!("{e}: {}", excerpt(&bytes))))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::MalformedResponse("no choices in response".into()))?;
        let (usage, usage_reported) = match parsed.usage {
            Some(u) => (
                Usage {
                    prompt_tokens: u.prompt_tokens,
                    completion_tokens: u.completion_tokens,
                },
                true,
            ),
            None => (Self::estimated_usage(messages, &text), false),
        };
        Ok(ChatCompletion {
            text,
            usage,
            attempts,
            usage_reported,
        })
    }

    /// Streaming variant: every content delta is passed to `on_delta` as it
    /// arrives and the assembled text is returned.
    pub async fn chat_complete_stream(
        &self,
        messages: &[ChatMessage],
        params: &GenParams,
        on_delta: &mut (dyn FnMut(&str) + Send),
    ) -> Result<ChatCompletion, BackendError> {
        let body = self.chat_body(messages, params, true);
        let (resp, attempts) = self
            .with_retries(|| self.post("chat/completions", &body))
            .await?;

        let mut text = String::new();
        let mut usage = None;
        let mut pending: Vec<u8> = Vec::new();
        let mut stream = resp.bytes_stream();
        let mut done = false;
        while let Some(chunk) = stream.next().await {
            pending.extend_from_slice(&chunk.map_err(transport)?);
            while let Some(pos) = pending.iter().position(|&b| b == b'\n') {
                let line: Vec<u8> = pending.drain(..=pos).collect();
                let line = String::from_utf8_lossy(&line);
                if handle_sse_line(line.trim_end(), &mut text, &mut usage, on_delta)? {
                    done = true;
                }
            }
            if done {
                break;
            }
        }
        if !done && !pending.is_empty() {
            let line = String::from_utf8_lossy(&pending).into_owned();
            handle_sse_line(line.trim_end(), &mut text, &mut usage, on_delta)?;
        }
        let usage_reported = usage.is_some();
        Ok(ChatCompletion {
            usage: usage.unwrap_or_else(|| Self::estimated_usage(messages, &text)),
            text,
            attempts,
            usage_reported,
        })
    }

    /// `POST {base_url}/v1/embeddings`; vectors come back unit-norm and in
    /// input order.
    pub async fn embed(
        &self,
        texts: &[String],
        expected_dim: usize,
    ) -> Result<Vec<EmbeddingVector>, BackendError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = json!({ "model": self.model(), "input": texts });
        let (bytes, _) = self
            .with_retries(|| self.post_read("embeddings", &body))
            .await?;
        let mut parsed: WireEmbeddings = serde_json::from_slice(&bytes)
            .map_err(|e| BackendError::MalformedResponse(format!("{e}: {}", excerpt(&bytes))))?;
        if parsed.data.len() != texts.len() {
            return Err(BackendError::MalformedResponse(format!(
                "{} embeddings for {} inputs",
                parsed.data.len(),
                texts.len()
            )));
        }
        if parsed.data.iter().all(|d| d.index.is_some()) {
            parsed.data.sort_by_key(|d| d.index);
        }
        parsed
            .data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != expected_dim {
                    return Err(BackendError::DimensionMismatch {
                        expected: expected_dim,
                        got: d.embedding.len(),
                    });
                }
                EmbeddingVector::normalized(d.embedding)
                    .map_err(|e| BackendError::MalformedResponse(e.to_string()))
            })
            .collect()
    }
}

/// Returns true on the `[DONE]` sentinel.
fn handle_sse_line(
    line: &str,
    text: &mut String,
    usage: &mut Option<Usage>,
    on_delta: &mut (dyn FnMut(&str) + Send),
) -> Result<bool, BackendError> {
    let Some(data) = line.strip_prefix("data:") else {
        return Ok(false);
    };
    let data = data.trim();
    if data == "[DONE]" {
        return Ok(true);
    }
    if data.is_empty() {
        return Ok(false);
    }
    let v: Value = serde_json::from_str(data)
        .map_err(|e| BackendError::MalformedResponse(format!("bad stream event: {e}")))?;
    if let Some(delta) = v
        .pointer("/choices/0/delta/content")
        .and_then(Value::as_str)
    {
        if !delta.is_empty() {
            on_delta(delta);
            text.push_str(delta);
        }
    }
    if let Some(u) = v.get("usage").filter(|u| !u.is_null()) {
        let u: WireUsage = serde_json::from_value(u.clone())
            .map_err(|e| BackendError::MalformedResponse(format!("bad usage: {e}")))?;
        *usage = Some(Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        });
    }
    Ok(false)
}

#[async_trait]
impl Backend for OpenAiClient {
    fn name(&self) -> &str {
        &self.config.name
    }

    async fn generate(&self, prompt: &str, params: &GenParams) -> Result<Generation, BackendError> {
        let c = self.chat_complete(&[ChatMessage::user(prompt)], params).await?;
        Ok(Generation {
            text: c.text,
            usage: c.usage,
        })
    }
}

/// Embedder backed by a remote `/v1/embeddings` endpoint.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    client: OpenAiClient,
    dimension: usize,
}

impl RemoteEmbedder {
    pub fn new(client: OpenAiClient, dimension: usize) -> Self {
        RemoteEmbedder { client, dimension }
    }
}

#[async_trait]
impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn describe(&self) -> String {
        format!("remote:{}", self.client.config.name)
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        self.client
            .embed(texts, self.dimension)
            .await
            .map_err(|e| EmbedError::Backend(e.to_string()))
    }
}
