use std::collections::VecDeque;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::{Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Router;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

/// One scripted reply, consumed in order regardless of endpoint.
#[derive(Debug, Clone)]
pub enum Scripted {
    Json { status: u16, body: Value },
    Text { status: u16, body: String },
    /// Server-sent events, one `data:` event per element.
    Stream { events: Vec<String> },
    Delayed(Duration, Box<Scripted>),
}

impl Scripted {
    pub fn chat(text: &str, prompt_tokens: usize, completion_tokens: usize) -> Self {
        Scripted::Json {
            status: 200,
            body: json!({
                "id": "chatcmpl-fixture",
                "object": "chat.completion",
                "model": "fixture",
                "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
                "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens, "total_tokens": prompt_tokens + completion_tokens}
            }),
        }
    }

    /// Content deltas followed by `[DONE]`.
    pub fn chat_stream(deltas: &[&str]) -> Self {
        let mut events: Vec<String> = vec![json!({"choices": [{"index": 0, "delta": {"role": "assistant"}}]}).to_string()];
        events.extend(
            deltas
                .iter()
                .map(|d| json!({"choices": [{"index": 0, "delta": {"content": d}}]}).to_string()),
        );
        events.push(json!({"choices": [{"index": 0, "delta": {}, "finish_reason": "stop"}]}).to_string());
        events.push("[DONE]".into());
        Scripted::Stream { events }
    }

    /// Embeddings listed in reverse index order, as some servers do.
    pub fn embeddings(vectors: &[Vec<f32>]) -> Self {
        let data: Vec<Value> = vectors
            .iter()
            .enumerate()
            .rev()
            .map(|(i, v)| json!({"object": "embedding", "index": i, "embedding": v}))
            .collect();
        Scripted::Json {
            status: 200,
            body: json!({"object": "list", "data": data, "model": "fixture"}),
        }
    }

    pub fn status(code: u16, body: &str) -> Self {
        Scripted::Text {
            status: code,
            body: body.into(),
        }
    }

    pub fn delayed(self, by: Duration) -> Self {
        Scripted::Delayed(by, Box::new(self))
    }
}

#[derive(Debug, Clone)]
pub struct RecordedCall {
    pub path: String,
    pub authorization: Option<String>,
    pub body: Value,
}

#[derive(Clone, Default)]
struct Shared {
    script: Arc<Mutex<VecDeque<Scripted>>>,
    calls: Arc<Mutex<Vec<RecordedCall>>>,
}

/// A scripted OpenAI-compatible server on an ephemeral localhost port.
pub struct OpenAiFixture {
    addr: SocketAddr,
    shared: Shared,
    task: JoinHandle<()>,
}

impl Drop for OpenAiFixture {
    fn drop(&mut self) {
        self.task.abort();
    }
}

impl OpenAiFixture {
    pub async fn start(script: Vec<Scripted>) -> Self {
        let shared = Shared::default();
        shared.script.lock().unwrap().extend(script);
        let app = Router::new().fallback(handle).with_state(shared.clone());
        let listener = TcpListener::bind("127.0.0.1:0").await.expect("bind openai fixture");
        let addr = listener.local_addr().expect("local addr");
        let task = tokio::spawn(async move {
            axum::serve(listener, app).await.expect("openai fixture");
        });
        OpenAiFixture { addr, shared, task }
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn push(&self, reply: Scripted) {
        self.shared.script.lock().unwrap().push_back(reply);
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.shared.calls.lock().unwrap().clone()
    }
}

async fn handle(State(shared): State<Shared>, req: Request) -> Response {
    let path = req.uri().path().to_string();
    let authorization = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|h| h.to_str().ok())
        .map(str::to_string);
    let bytes = axum::body::to_bytes(req.into_body(), 16 << 20).await.unwrap_or_default();
    let body = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    shared.calls.lock().unwrap().push(RecordedCall {
        path,
        authorization,
        body,
    });
    let next = shared.script.lock().unwrap().pop_front();
    match next {
        Some(reply) => render(reply).await,
        None => (StatusCode::INTERNAL_SERVER_ERROR, "script exhausted").into_response(),
    }
}

async fn render(mut reply: Scripted) -> Response {
    while let Scripted::Delayed(by, inner) = reply {
        tokio::time::sleep(by).await;
        reply = *inner;
    }
    match reply {
        Scripted::Json { status, body } => (
            StatusCode::from_u16(status).unwrap(),
            [(header::CONTENT_TYPE, "application/json")],
            body.to_string(),
        )
            .into_response(),
        Scripted::Text { status, body } => (StatusCode::from_u16(status).unwrap(), body).into_response(),
        Scripted::Stream { events } => {
            // One body frame per event, split mid-line to exercise reassembly.
            let frames = events.into_iter().flat_map(|e| {
                let line = format!("data: {e}\n\n");
                let mid = line.len() / 2;
                let mid = (mid..line.len()).find(|&i| line.is_char_boundary(i)).unwrap_or(line.len());
                [
                    Ok::<_, Infallible>(Bytes::from(line[..mid].to_string())),
                    Ok(Bytes::from(line[mid..].to_string())),
                ]
            });
            (
                [(header::CONTENT_TYPE, "text/event-stream")],
                Body::from_stream(futures::stream::iter(frames)),
            )
                .into_response()
        }
        Scripted::Delayed(..) => unreachable!("unwrapped above"),
    }
}
