//! Generation and embedding backends.

mod mock;
mod openai;
mod throughput;
mod tokens;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

pub use self::mock::{mock_output, MockBackend};
pub use self::openai::{ChatCompletion, ChatMessage, OpenAiClient, RemoteEmbedder};
pub use self::throughput::{
    measure_throughput, rank_by_mean, render_report, ThroughputReport, ThroughputSample,
    ThroughputSummary,
};
pub use self::tokens::{count_tokens, piece_tokens};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub text: String,
    pub usage: Usage,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenParams {
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("HTTP {code}: {body}")]
    HttpStatus { code: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted {
        attempts: u32,
        last: Box<BackendError>,
    },
    #[error("embedding dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("backend `{0}` is configured to fail")]
    ForcedFailure(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
}

impl BackendError {
    fn is_retryable(&self) -> bool {
        match self {
            BackendError::Timeout | BackendError::Transport(_) => true,
            BackendError::HttpStatus { code, .. } => *code >= 500 || *code == 429,
            _ => false,
        }
    }
}

/// Anything that turns a prompt into text.
#[async_trait]
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    async fn generate(&self, prompt: &str, params: &GenParams) -> Result<Generation, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    OpenaiCompatible,
}

/// One `[backends.<name>]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    /// Filled from the section key.
    #[serde(skip)]
    pub name: String,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Mock only: fixed latency per request.
    #[serde(default)]
    pub delay_ms: u64,
    /// Mock only: every request fails.
    #[serde(default)]
    pub fail: bool,
}

fn default_timeout_ms() -> u64 {
    60_000
}
fn default_max_retries() -> u32 {
    2
}

impl BackendConfig {
    pub fn mock(name: impl Into<String>) -> Self {
        BackendConfig {
            name: name.into(),
            kind: BackendKind::Mock,
            base_url: None,
            model: None,
            api_key_env: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            delay_ms: 0,
            fail: false,
        }
    }

    pub fn openai_compatible(
        name: impl Into<String>,
        base_url: impl Into<String>,
        model: impl Into<String>,
    ) -> Self {
        BackendConfig {
            kind: BackendKind::OpenaiCompatible,
            base_url: Some(base_url.into()),
            model: Some(model.into()),
            ..BackendConfig::mock(name)
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.kind == BackendKind::OpenaiCompatible
            && (self.base_url.is_none() || self.model.is_none())
        {
            return Err(BackendError::Config(format!(
                "backend `{}` needs base_url and model",
                self.name
            )));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Arc<dyn Backend>, BackendError> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::Mock => Arc::new(
                MockBackend::new(&self.name)
                    .with_delay(Duration::from_millis(self.delay_ms))
                    .failing(self.fail),
            ),
            BackendKind::OpenaiCompatible => Arc::new(OpenAiClient::new(self.clone())?),
        })
    }
}

/// Named backends available to the orchestrator.
#[derive(Clone, Default)]
pub struct BackendRegistry {
    backends: BTreeMap<String, Arc<dyn Backend>>,
}

impl std::fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.backends.keys()).finish()
    }
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_configs<'a>(
        configs: impl IntoIterator<Item = &'a BackendConfig>,
    ) -> Result<Self, BackendError> {
        let mut reg = Self::new();
        for c in configs {
            reg.insert(c.build()?);
        }
        Ok(reg)
    }

    pub fn insert(&mut self, backend: Arc<dyn Backend>) {
        self.backends.insert(backend.name().to_string(), backend);
    }

    pub fn with(mut self, backend: impl Backend + 'static) -> Self {
        self.insert(Arc::new(backend));
        self
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Backend>> {
        self.backends.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.backends.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.backends.keys().map(String::as_str)
    }
}
