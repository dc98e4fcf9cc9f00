//! The single TOML configuration file shared by every subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use corpusforge_core::backends::{BackendConfig, BackendKind, OpenAiClient, RemoteEmbedder};
use corpusforge_core::corpus::TierRule;
use corpusforge_core::crawl::{DocExtension, SeedConfig};
use corpusforge_core::extract::{ConverterSpec, Converters, OutputKind};
use corpusforge_core::index::{ChunkPolicy, Embedder, HashEmbedder, DEFAULT_DIMENSION};
use corpusforge_core::orchestrator::PlanDefaults;
use corpusforge_core::SecurityTier;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(default = "default_corpus_dir")]
    pub corpus_dir: PathBuf,
    /// Directory holding the index files.
    #[serde(default = "default_index_dir")]
    pub index_dir: PathBuf,
}

fn default_corpus_dir() -> PathBuf {
    PathBuf::from("corpus")
}
fn default_index_dir() -> PathBuf {
    PathBuf::from("index")
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            corpus_dir: default_corpus_dir(),
            index_dir: default_index_dir(),
        }
    }
}

/// One `[converters.<format>]` section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConverterConfig {
    /// Shell command with `{input}` and `{output}` placeholders.
    pub command: String,
    #[serde(default = "default_converter_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub output: OutputKind,
}

fn default_converter_timeout_ms() -> u64 {
    120_000
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TiersConfig {
    /// First matching prefix wins; everything else is controlled.
    #[serde(default)]
    pub rules: Vec<TierRule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexConfig {
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default = "default_target_tokens")]
    pub target_tokens: usize,
    #[serde(default = "default_overlap_tokens")]
    pub overlap_tokens: usize,
    /// Name of an openai_compatible backend to embed with; the hash
    /// embedder is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder: Option<String>,
}

fn default_dimension() -> usize {
    DEFAULT_DIMENSION
}
fn default_target_tokens() -> usize {
    ChunkPolicy::default().target_tokens
}
fn default_overlap_tokens() -> usize {
    ChunkPolicy::default().overlap_tokens
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            dimension: default_dimension(),
            target_tokens: default_target_tokens(),
            overlap_tokens: default_overlap_tokens(),
            embedder: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Requests without a bearer token get the public tier. When false they
    /// are rejected with 401.
    #[serde(default = "default_true")]
    pub allow_anonymous: bool,
    /// Defaults to the first backend by name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_backend: Option<String>,
    #[serde(default = "default_retrieve_k")]
    pub retrieve_k: usize,
    #[serde(default = "default_retrieve_budget")]
    pub retrieve_budget: usize,
    #[serde(default = "default_infer_budget")]
    pub infer_budget: usize,
    /// Static files served under `/ui/`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ui_dir: Option<PathBuf>,
    /// Bearer token to session tier.
    #[serde(default)]
    pub tokens: BTreeMap<String, SecurityTier>,
}

fn default_listen() -> String {
    "127.0.0.1:8080".to_string()
}
fn default_true() -> bool {
    true
}
fn default_retrieve_k() -> usize {
    8
}
fn default_retrieve_budget() -> usize {
    2048
}
fn default_infer_budget() -> usize {
    4096
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            listen: default_listen(),
            allow_anonymous: true,
            default_backend: None,
            retrieve_k: default_retrieve_k(),
            retrieve_budget: default_retrieve_budget(),
            infer_budget: default_infer_budget(),
            ui_dir: None,
            tokens: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crawl: Option<SeedConfig>,
    #[serde(default)]
    pub converters: BTreeMap<DocExtension, ConverterConfig>,
    #[serde(default)]
    pub tiers: TiersConfig,
    #[serde(default)]
    pub index: IndexConfig,
    #[serde(default)]
    pub serve: ServeConfig,
    #[serde(default)]
    pub backends: BTreeMap<String, BackendConfig>,
}

impl AppConfig {
    /// Parses TOML text. Paths are left as written.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config: AppConfig = toml::from_str(text)?;
        for (name, backend) in &mut config.backends {
            backend.name = name.clone();
        }
        config.validate()?;
        Ok(config)
    }

    pub fn render(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Reads a config file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut self.paths.corpus_dir);
        resolve(&mut self.paths.index_dir);
        if let Some(ui) = &mut self.serve.ui_dir {
            resolve(ui);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        for backend in self.backends.values() {
            if let Err(e) = backend.validate() {
                return invalid(e.to_string());
            }
        }
        if let Some(name) = &self.serve.default_backend {
            if !self.backends.contains_key(name) {
                return invalid(format!("serve.default_backend `{name}` is not a configured backend"));
            }
        }
        if let Some(name) = &self.index.embedder {
            match self.backends.get(name) {
                Some(b) if b.kind == BackendKind::OpenaiCompatible => {}
                Some(_) => return invalid(format!("index.embedder `{name}` must be an openai_compatible backend")),
                None => return invalid(format!("index.embedder `{name}` is not a configured backend")),
            }
        }
        if self.index.dimension == 0 {
            return invalid("index.dimension must be positive".into());
        }
        if let Err(e) = self.chunk_policy() {
            return invalid(e.to_string());
        }
        self.converter_specs()?;
        if self.serve.retrieve_k == 0 || self.serve.retrieve_budget == 0 || self.serve.infer_budget == 0 {
            return invalid("serve.retrieve_k and budgets must be positive".into());
        }
        Ok(())
    }

    pub fn chunk_policy(&self) -> Result<ChunkPolicy, corpusforge_core::index::ChunkPolicyError> {
        ChunkPolicy::new(self.index.target_tokens, self.index.overlap_tokens)
    }

    pub fn converter_specs(&self) -> Result<Vec<ConverterSpec>, ConfigError> {
        self.converters
            .iter()
            .map(|(format, c)| {
                ConverterSpec::new(*format, &c.command, Duration::from_millis(c.timeout_ms), c.output)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))
            })
            .collect()
    }

    /// Converters working in a scratch directory under the system temp dir.
    pub fn converters(&self) -> Result<Converters, ConfigError> {
        let workdir = std::env::temp_dir().join("corpusforge-convert");
        Ok(Converters::new(self.converter_specs()?, workdir))
    }

    pub fn embedder(&self) -> Result<Arc<dyn Embedder>, ConfigError> {
        match &self.index.embedder {
            None => Ok(Arc::new(HashEmbedder::new(self.index.dimension))),
            Some(name) => {
                let backend = self.backends.get(name).cloned().ok_or_else(|| {
                    ConfigError::Invalid(format!("index.embedder `{name}` is not a configured backend"))
                })?;
                let client = OpenAiClient::new(backend).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(Arc::new(RemoteEmbedder::new(client, self.index.dimension)))
            }
        }
    }

    pub fn plan_defaults(&self) -> Result<PlanDefaults, ConfigError> {
        let backend = match &self.serve.default_backend {
            Some(b) => b.clone(),
            None => self
                .backends
                .keys()
                .next()
                .cloned()
                .ok_or_else(|| ConfigError::Invalid("no [backends.<name>] section configured".into()))?,
        };
        Ok(PlanDefaults {
            retrieve_k: self.serve.retrieve_k,
            retrieve_budget: self.serve.retrieve_budget,
            infer_budget: self.serve.infer_budget,
            ..PlanDefaults::new(backend)
        })
    }
}
