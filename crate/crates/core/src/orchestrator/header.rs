use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::backends::{BackendRegistry, GenParams};
use crate::SecurityTier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Retrieve,
    Summarize,
    Infer,
    Evaluate,
}

impl StageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::Retrieve => "retrieve",
            StageKind::Summarize => "summarize",
            StageKind::Infer => "infer",
            StageKind::Evaluate => "evaluate",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "retrieve" => StageKind::Retrieve,
            "summarize" => StageKind::Summarize,
            "infer" => StageKind::Infer,
            "evaluate" => StageKind::Evaluate,
            _ => return None,
        })
    }

    /// Stages whose failure fails the whole request.
    pub fn is_mandatory(self) -> bool {
        matches!(self, StageKind::Retrieve | StageKind::Infer)
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub kind: StageKind,
    #[serde(default)]
    pub backends: Vec<String>,
    #[serde(default)]
    pub params: Map<String, Value>,
}

impl StageSpec {
    pub fn retrieve(k: usize) -> Self {
        let mut params = Map::new();
        params.insert("k".into(), Value::from(k));
        StageSpec {
            kind: StageKind::Retrieve,
            backends: Vec::new(),
            params,
        }
    }

    pub fn generate(kind: StageKind, backends: &[&str]) -> Self {
        StageSpec {
            kind,
            backends: backends.iter().map(|b| b.to_string()).collect(),
            params: Map::new(),
        }
    }

    /// Retrieval depth; validation guarantees it is a positive integer.
    pub fn k(&self) -> usize {
        self.params.get("k").and_then(Value::as_u64).unwrap_or(8) as usize
    }

    pub fn gen_params(&self) -> GenParams {
        GenParams {
            temperature: self.params.get("temperature").and_then(Value::as_f64),
            max_tokens: self
                .params
                .get("max_tokens")
                .and_then(Value::as_u64)
                .map(|n| n.min(u32::MAX as u64) as u32),
        }
    }
}

/// A validated per-request header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McpHeader {
    pub stack: Vec<StageSpec>,
    /// Stage index to maximum context tokens.
    pub budgets: BTreeMap<usize, usize>,
    pub security_tier: SecurityTier,
}

impl McpHeader {
    pub fn budget(&self, stage_index: usize) -> usize {
        self.budgets[&stage_index]
    }
}

/// What a request without a header gets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanDefaults {
    pub default_backend: String,
    pub retrieve_k: usize,
    pub retrieve_budget: usize,
    pub infer_budget: usize,
}

impl PlanDefaults {
    pub fn new(default_backend: impl Into<String>) -> Self {
        PlanDefaults {
            default_backend: default_backend.into(),
            retrieve_k: 8,
            retrieve_budget: 2048,
            infer_budget: 4096,
        }
    }

    pub fn header(&self, tier: SecurityTier) -> McpHeader {
        McpHeader {
            stack: vec![
                StageSpec::retrieve(self.retrieve_k),
                StageSpec::generate(StageKind::Infer, &[&self.default_backend]),
            ],
            budgets: BTreeMap::from([(0, self.retrieve_budget), (1, self.infer_budget)]),
            security_tier: tier,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum McpError {
    #[error("requested tier {requested} exceeds session tier {session}")]
    TierEscalation {
        requested: SecurityTier,
        session: SecurityTier,
    },
    #[error("stage stack is empty")]
    EmptyStack,
    #[error("no budget for stage {0}")]
    MissingBudget(usize),
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
    #[error("unknown stage kind `{0}`")]
    UnknownStageKind(String),
    #[error("malformed header: {0}")]
    Malformed(String),
}

impl McpError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            McpError::TierEscalation { .. } => "tier_escalation",
            McpError::EmptyStack => "empty_stack",
            McpError::MissingBudget(_) => "missing_budget",
            McpError::UnknownBackend(_) => "unknown_backend",
            McpError::UnknownStageKind(_) => "unknown_stage_kind",
            McpError::Malformed(_) => "malformed_header",
        }
    }
}

fn malformed(msg: impl Into<String>) -> McpError {
    McpError::Malformed(msg.into())
}

fn positive_int(v: &Value) -> Option<usize> {
    v.as_u64().filter(|&n| n > 0).map(|n| n as usize)
}

fn parse_stage(i: usize, raw: &Value, backends: &BackendRegistry) -> Result<StageSpec, McpError> {
    let obj = raw
        .as_object()
        .ok_or_else(|| malformed(format!("stage {i} is not an object")))?;
    if let Some(key) = obj.keys().find(|k| !["kind", "backends", "params"].contains(&k.as_str())) {
        return Err(malformed(format!("stage {i}: unknown field `{key}`")));
    }
    let kind_str = obj
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed(format!("stage {i}: missing `kind`")))?;
    let kind = StageKind::parse(kind_str).ok_or_else(|| McpError::UnknownStageKind(kind_str.into()))?;
    let names: Vec<String> = match obj.get("backends") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|b| b.as_str().map(str::to_string))
            .collect::<Option<_>>()
            .ok_or_else(|| malformed(format!("stage {i}: backends must be strings")))?,
        Some(_) => return Err(malformed(format!("stage {i}: backends must be a list"))),
    };
    let params = match obj.get("params") {
        None | Some(Value::Null) => Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return Err(malformed(format!("stage {i}: params must be an object"))),
    };
    match kind {
        StageKind::Retrieve => {
            if !names.is_empty() {
                return Err(malformed(format!("stage {i}: retrieve takes no backends")));
            }
            if params.get("k").is_some_and(|k| positive_int(k).is_none()) {
                return Err(malformed(format!("stage {i}: k must be a positive integer")));
            }
        }
        _ => {
            if names.is_empty() {
                return Err(malformed(format!("stage {i}: {kind} needs at least one backend")));
            }
            if let Some(b) = names.iter().find(|b| !backends.contains(b)) {
                return Err(McpError::UnknownBackend(b.clone()));
            }
        }
    }
    Ok(StageSpec {
        kind,
        backends: names,
        params,
    })
}

/// Checks a raw `"mcp"` header against the caller's session.
///
/// A missing header yields the default two-stage plan at the session tier.
/// A requested tier above the session tier is rejected, never clamped.
pub fn validate_header(
    raw: Option<&Value>,
    session_tier: SecurityTier,
    defaults: &PlanDefaults,
    backends: &BackendRegistry,
) -> Result<McpHeader, McpError> {
    let raw = match raw {
        None | Some(Value::Null) => {
            if !backends.contains(&defaults.default_backend) {
                return Err(McpError::UnknownBackend(defaults.default_backend.clone()));
            }
            return Ok(defaults.header(session_tier));
        }
        Some(v) => v,
    };
    let obj = raw.as_object().ok_or_else(|| malformed("header is not an object"))?;
    if let Some(key) = obj
        .keys()
        .find(|k| !["stack", "budgets", "security_tier"].contains(&k.as_str()))
    {
        return Err(malformed(format!("unknown field `{key}`")));
    }

    let security_tier = match obj.get("security_tier") {
        None | Some(Value::Null) => session_tier,
        Some(Value::String(s)) => s
            .parse::<SecurityTier>()
            .map_err(|e| malformed(e.to_string()))?,
        Some(_) => return Err(malformed("security_tier must be a string")),
    };
    if security_tier > session_tier {
        return Err(McpError::TierEscalation {
            requested: security_tier,
            session: session_tier,
        });
    }

    let stack_raw = match obj.get("stack") {
        None | Some(Value::Null) => return Err(McpError::EmptyStack),
        Some(Value::Array(items)) if items.is_empty() => return Err(McpError::EmptyStack),
        Some(Value::Array(items)) => items,
        Some(_) => return Err(malformed("stack must be a list")),
    };
    let stack = stack_raw
        .iter()
        .enumerate()
        .map(|(i, s)| parse_stage(i, s, backends))
        .collect::<Result<Vec<_>, _>>()?;

    let mut budgets = BTreeMap::new();
    match obj.get("budgets") {
        None | Some(Value::Null) => {}
        Some(Value::Object(m)) => {
            for (key, value) in m {
                let idx: usize = key
                    .parse()
                    .map_err(|_| malformed(format!("budget key `{key}` is not a stage index")))?;
                if idx >= stack.len() {
                    return Err(malformed(format!("budget for nonexistent stage {idx}")));
                }
                let v = positive_int(value)
                    .ok_or_else(|| malformed(format!("budget for stage {idx} must be a positive integer")))?;
                budgets.insert(idx, v);
            }
        }
        Some(_) => return Err(malformed("budgets must be an object")),
    }
    if let Some(missing) = (0..stack.len()).find(|i| !budgets.contains_key(i)) {
        return Err(McpError::MissingBudget(missing));
    }

    Ok(McpHeader {
        stack,
        budgets,
        security_tier,
    })
}
