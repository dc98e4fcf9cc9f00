use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Access label carried by documents, chunks and sessions.
///
/// The derived ordering is the access order: a session at tier `t` may see
/// anything at a tier `<= t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecurityTier {
    Public = 0,
    Collaboration = 1,
    Controlled = 2,
}

impl SecurityTier {
    pub const ALL: [SecurityTier; 3] = [
        SecurityTier::Public,
        SecurityTier::Collaboration,
        SecurityTier::Controlled,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SecurityTier::Public => "public",
            SecurityTier::Collaboration => "collaboration",
            SecurityTier::Controlled => "controlled",
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(SecurityTier::Public),
            1 => Some(SecurityTier::Collaboration),
            2 => Some(SecurityTier::Controlled),
            _ => None,
        }
    }
}

impl fmt::Display for SecurityTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown security tier `{0}`")]
pub struct UnknownTier(pub String);

impl FromStr for SecurityTier {
    type Err = UnknownTier;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "public" => Ok(SecurityTier::Public),
            "collaboration" => Ok(SecurityTier::Collaboration),
            "controlled" => Ok(SecurityTier::Controlled),
            other => Err(UnknownTier(other.to_string())),
        }
    }
}
