//! Run manifest: the resolved config plus a content hash, written next to
//! every metrics file so any run can be reproduced exactly.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::config::RunConfig;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    /// Content hash of the canonical JSON encoding of `config`.
    pub config_sha256: String,
    pub config: RunConfig,
}

/// Hex SHA-256 of the config's canonical (compact, declaration-ordered)
/// JSON encoding.
pub fn config_hash(config: &RunConfig) -> Result<String> {
    let canonical = serde_json::to_string(config)?;
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    Ok(format!("{:x}", hasher.finalize()))
}

impl Manifest {
    pub fn new(config: RunConfig) -> Result<Manifest> {
        let config_sha256 = config_hash(&config)?;
        Ok(Manifest { schema_version: MANIFEST_SCHEMA_VERSION, config_sha256, config })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Parses and verifies: the schema version must be known and the
    /// recorded hash must match the embedded config.
    pub fn from_json(text: &str) -> Result<Manifest> {
        let m: Manifest = serde_json::from_str(text)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest schema_version {}",
                m.schema_version
            )));
        }
        let expected = config_hash(&m.config)?;
        if m.config_sha256 != expected {
            return Err(Error::Format(format!(
                "manifest hash mismatch: recorded {}, recomputed {expected}",
                m.config_sha256
            )));
        }
        Ok(m)
    }
}
