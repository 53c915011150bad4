//! Server configuration: a JSON file plus environment overrides.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crsim_core::agents::PolicySpec;

pub const ENV_DATA_DIR: &str = "CRSIM_DATA_DIR";
pub const ENV_BIND: &str = "CRSIM_BIND";
pub const ENV_RECORDS_DIR: &str = "CRSIM_RECORDS_DIR";
pub const ENV_STATIC_DIR: &str = "CRSIM_STATIC_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    /// Sessions, judgments and chat transcripts live here.
    pub data_dir: PathBuf,
    /// Record files named in session requests are resolved against this.
    pub records_dir: PathBuf,
    /// Built UI bundle, served for any path the API does not claim.
    pub static_dir: Option<PathBuf>,
    /// Recommender policies available to chat sessions, by name. Clients
    /// pick from these; they cannot supply their own endpoints.
    pub recommenders: BTreeMap<String, PolicySpec>,
    /// Turn cap for chat sessions, counting both roles.
    pub chat_max_turns: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("data"),
            records_dir: PathBuf::from("."),
            static_dir: None,
            recommenders: BTreeMap::new(),
            chat_max_turns: 20,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl ServerConfig {
    pub fn load(path: &Path) -> Result<ServerConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })
    }

    /// Applies `CRSIM_*` environment overrides.
    pub fn with_env(self) -> ServerConfig {
        self.with_overrides(|k| std::env::var(k).ok())
    }

    pub fn with_overrides(mut self, get: impl Fn(&str) -> Option<String>) -> ServerConfig {
        if let Some(v) = get(ENV_BIND) {
            self.bind = v;
        }
        if let Some(v) = get(ENV_DATA_DIR) {
            self.data_dir = v.into();
        }
        if let Some(v) = get(ENV_RECORDS_DIR) {
            self.records_dir = v.into();
        }
        if let Some(v) = get(ENV_STATIC_DIR) {
            self.static_dir = Some(v.into());
        }
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.chat_max_turns < 2 {
            return Err(ConfigError::Invalid("chat_max_turns must be at least 2".into()));
        }
        Ok(())
    }

    /// Resolves a client-supplied record path under `records_dir`. Absolute
    /// paths and parent-directory components are refused.
    pub fn resolve_record_path(&self, rel: &str) -> Option<PathBuf> {
        let p = Path::new(rel);
        if rel.is_empty()
            || !p
                .components()
                .all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
        {
            return None;
        }
        Some(self.records_dir.join(p))
    }
}
