use std::path::{Path, PathBuf};

use adaptmt::embed::EmbedderConfig;
use adaptmt::gateway::{BackendConfig, BackendKind, TokenPolicy};
use adaptmt::wlac::WlacConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// How approved units reach the index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefreshMode {
    /// Added to the index before the approve call returns.
    #[default]
    Sync,
    /// Added by a background task after every `rebuild_after` approvals.
    Background,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    /// Static key expected in `x-api-key` or as a bearer token.
    pub api_key: Option<String>,
    /// Where projects are persisted; in-memory only when unset.
    pub data_dir: Option<PathBuf>,
    pub backend: BackendConfig,
    /// Separate engine for the auxiliary MT of `fuzzy_plus_mt`.
    pub mt_backend: Option<BackendConfig>,
    pub token_policy: TokenPolicy,
    pub token_policy_file: Option<PathBuf>,
    pub embedder: EmbedderConfig,
    pub index_seed: u64,
    pub nprobe: Option<usize>,
    pub wlac: WlacConfig,
    pub autocomplete_deadline_ms: u64,
    pub refresh: RefreshMode,
    pub rebuild_after: usize,
    pub term_extract_count: u32,
    pub term_separator: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1:8080".into(),
            api_key: None,
            data_dir: None,
            backend: BackendConfig::default(),
            mt_backend: None,
            token_policy: TokenPolicy::default(),
            token_policy_file: None,
            embedder: EmbedderConfig::default(),
            index_seed: 42,
            nprobe: None,
            wlac: WlacConfig::default(),
            autocomplete_deadline_ms: 5_000,
            refresh: RefreshMode::Sync,
            rebuild_after: 1,
            term_extract_count: 5,
            term_separator: "=".into(),
        }
    }
}

fn parse_by_ext<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T, ConfigError> {
    let bad = |message: String| ConfigError::Parse {
        path: path.to_path_buf(),
        message,
    };
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(text).map_err(|e| bad(e.to_string())),
        Some("toml") => toml::from_str(text).map_err(|e| bad(e.to_string())),
        _ => Err(bad("expected a .toml or .json file".into())),
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl ServerConfig {
    /// Reads a TOML or JSON file, chosen by extension.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: ServerConfig = parse_by_ext(path, &read(path)?)?;
        cfg.resolve_token_policy()?;
        Ok(cfg)
    }

    /// Applies `ADAPTMT_BIND`, `ADAPTMT_API_KEY`, `ADAPTMT_DATA_DIR`,
    /// `ADAPTMT_BACKEND_ENDPOINT` and `ADAPTMT_TOKEN_POLICY`.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        self.apply_vars(|k| std::env::var(k).ok())
    }

    pub fn apply_vars(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = get("ADAPTMT_BIND") {
            self.bind = v;
        }
        if let Some(v) = get("ADAPTMT_API_KEY") {
            self.api_key = Some(v);
        }
        if let Some(v) = get("ADAPTMT_DATA_DIR") {
            self.data_dir = Some(v.into());
        }
        if let Some(v) = get("ADAPTMT_BACKEND_ENDPOINT") {
            self.backend.kind = BackendKind::HttpCompletion;
            self.backend.endpoint = Some(v);
        }
        if let Some(v) = get("ADAPTMT_TOKEN_POLICY") {
            self.token_policy_file = Some(v.into());
        }
        self.resolve_token_policy()
    }

    fn resolve_token_policy(&mut self) -> Result<(), ConfigError> {
        if let Some(p) = &self.token_policy_file {
            self.token_policy = parse_by_ext(p, &read(p)?)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.backend.validate().map_err(|e| invalid(&e))?;
        if let Some(mt) = &self.mt_backend {
            mt.validate().map_err(|e| invalid(&e))?;
        }
        self.token_policy.validate().map_err(|e| invalid(&e))?;
        self.wlac.validate().map_err(|e| invalid(&e))?;
        if self.autocomplete_deadline_ms == 0 {
            return Err(ConfigError::Invalid("autocomplete_deadline_ms must be positive".into()));
        }
        if self.rebuild_after == 0 {
            return Err(ConfigError::Invalid("rebuild_after must be at least 1".into()));
        }
        if self.term_extract_count == 0 || self.term_separator.is_empty() {
            return Err(ConfigError::Invalid(
                "term extraction needs a count and a separator".into(),
            ));
        }
        Ok(())
    }
}
