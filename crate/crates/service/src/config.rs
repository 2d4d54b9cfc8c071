//! TOML service configuration. Relative paths resolve against the config
//! file's directory.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use t2p_core::llm::{LlmSettings, RetryPolicy, DEFAULT_MAX_IN_FLIGHT};
use t2p_core::refinement::{DEFAULT_ARTIST_CAP, DEFAULT_TARGET_LENGTH};
use t2p_core::retrieval::{DEFAULT_LIMIT, DEFAULT_MIN_CANDIDATES};
use t2p_core::PipelineConfig;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub server: ServerSection,
    pub paths: PathsSection,
    pub limits: LimitsSection,
    pub timeouts: TimeoutsSection,
    pub backends: BackendsSection,
    pub llm: LlmSection,
    pub store: StoreSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub bind: String,
    /// Empty means any origin.
    pub cors_origins: Vec<String>,
}

impl Default for ServerSection {
    fn default() -> Self {
        ServerSection {
            bind: "127.0.0.1:8080".into(),
            cors_origins: Vec::new(),
        }
    }
}

/// Catalog and embeddings fall back to the bundled desk fixture when unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub catalog: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub store_dir: PathBuf,
    pub fixtures_dir: Option<PathBuf>,
    pub ui_dir: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            catalog: None,
            embeddings: None,
            taxonomy: None,
            lexicon: None,
            store_dir: PathBuf::from("t2p-store"),
            fixtures_dir: None,
            ui_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitsSection {
    pub playlist_length: usize,
    pub artist_cap: usize,
    pub min_candidates: usize,
    pub limit: usize,
}

impl Default for LimitsSection {
    fn default() -> Self {
        LimitsSection {
            playlist_length: DEFAULT_TARGET_LENGTH,
            artist_cap: DEFAULT_ARTIST_CAP,
            min_candidates: DEFAULT_MIN_CANDIDATES,
            limit: DEFAULT_LIMIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeoutsSection {
    pub extraction_ms: u64,
    pub refinement_ms: u64,
    pub llm_call_ms: u64,
}

impl Default for TimeoutsSection {
    fn default() -> Self {
        TimeoutsSection {
            extraction_ms: 12_000,
            refinement_ms: 12_000,
            llm_call_ms: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsSection {
    /// Default extraction strategy: `rule`, `llm` or `replay`.
    pub extraction: String,
    /// Default refinement strategy: `deterministic` or `llm`.
    pub refinement: String,
    /// LLM backend behind the `llm` strategies: `mock`, `replay` or `remote`.
    pub llm: String,
}

impl Default for BackendsSection {
    fn default() -> Self {
        BackendsSection {
            extraction: "rule".into(),
            refinement: "deterministic".into(),
            llm: "remote".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key: Option<String>,
    pub mock_rules: Option<PathBuf>,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for LlmSection {
    fn default() -> Self {
        let policy = RetryPolicy::default();
        LlmSection {
            endpoint: None,
            model: None,
            api_key: None,
            mock_rules: None,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            max_retries: policy.max_retries,
            backoff_ms: policy.base_backoff.as_millis() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreSection {
    /// fsync after every append.
    pub fsync: bool,
    /// Rewrite the log after this many appends; 0 disables.
    pub compact_every: usize,
}

impl Default for StoreSection {
    fn default() -> Self {
        StoreSection {
            fsync: true,
            compact_every: 10_000,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = Self::parse(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: ServiceConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: "<inline>".into(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let l = &self.limits;
        if l.playlist_length == 0 || l.artist_cap == 0 || l.limit == 0 {
            return Err(ConfigError::Invalid(
                "playlist_length, artist_cap and limit must be >= 1".into(),
            ));
        }
        if self.paths.catalog.is_some() != self.paths.embeddings.is_some() {
            return Err(ConfigError::Invalid(
                "paths.catalog and paths.embeddings must be set together".into(),
            ));
        }
        Ok(())
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        for opt in [
            &mut p.catalog,
            &mut p.embeddings,
            &mut p.taxonomy,
            &mut p.lexicon,
            &mut p.fixtures_dir,
            &mut p.ui_dir,
            &mut self.llm.mock_rules,
        ] {
            if let Some(path) = opt.as_mut() {
                join(path);
            }
        }
        join(&mut p.store_dir);
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            target_length: self.limits.playlist_length,
            artist_cap: self.limits.artist_cap,
            min_candidates: self.limits.min_candidates,
            limit: self.limits.limit,
            extraction_timeout: Duration::from_millis(self.timeouts.extraction_ms),
            refinement_timeout: Duration::from_millis(self.timeouts.refinement_ms),
            extraction_backend: self.backends.extraction.clone(),
            refinement_backend: self.backends.refinement.clone(),
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.llm.max_retries,
            base_backoff: Duration::from_millis(self.llm.backoff_ms),
            call_timeout: Duration::from_millis(self.timeouts.llm_call_ms),
            ..RetryPolicy::default()
        }
    }

    pub fn llm_settings(&self) -> LlmSettings {
        LlmSettings {
            fixtures_dir: self.paths.fixtures_dir.clone(),
            mock_rules: self.llm.mock_rules.clone(),
            endpoint: self.llm.endpoint.clone(),
            api_key: self.llm.api_key.clone(),
            model: self.llm.model.clone(),
        }
        .with_env()
    }
}
