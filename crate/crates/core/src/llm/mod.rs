//! Provider-agnostic chat-completion gateway.
//!
//! Backends (`mock`, `replay`, `remote`) implement [`LlmBackend`] and are
//! constructed by name through a [`BackendRegistry`]. The [`LlmGateway`]
//! wraps one backend with retries, per-call timeouts, an in-flight limit and
//! token accounting.

mod ledger;
mod mock;
mod remote;
mod replay;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::sync::Semaphore;

pub use ledger::{usage_report, PurposeUsage, UsageLedger, UsageReport};
pub use mock::{MockBackend, MockRule};
pub use remote::{HttpTransport, RemoteBackend, Transport, TransportError};
pub use replay::{record_fixture, ReplayBackend};

/// Sampling temperature sent with every request.
pub const TEMPERATURE: f32 = 0.0;

pub const ENV_ENDPOINT: &str = "T2P_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "T2P_LLM_API_KEY";
pub const ENV_MODEL: &str = "T2P_LLM_MODEL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Extraction,
    Refinement,
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Purpose::Extraction => "extraction",
            Purpose::Refinement => "refinement",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Replay,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_output_tokens: u32,
    pub purpose: Purpose,
}

impl CompletionRequest {
    pub fn new(purpose: Purpose, prompt: impl Into<String>, max_output_tokens: u32) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            max_output_tokens,
            purpose,
        }
    }

    pub fn temperature(&self) -> f32 {
        TEMPERATURE
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CompletionResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_ms: u64,
    pub backend: BackendKind,
}

/// What a backend hands back for one attempt. Token counts are optional;
/// the gateway approximates missing ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub input_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Completion {
            text: text.into(),
            input_tokens: None,
            output_tokens: None,
        }
    }
}

/// Failure of a single backend attempt.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AttemptError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("attempt timed out")]
    Timeout,
    #[error("remote answered with status {status}")]
    Status { status: u16, body: String },
    #[error("no recorded fixture for prompt hash {hash}")]
    FixtureMiss { hash: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
}

impl AttemptError {
    fn is_retryable(&self) -> bool {
        match self {
            AttemptError::Transport(_) | AttemptError::Timeout => true,
            AttemptError::Status { status, .. } => *status == 429 || *status >= 500,
            AttemptError::FixtureMiss { .. } | AttemptError::Malformed(_) => false,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LlmError {
    #[error("gave up after {attempts} attempt(s): {last}")]
    TimeoutExhausted { attempts: u32, last: String },
    #[error("no recorded fixture for prompt hash {hash}")]
    FixtureMiss { hash: String },
    #[error("remote rejected the request with status {status}")]
    RemoteRejected { status: u16 },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("unknown llm backend `{0}`")]
    UnknownBackend(String),
    #[error("llm backend misconfigured: {0}")]
    Config(String),
}

/// Stable 64-bit prompt key: first 8 bytes of SHA-256, hex encoded.
pub fn prompt_hash(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    hex::encode(&digest[..8])
}

/// Token estimate used when the backend does not report counts.
pub fn approx_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

#[async_trait]
pub trait LlmBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    async fn send(&self, request: &CompletionRequest) -> Result<Completion, AttemptError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt; remote backend only.
    pub max_retries: u32,
    pub base_backoff: Duration,
    pub backoff_multiplier: u32,
    pub call_timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 2,
            base_backoff: Duration::from_millis(250),
            backoff_multiplier: 2,
            call_timeout: Duration::from_secs(10),
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, retry: u32) -> Duration {
        self.base_backoff * self.backoff_multiplier.saturating_pow(retry)
    }
}

pub struct LlmGateway {
    backend: Arc<dyn LlmBackend>,
    ledger: Arc<UsageLedger>,
    policy: RetryPolicy,
    in_flight: Semaphore,
}

pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

impl LlmGateway {
    pub fn new(backend: Arc<dyn LlmBackend>, ledger: Arc<UsageLedger>) -> Self {
        Self::with_policy(backend, ledger, RetryPolicy::default(), DEFAULT_MAX_IN_FLIGHT)
    }

    pub fn with_policy(
        backend: Arc<dyn LlmBackend>,
        ledger: Arc<UsageLedger>,
        policy: RetryPolicy,
        max_in_flight: usize,
    ) -> Self {
        LlmGateway {
            backend,
            ledger,
            policy,
            in_flight: Semaphore::new(max_in_flight.max(1)),
        }
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind()
    }

    pub fn ledger(&self) -> &Arc<UsageLedger> {
        &self.ledger
    }

    pub fn policy(&self) -> &RetryPolicy {
        &self.policy
    }

    pub async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        if request.prompt.trim().is_empty() {
            return Err(LlmError::InvalidRequest("empty prompt".into()));
        }
        if request.max_output_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_output_tokens must be >= 1".into()));
        }
        let _permit = self
            .in_flight
            .acquire()
            .await
            .map_err(|_| LlmError::Config("gateway closed".into()))?;

        let kind = self.backend.kind();
        let max_attempts = match kind {
            BackendKind::Remote => self.policy.max_retries + 1,
            BackendKind::Mock | BackendKind::Replay => 1,
        };
        let mut attempt = 0;
        loop {
            attempt += 1;
            let started = Instant::now();
            let outcome = match tokio::time::timeout(self.policy.call_timeout, self.backend.send(request)).await {
                Ok(r) => r,
                Err(_) => Err(AttemptError::Timeout),
            };
            match outcome {
                Ok(done) => {
                    let input_tokens = done
                        .input_tokens
                        .unwrap_or_else(|| approx_tokens(&request.prompt));
                    let output_tokens = done.output_tokens.unwrap_or_else(|| approx_tokens(&done.text));
                    self.ledger.record(request.purpose, input_tokens, output_tokens);
                    return Ok(CompletionResponse {
                        text: done.text,
                        input_tokens,
                        output_tokens,
                        latency_ms: started.elapsed().as_millis() as u64,
                        backend: kind,
                    });
                }
                Err(err) => {
                    self.ledger.record(request.purpose, 0, 0);
                    tracing::debug!(attempt, %err, purpose = %request.purpose, "llm attempt failed");
                    if err.is_retryable() && attempt < max_attempts {
                        tokio::time::sleep(self.policy.backoff(attempt - 1)).await;
                        continue;
                    }
                    return Err(match err {
                        AttemptError::Transport(_) | AttemptError::Timeout => LlmError::TimeoutExhausted {
                            attempts: attempt,
                            last: err.to_string(),
                        },
                        AttemptError::Status { status, .. } => LlmError::RemoteRejected { status },
                        AttemptError::FixtureMiss { hash } => LlmError::FixtureMiss { hash },
                        AttemptError::Malformed(m) => LlmError::Malformed(m),
                    });
                }
            }
        }
    }
}

/// Settings consumed by backend factories.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSettings {
    pub fixtures_dir: Option<PathBuf>,
    pub mock_rules: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub model: Option<String>,
}

impl LlmSettings {
    /// Fills endpoint, key and model from the environment when unset.
    pub fn with_env(mut self) -> Self {
        let env = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        self.endpoint = self.endpoint.or_else(|| env(ENV_ENDPOINT));
        self.api_key = self.api_key.or_else(|| env(ENV_API_KEY));
        self.model = self.model.or_else(|| env(ENV_MODEL));
        self
    }
}

type BackendFactory = Box<dyn Fn(&LlmSettings) -> Result<Arc<dyn LlmBackend>, LlmError> + Send + Sync>;

/// Name → backend constructor table.
pub struct BackendRegistry {
    factories: BTreeMap<String, BackendFactory>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        Self::with_defaults()
    }
}

impl BackendRegistry {
    pub fn empty() -> Self {
        BackendRegistry {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_defaults() -> Self {
        let mut reg = Self::empty();
        reg.register("mock", |s: &LlmSettings| {
            let backend = match &s.mock_rules {
                Some(path) => MockBackend::from_rules_file(path)?,
                None => MockBackend::new(),
            };
            Ok(Arc::new(backend) as Arc<dyn LlmBackend>)
        });
        reg.register("replay", |s: &LlmSettings| {
            let dir = s
                .fixtures_dir
                .clone()
                .ok_or_else(|| LlmError::Config("replay backend needs a fixtures directory".into()))?;
            Ok(Arc::new(ReplayBackend::new(dir)) as Arc<dyn LlmBackend>)
        });
        reg.register("remote", |s: &LlmSettings| {
            let endpoint = s
                .endpoint
                .clone()
                .ok_or_else(|| LlmError::Config(format!("remote backend needs {ENV_ENDPOINT}")))?;
            let transport = HttpTransport::new().map_err(|e| LlmError::Config(e.to_string()))?;
            Ok(Arc::new(RemoteBackend::new(
                Arc::new(transport),
                endpoint,
                s.api_key.clone(),
                s.model.clone().unwrap_or_default(),
            )) as Arc<dyn LlmBackend>)
        });
        reg
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&LlmSettings) -> Result<Arc<dyn LlmBackend>, LlmError> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(&self, name: &str, settings: &LlmSettings) -> Result<Arc<dyn LlmBackend>, LlmError> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| LlmError::UnknownBackend(name.to_string()))?;
        factory(settings)
    }
}
