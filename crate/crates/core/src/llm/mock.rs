use std::collections::BTreeMap;
use std::path::Path;

use async_trait::async_trait;
use serde::Deserialize;

use super::{prompt_hash, AttemptError, BackendKind, Completion, CompletionRequest, LlmBackend, LlmError, Purpose};

/// One row of the mock answer table. A rule without `prompt_hash` is the
/// default answer for its purpose.
#[derive(Debug, Clone, Deserialize)]
pub struct MockRule {
    pub purpose: Purpose,
    #[serde(default)]
    pub prompt_hash: Option<String>,
    pub response: String,
}

/// Deterministic backend answering from a `(purpose, prompt hash)` table.
#[derive(Debug, Clone)]
pub struct MockBackend {
    exact: BTreeMap<(Purpose, String), String>,
    defaults: BTreeMap<Purpose, String>,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl MockBackend {
    /// Empty table: every prompt gets a well-formed but empty answer.
    pub fn new() -> Self {
        let mut defaults = BTreeMap::new();
        defaults.insert(Purpose::Extraction, r#"{"tags": []}"#.to_string());
        defaults.insert(Purpose::Refinement, r#"{"title": "", "track_ids": []}"#.to_string());
        MockBackend {
            exact: BTreeMap::new(),
            defaults,
        }
    }

    pub fn with_rules(rules: impl IntoIterator<Item = MockRule>) -> Self {
        let mut backend = Self::new();
        for rule in rules {
            match rule.prompt_hash {
                Some(h) => backend.exact.insert((rule.purpose, h), rule.response),
                None => backend.defaults.insert(rule.purpose, rule.response),
            };
        }
        backend
    }

    /// Answer `response` whenever exactly `prompt` is sent.
    pub fn answer(mut self, purpose: Purpose, prompt: &str, response: impl Into<String>) -> Self {
        self.exact.insert((purpose, prompt_hash(prompt)), response.into());
        self
    }

    pub fn default_answer(mut self, purpose: Purpose, response: impl Into<String>) -> Self {
        self.defaults.insert(purpose, response.into());
        self
    }

    pub fn from_rules_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("mock rules {}: {e}", path.display())))?;
        let rules: Vec<MockRule> = serde_json::from_str(&text)
            .map_err(|e| LlmError::Config(format!("mock rules {}: {e}", path.display())))?;
        Ok(Self::with_rules(rules))
    }

    fn lookup(&self, request: &CompletionRequest) -> &str {
        self.exact
            .get(&(request.purpose, prompt_hash(&request.prompt)))
            .or_else(|| self.defaults.get(&request.purpose))
            .map(String::as_str)
            .unwrap_or_default()
    }
}

#[async_trait]
impl LlmBackend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    async fn send(&self, request: &CompletionRequest) -> Result<Completion, AttemptError> {
        Ok(Completion::text(self.lookup(request)))
    }
}
