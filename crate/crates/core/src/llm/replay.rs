use std::path::{Path, PathBuf};

use async_trait::async_trait;

use super::{prompt_hash, AttemptError, BackendKind, Completion, CompletionRequest, LlmBackend};

/// Serves recorded responses from `<dir>/<prompt hash>.txt`.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    dir: PathBuf,
}

impl ReplayBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ReplayBackend { dir: dir.into() }
    }

    pub fn fixture_path(&self, prompt: &str) -> PathBuf {
        self.dir.join(format!("{}.txt", prompt_hash(prompt)))
    }
}

/// Writes a fixture so that replaying `prompt` yields `response`.
pub fn record_fixture(dir: &Path, prompt: &str, response: &str) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.txt", prompt_hash(prompt)));
    std::fs::write(&path, response)?;
    Ok(path)
}

#[async_trait]
impl LlmBackend for ReplayBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    async fn send(&self, request: &CompletionRequest) -> Result<Completion, AttemptError> {
        let path = self.fixture_path(&request.prompt);
        match tokio::fs::read(&path).await {
            Ok(bytes) => String::from_utf8(bytes)
                .map(Completion::text)
                .map_err(|e| AttemptError::Malformed(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(AttemptError::FixtureMiss {
                hash: prompt_hash(&request.prompt),
            }),
            Err(e) => Err(AttemptError::Malformed(format!("{}: {e}", path.display()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{LlmError, LlmGateway, Purpose, UsageLedger};
    use std::sync::Arc;

    #[tokio::test]
    async fn replays_recorded_text_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let recorded = "{\"tags\": [ ]}\n  trailing whitespace kept  ";
        record_fixture(dir.path(), "the prompt", recorded).unwrap();
        let gw = LlmGateway::new(Arc::new(ReplayBackend::new(dir.path())), Arc::new(UsageLedger::new()));
        let req = crate::llm::CompletionRequest::new(Purpose::Extraction, "the prompt", 64);
        let first = gw.complete(&req).await.unwrap();
        let second = gw.complete(&req).await.unwrap();
        assert_eq!(first.text, recorded);
        assert_eq!(first.text.as_bytes(), second.text.as_bytes());
        assert_eq!(first.backend, BackendKind::Replay);
        assert_eq!(first.input_tokens, 3); // ceil(10 / 4)
    }

    #[tokio::test]
    async fn unrecorded_prompt_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let gw = LlmGateway::new(Arc::new(ReplayBackend::new(dir.path())), Arc::new(UsageLedger::new()));
        let err = gw
            .complete(&crate::llm::CompletionRequest::new(Purpose::Extraction, "never seen", 64))
            .await
            .unwrap_err();
        assert_eq!(
            err,
            LlmError::FixtureMiss {
                hash: prompt_hash("never seen")
            }
        );
        assert_eq!(gw.ledger().usage(Purpose::Extraction).calls, 1);
    }
}
