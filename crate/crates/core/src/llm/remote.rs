use std::sync::Arc;

use async_trait::async_trait;
use serde_json::{json, Value};
use thiserror::Error;

use super::{AttemptError, BackendKind, Completion, CompletionRequest, LlmBackend, TEMPERATURE};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("request timed out")]
    Timeout,
}

/// Minimal HTTP surface the remote backend needs. Swapped out in tests.
#[async_trait]
pub trait Transport: Send + Sync {
    /// POSTs `body` as JSON; returns the status code and raw response body.
    async fn post_json(&self, url: &str, api_key: Option<&str>, body: &Value) -> Result<(u16, String), TransportError>;
}

pub struct HttpTransport {
    client: reqwest::Client,
}

impl HttpTransport {
    pub fn new() -> Result<Self, reqwest::Error> {
        Ok(HttpTransport {
            client: reqwest::Client::builder().build()?,
        })
    }
}

#[async_trait]
impl Transport for HttpTransport {
    async fn post_json(&self, url: &str, api_key: Option<&str>, body: &Value) -> Result<(u16, String), TransportError> {
        let mut req = self.client.post(url).json(body);
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connect(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .text()
            .await
            .map_err(|e| TransportError::Connect(e.to_string()))?;
        Ok((status, text))
    }
}

/// Chat-completion endpoint speaking the common `{model, messages, temperature,
/// max_tokens}` request shape.
pub struct RemoteBackend {
    transport: Arc<dyn Transport>,
    endpoint: String,
    api_key: Option<String>,
    model: String,
}

impl RemoteBackend {
    pub fn new(transport: Arc<dyn Transport>, endpoint: String, api_key: Option<String>, model: String) -> Self {
        RemoteBackend {
            transport,
            endpoint,
            api_key,
            model,
        }
    }

    pub fn request_body(&self, request: &CompletionRequest) -> Value {
        json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": TEMPERATURE,
            "max_tokens": request.max_output_tokens,
        })
    }
}

fn parse_body(body: &str) -> Result<Completion, AttemptError> {
    let v: Value = serde_json::from_str(body).map_err(|e| AttemptError::Malformed(e.to_string()))?;
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| AttemptError::Malformed("missing choices[0].message.content".into()))?;
    Ok(Completion {
        text: text.to_string(),
        input_tokens: v.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
        output_tokens: v.pointer("/usage/completion_tokens").and_then(Value::as_u64),
    })
}

#[async_trait]
impl LlmBackend for RemoteBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    async fn send(&self, request: &CompletionRequest) -> Result<Completion, AttemptError> {
        let body = self.request_body(request);
        let (status, text) = self
            .transport
            .post_json(&self.endpoint, self.api_key.as_deref(), &body)
            .await
            .map_err(|e| match e {
                TransportError::Timeout => AttemptError::Timeout,
                TransportError::Connect(m) => AttemptError::Transport(m),
            })?;
        if !(200..300).contains(&status) {
            return Err(AttemptError::Status { status, body: text });
        }
        parse_body(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{LlmError, LlmGateway, Purpose, RetryPolicy, UsageLedger};
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Mutex;
    use std::time::Duration;

    struct Scripted {
        replies: Mutex<Vec<Result<(u16, String), TransportError>>>,
        calls: AtomicU32,
        last_body: Mutex<Option<Value>>,
    }

    impl Scripted {
        fn new(mut replies: Vec<Result<(u16, String), TransportError>>) -> Self {
            replies.reverse();
            Scripted {
                replies: Mutex::new(replies),
                calls: AtomicU32::new(0),
                last_body: Mutex::new(None),
            }
        }
    }

    #[async_trait]
    impl Transport for Scripted {
        async fn post_json(&self, _url: &str, _key: Option<&str>, body: &Value) -> Result<(u16, String), TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            *self.last_body.lock().unwrap() = Some(body.clone());
            self.replies
                .lock()
                .unwrap()
                .pop()
                .unwrap_or(Err(TransportError::Connect("script exhausted".into())))
        }
    }

    fn gateway(transport: Arc<Scripted>, base_backoff: Duration) -> LlmGateway {
        let backend = RemoteBackend::new(transport, "http://llm.invalid/v1/chat".into(), Some("k".into()), "m".into());
        let policy = RetryPolicy {
            base_backoff,
            ..RetryPolicy::default()
        };
        LlmGateway::with_policy(Arc::new(backend), Arc::new(UsageLedger::new()), policy, 8)
    }

    #[tokio::test]
    async fn three_transport_failures_exhaust_two_retries() {
        let transport = Arc::new(Scripted::new(vec![
            Err(TransportError::Connect("refused".into())),
            Err(TransportError::Timeout),
            Err(TransportError::Connect("refused".into())),
        ]));
        let gw = gateway(transport.clone(), Duration::from_millis(250));
        let started = std::time::Instant::now();
        let err = gw
            .complete(&CompletionRequest::new(Purpose::Extraction, "prompt", 32))
            .await
            .unwrap_err();
        assert!(matches!(err, LlmError::TimeoutExhausted { attempts: 3, .. }), "{err}");
        assert_eq!(transport.calls.load(Ordering::SeqCst), 3);
        assert_eq!(gw.ledger().usage(Purpose::Extraction).calls, 3);
        // 250 ms + 500 ms of backoff between the three attempts
        assert!(started.elapsed() >= Duration::from_millis(750));
    }

    #[tokio::test]
    async fn parses_content_and_reported_usage() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"{\"tags\":[]}"}}],
                       "usage":{"prompt_tokens":123,"completion_tokens":9}}"#;
        let transport = Arc::new(Scripted::new(vec![Ok((200, body.to_string()))]));
        let gw = gateway(transport.clone(), Duration::from_millis(1));
        let resp = gw
            .complete(&CompletionRequest::new(Purpose::Refinement, "prompt", 32))
            .await
            .unwrap();
        assert_eq!(resp.text, r#"{"tags":[]}"#);
        assert_eq!((resp.input_tokens, resp.output_tokens), (123, 9));
        assert_eq!(resp.backend, BackendKind::Remote);
        let sent = transport.last_body.lock().unwrap().clone().unwrap();
        assert_eq!(sent["temperature"], json!(0.0));
        assert_eq!(sent["max_tokens"], json!(32));
        assert_eq!(sent["model"], json!("m"));
        assert_eq!(sent["messages"][0]["content"], json!("prompt"));
    }

    #[tokio::test]
    async fn missing_usage_falls_back_to_byte_estimate() {
        let body = r#"{"choices":[{"message":{"content":"abcdefgh"}}]}"#;
        let transport = Arc::new(Scripted::new(vec![Ok((200, body.to_string()))]));
        let gw = gateway(transport, Duration::from_millis(1));
        let resp = gw
            .complete(&CompletionRequest::new(Purpose::Refinement, "12345", 32))
            .await
            .unwrap();
        assert_eq!((resp.input_tokens, resp.output_tokens), (2, 2));
    }

    #[tokio::test]
    async fn malformed_body_is_not_retried() {
        let transport = Arc::new(Scripted::new(vec![Ok((200, "not json".into()))]));
        let gw = gateway(transport.clone(), Duration::from_millis(1));
        let err = gw
            .complete(&CompletionRequest::new(Purpose::Refinement, "p", 32))
            .await
            .unwrap_err();
        assert!(matches!(err, LlmError::Malformed(_)));
        assert_eq!(transport.calls.load(Ordering::SeqCst), 1);
    }
}
