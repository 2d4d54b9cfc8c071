#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::Value;
use t2p_service::{router, AppState, ServiceConfig};
use tower::ServiceExt;

pub const WORK_QUERY: &str = "I want music from the 90s for work";

/// Desk fixture settings with the store under `dir`.
pub fn desk_config(dir: &Path) -> ServiceConfig {
    let mut c = ServiceConfig::default();
    c.paths.store_dir = dir.join("store");
    c.limits.min_candidates = 1;
    c.store.fsync = false;
    c
}

pub fn app(config: ServiceConfig) -> (Arc<AppState>, Router) {
    let state = AppState::from_config(config).expect("state builds");
    (state.clone(), router(state))
}

pub async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

pub fn track_ids(v: &Value) -> Vec<String> {
    v["tracks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["track_id"].as_str().unwrap().to_string())
        .collect()
}
