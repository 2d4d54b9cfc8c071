mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use serde_json::json;
use tower::ServiceExt;

use common::{app, desk_config, send, track_ids, WORK_QUERY};

#[tokio::test]
async fn create_then_fetch_playlist() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(desk_config(dir.path()));
    let (status, body) = send(&app, "POST", "/v1/playlists", Some(json!({"user_id": "U1", "query": WORK_QUERY}))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(track_ids(&body), ["T1", "T6", "T2"]);
    assert_eq!(body["title"], "1990s · Focus mix");
    assert_eq!(body["snapshot_id"], 1);
    assert_eq!(body["tracks"][0]["artist_name"], "Northbound");
    let p = &body["provenance"];
    assert_eq!(p["extraction_backend"], "rule");
    assert_eq!(p["refinement_backend"], "deterministic");
    assert_eq!(p["relaxation_level"], 0);
    assert_eq!(p["personalized"], true);
    assert_eq!(p["degraded"], false);

    let id = body["playlist_id"].as_str().unwrap();
    let (status, fetched) = send(&app, "GET", &format!("/v1/playlists/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(fetched, body);

    let (status, err) = send(&app, "GET", "/v1/playlists/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "unknown_playlist");
}

#[tokio::test]
async fn length_override() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(desk_config(dir.path()));
    let (status, body) =
        send(&app, "POST", "/v1/playlists", Some(json!({"user_id": "U1", "query": WORK_QUERY, "length": 2}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(track_ids(&body), ["T1", "T6"]);
    let (status, _) =
        send(&app, "POST", "/v1/playlists", Some(json!({"user_id": "U1", "query": WORK_QUERY, "length": 0}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn errors_carry_codes_and_hints() {
    let dir = tempfile::tempdir().unwrap();
    let (state, app) = app(desk_config(dir.path()));
    let cases = [
        (json!({"user_id": "U1", "query": "asdf qwerty"}), StatusCode::UNPROCESSABLE_ENTITY, "no_tags_extracted"),
        (json!({"user_id": "U1", "query": "metal from the 1960s"}), StatusCode::UNPROCESSABLE_ENTITY, "empty_candidate_set"),
        (json!({"user_id": "U1", "query": "  "}), StatusCode::BAD_REQUEST, "invalid_query"),
        (
            json!({"user_id": "U1", "query": WORK_QUERY, "extraction_backend": "psychic"}),
            StatusCode::BAD_REQUEST,
            "invalid_options",
        ),
        (json!({"query": WORK_QUERY}), StatusCode::BAD_REQUEST, "invalid_body"),
    ];
    for (body, status, code) in cases {
        let (got, err) = send(&app, "POST", "/v1/playlists", Some(body.clone())).await;
        assert_eq!(got, status, "{body}");
        assert_eq!(err["error"], code);
        assert_eq!(err.get("hint").is_some(), status == StatusCode::UNPROCESSABLE_ENTITY, "{err}");
    }
    assert_eq!(state.store.playlist_count(), 0);
    let (_, metrics) = send(&app, "GET", "/metrics", None).await;
    let text = metrics.as_str().unwrap();
    assert!(text.contains("\nt2p_reformulate_responses_total 2\n"), "{text}");
    assert!(text.contains("\nt2p_client_errors_total 3\n"), "{text}");
}

#[tokio::test]
async fn events_are_validated_and_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(desk_config(dir.path()));
    let (_, body) = send(&app, "POST", "/v1/playlists", Some(json!({"user_id": "U1", "query": WORK_QUERY}))).await;
    let id = body["playlist_id"].as_str().unwrap();
    let created: chrono::DateTime<chrono::Utc> = body["created_at"].as_str().unwrap().parse().unwrap();
    let at = (created + chrono::Duration::minutes(5)).to_rfc3339();
    let uri = format!("/v1/playlists/{id}/events");

    let (status, r) = send(&app, "POST", &uri, Some(json!({"type": "listened", "occurred_at": at}))).await;
    assert_eq!((status, r["status"].as_str()), (StatusCode::CREATED, Some("stored")));
    let (status, r) = send(&app, "POST", &uri, Some(json!({"type": "listened", "occurred_at": at}))).await;
    assert_eq!((status, r["status"].as_str()), (StatusCode::OK, Some("duplicate")));

    let before = (created - chrono::Duration::minutes(1)).to_rfc3339();
    let (status, _) = send(&app, "POST", &uri, Some(json!({"type": "listened", "occurred_at": before}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = send(&app, "POST", &uri, Some(json!({"type": "skipped"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = send(&app, "POST", "/v1/playlists/ghost/events", Some(json!({"type": "listened"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    // No timestamp means now, which is after creation.
    let (status, _) = send(&app, "POST", &uri, Some(json!({"type": "listened"}))).await;
    assert_eq!(status, StatusCode::CREATED);
}

#[tokio::test]
async fn debug_trace_exposes_stages_without_storing() {
    let dir = tempfile::tempdir().unwrap();
    let (state, app) = app(desk_config(dir.path()));
    let uri = "/v1/debug/pipeline?user_id=U1&q=I%20want%20music%20from%20the%2090s%20for%20work";
    let (status, body) = send(&app, "GET", uri, None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let trace = &body["trace"];
    for key in ["snapshot_id", "catalog_snapshot", "index_snapshot", "embedding_snapshot"] {
        assert_eq!(trace[key], 1, "{key}");
    }
    let doc: serde_json::Value = serde_json::from_str(trace["candidate_document"].as_str().unwrap()).unwrap();
    assert_eq!(doc["relaxation_level"], 0);
    assert_eq!(doc["tracks"].as_array().unwrap().len(), 3);
    assert!(trace["extraction"].is_object());
    assert!(trace["ranking"].is_object());
    assert!(trace["timings"]["total_us"].is_u64());
    assert_eq!(body["playlist"]["track_ids"], json!(["T1", "T6", "T2"]));
    assert_eq!(state.store.playlist_count(), 0);
}

#[tokio::test]
async fn health_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(desk_config(dir.path()));
    send(&app, "POST", "/v1/playlists", Some(json!({"user_id": "U1", "query": WORK_QUERY}))).await;
    let (status, health) = send(&app, "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health["status"], "ok");
    assert_eq!(health["tracks"], 8);
    assert_eq!(health["playlists"], 1);
    let (_, metrics) = send(&app, "GET", "/metrics", None).await;
    let text = metrics.as_str().unwrap();
    for line in [
        "t2p_requests_total 1",
        "t2p_playlists_generated_total 1",
        "t2p_degraded_total 0",
        "t2p_llm_calls_total{purpose=\"extraction\"} 0",
        "t2p_snapshot_id 1",
    ] {
        assert!(text.contains(line), "missing {line} in\n{text}");
    }
}

async fn preflight(app: &axum::Router, origin: &str) -> (StatusCode, Option<String>) {
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/v1/playlists")
        .header("origin", origin)
        .header("access-control-request-method", "POST")
        .header("access-control-request-headers", "content-type")
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let allow = resp
        .headers()
        .get("access-control-allow-origin")
        .map(|v| v.to_str().unwrap().to_string());
    (resp.status(), allow)
}

#[tokio::test]
async fn cors_defaults_to_any_origin() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(desk_config(dir.path()));
    let (status, allow) = preflight(&app, "http://example.test").await;
    assert!(status.is_success());
    assert_eq!(allow.as_deref(), Some("*"));
}

#[tokio::test]
async fn cors_respects_configured_origins() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = desk_config(dir.path());
    config.server.cors_origins = vec!["http://localhost:5173".into()];
    let (_, app) = app(config);
    let (_, allow) = preflight(&app, "http://localhost:5173").await;
    assert_eq!(allow.as_deref(), Some("http://localhost:5173"));
    let (_, allow) = preflight(&app, "http://evil.test").await;
    assert_eq!(allow, None);
}

#[tokio::test]
async fn reload_swaps_or_keeps_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let (state, app) = app(desk_config(dir.path()));
    let (status, _) = send(&app, "POST", "/v1/admin/reload", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let cat = dir.path().join("catalog.jsonl");
    let emb = dir.path().join("embeddings.txt");
    let mut catalog = t2p_core::fixtures::DESK_CATALOG_JSONL.to_string();
    catalog.push_str(
        r#"{"track_id": "T9", "title": "New Shift", "artist_id": "A9", "artist_name": "Rowan", "duration_sec": 200, "tags": ["genre:pop", "decade:1990s", "mood:focus"]}"#,
    );
    std::fs::write(&cat, catalog).unwrap();
    std::fs::write(&emb, t2p_core::fixtures::DESK_EMBEDDINGS).unwrap();
    let body = json!({"catalog": cat, "embeddings": emb});
    let (status, r) = send(&app, "POST", "/v1/admin/reload", Some(body.clone())).await;
    assert_eq!(status, StatusCode::OK, "{r}");
    assert_eq!(r["snapshot_id"], 2);

    let (_, p) = send(&app, "POST", "/v1/playlists", Some(json!({"user_id": "U1", "query": WORK_QUERY}))).await;
    assert!(track_ids(&p).contains(&"T9".to_string()));
    assert_eq!(p["snapshot_id"], 2);

    std::fs::write(&cat, "{\"track_id\": \"T1\", broken").unwrap();
    let (status, r) = send(&app, "POST", "/v1/admin/reload", Some(body)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r["error"], "reload_failed");
    assert_eq!(state.snapshots.id(), 2);
    let (_, metrics) = send(&app, "GET", "/metrics", None).await;
    assert!(metrics.as_str().unwrap().contains("t2p_reload_failures_total 1"));
}

#[tokio::test]
async fn playlists_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let id = {
        let (_, app) = app(desk_config(dir.path()));
        let (_, body) = send(&app, "POST", "/v1/playlists", Some(json!({"user_id": "U1", "query": WORK_QUERY}))).await;
        body["playlist_id"].as_str().unwrap().to_string()
    };
    let (_, app) = app(desk_config(dir.path()));
    let (status, body) = send(&app, "GET", &format!("/v1/playlists/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(track_ids(&body), ["T1", "T6", "T2"]);
}

#[tokio::test]
async fn ui_directory_is_served() {
    let dir = tempfile::tempdir().unwrap();
    let ui = dir.path().join("ui");
    std::fs::create_dir(&ui).unwrap();
    std::fs::write(ui.join("index.html"), "<h1>t2p</h1>").unwrap();
    let mut config = desk_config(dir.path());
    config.paths.ui_dir = Some(ui);
    let (_, app) = app(config);
    let (status, body) = send(&app, "GET", "/ui/index.html", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, "<h1>t2p</h1>");
}

#[tokio::test]
async fn mock_llm_backends_through_http() {
    let dir = tempfile::tempdir().unwrap();
    let rules = dir.path().join("mock.json");
    std::fs::write(
        &rules,
        json!([
            {"purpose": "extraction", "response": "{\"tags\": [{\"facet\": \"decade\", \"value\": \"1990s\", \"kind\": \"explicit\", \"span\": \"90s\", \"score\": 0.9}]}"},
            {"purpose": "refinement", "response": "{\"title\": \"Nineties\", \"track_ids\": [\"T6\", \"T1\", \"T404\", \"T2\", \"T5\"]}"}
        ])
        .to_string(),
    )
    .unwrap();
    let mut config = desk_config(dir.path());
    config.backends.llm = "mock".into();
    config.llm.mock_rules = Some(rules);
    let (state, app) = app(config);
    let (status, body) = send(
        &app,
        "POST",
        "/v1/playlists",
        Some(json!({"user_id": "U1", "query": WORK_QUERY, "extraction_backend": "llm", "refinement_backend": "llm"})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["provenance"]["extraction_backend"], "llm");
    assert_eq!(body["provenance"]["refinement_backend"], "llm");
    assert_eq!(body["title"], "Nineties");
    assert_eq!(track_ids(&body), ["T6", "T1", "T2", "T5"]);
    let usage = state.ledger.report();
    assert_eq!((usage.extraction.calls, usage.refinement.calls), (1, 1));
    let stored = state.store.playlist(body["playlist_id"].as_str().unwrap()).unwrap();
    assert_eq!(stored.record.hallucinations_dropped, 1);
}
