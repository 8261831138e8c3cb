use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use egomem_cli::server::{router, ServiceState};
use egomem_core::synthetic::{default_habits, generate_stream};
use egomem_core::{ProviderConfig, ProviderMode};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

const QUERY_AT: i64 = 1_709_596_800;

fn state(dir: &Path) -> Arc<ServiceState> {
    Arc::new(ServiceState::open(dir, ProviderConfig::default()).unwrap())
}

async fn call(state: &Arc<ServiceState>, method: &str, uri: &str, body: &str) -> (StatusCode, String) {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body.to_string())).unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

/// Ten events from the first two synthetic days, as JSONL.
fn ten_events() -> String {
    let stream = generate_stream(&default_habits(), 2, 0, 42).unwrap();
    stream.records.iter().take(10).map(|r| serde_json::to_string(r).unwrap() + "\n").collect()
}

fn query_body(k: Option<usize>, hops: Option<usize>) -> String {
    serde_json::json!({
        "user_id": "synth",
        "text": "where did I last brew the coffee maker?",
        "at_ts": QUERY_AT,
        "k": k,
        "hops": hops,
    })
    .to_string()
}

#[tokio::test]
async fn healthz_reports_ok() {
    let dir = tempfile::tempdir().unwrap();
    let st = state(dir.path());
    let (status, body) = call(&st, "GET", "/healthz", "").await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["users"], 0);
}

#[tokio::test]
async fn errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let st = state(dir.path());
    let (status, _) = call(&st, "POST", "/v1/query", &query_body(None, None)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, body) = call(&st, "POST", "/v1/query", "{\"user_id\": 3").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body.contains("error"));
    let (status, _) = call(&st, "POST", "/v1/events", "not json\n").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&st, "POST", "/v1/events", "").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&st, "GET", "/v1/stats?user=nobody", "").await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let bad_user = ten_events().replace("\"synth\"", "\"../etc\"");
    let (status, _) = call(&st, "POST", "/v1/events", &bad_user).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, _) = call(&st, "POST", "/v1/events", &ten_events()).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(&st, "POST", "/v1/events", &ten_events()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&st, "POST", "/v1/query", &query_body(Some(0), None)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unreachable_provider_is_503() {
    let dir = tempfile::tempdir().unwrap();
    let config = ProviderConfig {
        mode: ProviderMode::Http,
        endpoint_url: Some("http://127.0.0.1:1".into()),
        timeout_ms: 500,
        max_retries: 0,
        ..ProviderConfig::default()
    };
    let st = Arc::new(ServiceState::open(dir.path(), config).unwrap());
    let (status, body) = call(&st, "POST", "/v1/events", &ten_events()).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert!(body.contains("EGOSELF_PROVIDER=offline"));
    assert!(st.users().is_empty());
}

#[tokio::test]
async fn ingest_query_stats_profile() {
    let dir = tempfile::tempdir().unwrap();
    let st = state(dir.path());
    let (status, body) = call(&st, "POST", "/v1/events", &ten_events()).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let report: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(report["events_added"], 10);
    assert!(dir.path().join("synth.json").exists());

    let (status, body) = call(&st, "GET", "/v1/stats?user=synth", "").await;
    assert_eq!(status, StatusCode::OK);
    let stats: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(stats["events"], 10);

    let (status, body) = call(&st, "POST", "/v1/query", &query_body(Some(5), Some(1))).await;
    assert_eq!(status, StatusCode::OK);
    let result: Value = serde_json::from_str(&body).unwrap();
    assert!(result["expanded"].as_array().unwrap().iter().any(|e| e == "synth-01-001"), "{body}");

    let (_, body) = call(&st, "GET", "/v1/profile?user=synth", "").await;
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["profile"], Value::Null);
    let (status, body) = call(&st, "POST", "/v1/profile/rebuild?user=synth&min_freq=2&theta=0.6", "").await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let (_, body) = call(&st, "GET", "/v1/profile?user=synth", "").await;
    let profile: Value = serde_json::from_str(&body).unwrap();
    assert!(profile["rendered"].as_str().unwrap().starts_with("User habits:\n"));
    let (status, _) = call(&st, "POST", "/v1/profile/rebuild?user=synth&theta=1.5", "").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    // A restarted service sees the persisted store.
    let reopened = state(dir.path());
    assert_eq!(reopened.users(), ["synth"]);
    assert!(reopened.snapshot("synth").unwrap().store().profile().is_some());
}

#[tokio::test]
async fn http_query_matches_cli_json() {
    let dir = tempfile::tempdir().unwrap();
    let st = state(dir.path());
    let (status, _) = call(&st, "POST", "/v1/events", &ten_events()).await;
    assert_eq!(status, StatusCode::OK);

    for (k, hops) in [(None, None), (Some(3), Some(0)), (Some(4), Some(2))] {
        let (status, http) = call(&st, "POST", "/v1/query", &query_body(k, hops)).await;
        assert_eq!(status, StatusCode::OK);
        let mut args = vec![
            "query".to_string(),
            "--store".into(),
            dir.path().join("synth.json").display().to_string(),
            "--query".into(),
            "where did I last brew the coffee maker?".into(),
            "--at".into(),
            QUERY_AT.to_string(),
            "--json".into(),
        ];
        if let Some(k) = k {
            args.extend(["--k".into(), k.to_string()]);
        }
        if let Some(h) = hops {
            args.extend(["--hops".into(), h.to_string()]);
        }
        let out = Command::new(env!("CARGO_BIN_EXE_egomem"))
            .args(&args)
            .env("RUST_LOG", "off")
            .env_remove("EGOSELF_PROVIDER")
            .env_remove("EGOSELF_EMBED_DIM")
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        let cli = String::from_utf8(out.stdout).unwrap();
        assert_eq!(cli.trim_end_matches('\n'), http, "k={k:?} hops={hops:?}");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn readers_see_whole_snapshots_during_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let st = state(dir.path());
    let stream = generate_stream(&default_habits(), 4, 3, 5).unwrap();
    let lines: Vec<String> = stream.records.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
    let (first, rest) = lines.split_at(lines.len() / 2);
    let (status, _) = call(&st, "POST", "/v1/events", &first.join("\n")).await;
    assert_eq!(status, StatusCode::OK);

    let writer = {
        let st = st.clone();
        let body = rest.join("\n");
        tokio::spawn(async move { call(&st, "POST", "/v1/events", &body).await })
    };
    let mut seen = Vec::new();
    for _ in 0..20 {
        let (status, body) = call(&st, "GET", "/v1/stats?user=synth", "").await;
        assert_eq!(status, StatusCode::OK);
        seen.push(serde_json::from_str::<Value>(&body).unwrap()["events"].as_u64().unwrap());
        tokio::task::yield_now().await;
    }
    assert_eq!(writer.await.unwrap().0, StatusCode::OK);
    let total = lines.len() as u64;
    assert!(seen.iter().all(|&n| n == first.len() as u64 || n == total), "{seen:?}");
    let (_, body) = call(&st, "GET", "/v1/stats?user=synth", "").await;
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["events"], total);
}
