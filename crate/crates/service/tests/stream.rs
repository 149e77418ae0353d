mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use common::*;
use http_body_util::BodyExt;
use resched_service::engine::Engine;
use resched_service::http::Service;
use std::time::Duration;
use tempfile::TempDir;
use tower::ServiceExt;

#[derive(Debug)]
struct Sse {
    id: u64,
    event: String,
}

fn parse(text: &str) -> Vec<Sse> {
    text.split("\n\n")
        .filter_map(|block| {
            let mut id = None;
            let mut event = None;
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("id:") {
                    id = v.trim().parse().ok();
                } else if let Some(v) = line.strip_prefix("event:") {
                    event = Some(v.trim().to_owned());
                }
            }
            Some(Sse { id: id?, event: event? })
        })
        .collect()
}

/// Opens the stream and reads until `want` events arrived or a second passes.
async fn read_events(router: &Router, uri: &str, last_id: Option<u64>, want: usize) -> (StatusCode, Vec<Sse>) {
    let mut req = Request::builder().uri(uri).header("authorization", format!("Bearer {TOKEN}"));
    if let Some(id) = last_id {
        req = req.header("last-event-id", id.to_string());
    }
    let resp = router.clone().oneshot(req.body(Body::empty()).unwrap()).await.unwrap();
    let status = resp.status();
    let mut body = resp.into_body();
    let mut text = String::new();
    while parse(&text).len() < want {
        match tokio::time::timeout(Duration::from_secs(1), body.frame()).await {
            Ok(Some(Ok(frame))) => {
                if let Some(data) = frame.data_ref() {
                    text.push_str(&String::from_utf8_lossy(data));
                }
            }
            _ => break,
        }
    }
    (status, parse(&text))
}

fn service(dir: &TempDir) -> (Service, Router) {
    let mut cfg = desk_config(dir.path());
    cfg.predictive_k = 0;
    let svc = Service::start(Engine::open(cfg).unwrap());
    let router = svc.router();
    (svc, router)
}

#[tokio::test]
async fn stream_requires_a_token() {
    let dir = TempDir::new().unwrap();
    let (_svc, r) = service(&dir);
    let req = Request::builder().uri("/api/stream").body(Body::empty()).unwrap();
    assert_eq!(r.clone().oneshot(req).await.unwrap().status(), StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn stream_replays_history_and_resumes_by_id() {
    let dir = TempDir::new().unwrap();
    let (_svc, r) = service(&dir);
    // Failure gives a situation and a proposal frame; executing adds more.
    let (_, body) = post(&r, "/api/sim/failure", r#"{"line_id": "L1"}"#).await;
    let id = body["proposals"][0].as_str().unwrap().to_owned();
    post(&r, &format!("/api/proposals/{id}/execute"), "").await;

    let (_, state) = get(&r, "/api/state").await;
    let total = state["frames"].as_u64().unwrap() as usize;
    assert!(total >= 4, "{state}");

    let (status, all) = read_events(&r, "/api/stream", None, total).await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<u64> = all.iter().map(|e| e.id).collect();
    assert_eq!(ids, (1..=total as u64).collect::<Vec<_>>());
    assert!(all.iter().any(|e| e.event == "situation"));
    assert!(all.iter().any(|e| e.event == "proposal"));
    assert!(all.iter().any(|e| e.event == "schedule"));

    let (_, tail) = read_events(&r, "/api/stream", Some(2), total - 2).await;
    assert_eq!(tail.first().map(|e| e.id), Some(3));
    assert_eq!(tail.len(), total - 2);

    let (_, by_query) = read_events(&r, &format!("/api/stream?since={}", total - 1), None, 1).await;
    assert_eq!(by_query.iter().map(|e| e.id).collect::<Vec<_>>(), vec![total as u64]);
}

#[tokio::test]
async fn live_frames_follow_the_backlog() {
    let dir = TempDir::new().unwrap();
    let (_svc, r) = service(&dir);
    let (_, state) = get(&r, "/api/state").await;
    let before = state["frames"].as_u64().unwrap();
    let reader = {
        let r = r.clone();
        tokio::spawn(async move { read_events(&r, &format!("/api/stream?since={before}"), None, 1).await })
    };
    tokio::time::sleep(Duration::from_millis(50)).await;
    post(&r, "/api/optimize", "{}").await;
    let (_, got) = reader.await.unwrap();
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].id, before + 1);
    assert_eq!(got[0].event, "proposal");
}
