#![allow(dead_code)]

use axum::body::Body;
use axum::http::{Method, Request as HttpRequest, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use resched_core::optimizer::GaParams;
use resched_core::scenario::ScenarioConfig;
use resched_service::engine::{Action, Engine, Request};
use resched_service::store::AuditRecord;
use resched_service::ServiceConfig;
use serde_json::Value;
use std::path::{Path, PathBuf};
use tower::ServiceExt;

pub const TOKEN: &str = "op-secret";
pub const VIEWER: &str = "view-secret";

pub fn desk_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/desk-6x40.json")
}

pub fn desk() -> ScenarioConfig {
    ScenarioConfig::load(desk_path()).unwrap()
}

/// Config for `scenario` stored under `dir`, with quick GA settings.
pub fn config_for(scenario: &Path, dir: &Path) -> ServiceConfig {
    let mut c = ServiceConfig::new(scenario, dir.join("data"));
    c.tokens.insert("operator".into(), TOKEN.into());
    c.tokens.insert("viewer".into(), VIEWER.into());
    c.ga = GaParams {
        population: 48,
        generations: 150,
        stall_limit: 40,
        ..GaParams::default()
    };
    c.fsync = false;
    c
}

pub fn desk_config(dir: &Path) -> ServiceConfig {
    config_for(&desk_path(), dir)
}

/// Writes `scenario` into `dir` and returns a config pointing at it.
pub fn custom_config(scenario: &ScenarioConfig, dir: &Path) -> ServiceConfig {
    let path = dir.join("scenario.json");
    scenario.save(&path).unwrap();
    config_for(&path, dir)
}

pub fn op(engine: &mut Engine, action: Action) -> Result<Value, resched_service::ApiError> {
    engine.handle(Request::new(Some(TOKEN), "test", action))
}

pub fn audit_records(dir: &Path) -> Vec<AuditRecord> {
    let text = std::fs::read_to_string(dir.join("data/audit.ndjson")).unwrap_or_default();
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

pub async fn call(router: &Router, method: Method, path: &str, token: Option<&str>, body: Option<&str>) -> (StatusCode, Value) {
    let mut req = HttpRequest::builder().method(method).uri(path);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_owned())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

pub async fn get(router: &Router, path: &str) -> (StatusCode, Value) {
    call(router, Method::GET, path, Some(TOKEN), None).await
}

pub async fn post(router: &Router, path: &str, body: &str) -> (StatusCode, Value) {
    call(router, Method::POST, path, Some(TOKEN), Some(body)).await
}
