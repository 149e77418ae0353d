mod common;

use axum::http::{Method, StatusCode};
use axum::Router;
use common::*;
use resched_core::ids::{LineId, OrderId};
use resched_core::model::{ChangeoverMatrix, Order, Recipe};
use resched_core::scenario::{ScenarioConfig, TrueRates};
use resched_core::situation::SituationModel;
use resched_service::engine::Engine;
use resched_service::http::Service;
use resched_service::ServiceConfig;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use tempfile::TempDir;

fn start(cfg: ServiceConfig) -> (Service, Router) {
    let service = Service::start(Engine::open(cfg).unwrap());
    let router = service.router();
    (service, router)
}

fn desk_service(dir: &TempDir) -> (Service, Router) {
    let mut cfg = desk_config(dir.path());
    cfg.predictive_k = 0;
    start(cfg)
}

/// Two lines. L1 runs families A and B with changeovers A->B 10 and B->A 25;
/// L2 only runs family C.
fn tiny() -> ScenarioConfig {
    let recipe = |id: &str, family: &str, line: &str, minutes: i64| Recipe {
        id: id.into(),
        family: family.into(),
        durations: [(LineId::from(line), minutes)].into_iter().collect(),
    };
    let order = |id: &str, recipe: &str| Order {
        id: id.into(),
        recipe_id: recipe.into(),
        release: 0,
        due: 480,
        priority: 1,
    };
    ScenarioConfig {
        rng_algorithm: resched_core::rng::ALGORITHM.into(),
        name: "tiny".into(),
        lines: vec!["L1".into(), "L2".into()],
        recipes: vec![recipe("RA", "A", "L1", 30), recipe("RB", "B", "L1", 40), recipe("RC", "C", "L2", 50)],
        changeover_matrix: ChangeoverMatrix::new(0).with_entry("A", "B", 10).with_entry("B", "A", 25),
        orders: vec![order("o1", "RA"), order("o2", "RB"), order("o3", "RC")],
        shift_start: 0,
        shift_length: 480,
        true_rates: TrueRates::constant(0.0),
        line_hazards: BTreeMap::new(),
        repair_minutes: None,
        sensors: Vec::new(),
        situation_model: SituationModel::default(),
        rng_seed: 1,
    }
}

fn tiny_service(dir: &TempDir) -> (Service, Router) {
    let mut cfg = custom_config(&tiny(), dir.path());
    cfg.predictive_k = 0;
    start(cfg)
}

fn sensor(ts: i64, value: f64) -> Value {
    json!({"ts": ts, "kind": "SensorReading", "payload": {"sensor_id": "T-extra", "value": value, "source_trust": 1.0}})
}

fn failure_batch(ts: i64, line: &str) -> Value {
    let probe = json!({"ts": ts, "kind": "SensorReading",
        "payload": {"sensor_id": format!("{line}-status"), "line_id": line, "value": 0.0, "source_trust": 1.0}});
    json!([
        {"ts": ts, "kind": "DeviceFailure",
         "payload": {"line_id": line, "device": "drive", "source_trust": 1.0, "cause": "External"}},
        probe, probe,
    ])
}

async fn head(router: &Router) -> u64 {
    get(router, "/api/state").await.1["head"].as_u64().unwrap()
}

async fn clock(router: &Router) -> i64 {
    get(router, "/api/state").await.1["clock"].as_i64().unwrap()
}

fn lines_of(schedule: &Value) -> Vec<String> {
    schedule["jobs"]
        .as_object()
        .unwrap()
        .iter()
        .filter(|(_, jobs)| !jobs.as_array().unwrap().is_empty())
        .map(|(l, _)| l.clone())
        .collect()
}

#[tokio::test]
async fn fresh_system_reports_no_situations_and_prior_rates() {
    let dir = TempDir::new().unwrap();
    let (_svc, r) = desk_service(&dir);
    let (status, body) = get(&r, "/api/situations?since=0").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!([]));

    let (status, est) = get(&r, "/api/analytics/failure-rates?recipe=R01&line=L1").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(est["rate"], json!(0.1));
    assert_eq!(est["backoff_level"], json!("Global"));
    assert_eq!(est["trials"], json!(0));

    let (_, table) = get(&r, "/api/analytics/failure-rates").await;
    assert_eq!(table, json!([]));
}

#[tokio::test]
async fn reads_need_a_known_token_and_health_does_not() {
    let dir = TempDir::new().unwrap();
    let (_svc, r) = desk_service(&dir);
    assert_eq!(call(&r, Method::GET, "/api/state", None, None).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(
        call(&r, Method::GET, "/api/lines", Some("wrong"), None).await.0,
        StatusCode::UNAUTHORIZED
    );
    assert_eq!(call(&r, Method::GET, "/healthz", None, None).await.0, StatusCode::OK);
    let (status, lines) = call(&r, Method::GET, "/api/lines", Some(VIEWER), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(lines.as_array().unwrap().len(), 6);
    assert_eq!(lines[0]["state"], json!("Available"));
}

#[tokio::test]
async fn ingest_assigns_consecutive_sequence_numbers() {
    let dir = TempDir::new().unwrap();
    let (_svc, r) = desk_service(&dir);
    let n = head(&r).await;
    let t = clock(&r).await;
    let batch = json!([sensor(t, 60.0), sensor(t, 60.5), sensor(t + 1, 59.9)]);
    let (status, body) = post(&r, "/api/events", &batch.to_string()).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["seqs"], json!([n + 1, n + 2, n + 3]));

    // NDJSON works too.
    let nd = format!("{}\n{}\n", sensor(t + 1, 60.1), sensor(t + 2, 60.2));
    let (status, body) = post(&r, "/api/events", &nd).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["seqs"], json!([n + 4, n + 5]));
}

#[tokio::test]
async fn bad_token_appends_nothing() {
    let dir = TempDir::new().unwrap();
    let (svc, r) = desk_service(&dir);
    let n = head(&r).await;
    let batch = json!([sensor(0, 60.0)]).to_string();
    let (status, _) = call(&r, Method::POST, "/api/events", Some("nope"), Some(&batch)).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(head(&r).await, n);
    drop(svc.stop());
    let audit = audit_records(dir.path());
    assert_eq!(audit.len(), 1);
    assert_eq!(audit[0].principal, None);
    assert_eq!(audit[0].action, "POST /api/events");
}

#[tokio::test]
async fn timestamp_regression_rejects_the_whole_batch() {
    let dir = TempDir::new().unwrap();
    let (_svc, r) = desk_service(&dir);
    let (s, _) = post(&r, "/api/sim/advance", r#"{"until": 30}"#).await;
    assert_eq!(s, StatusCode::OK);
    let n = head(&r).await;

    let inner = json!([sensor(40, 1.0), sensor(35, 1.0)]).to_string();
    assert_eq!(post(&r, "/api/events", &inner).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let before_clock = json!([sensor(10, 1.0)]).to_string();
    assert_eq!(post(&r, "/api/events", &before_clock).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(head(&r).await, n);
}

#[tokio::test]
async fn ingest_refuses_schedules_and_bad_orders() {
    let dir = TempDir::new().unwrap();
    let (_svc, r) = desk_service(&dir);
    let n = head(&r).await;
    let (_, current) = get(&r, "/api/schedule/current").await;
    let sched = json!([{"ts": 0, "kind": "ScheduleExecuted",
        "payload": {"schedule": current["schedule"], "source": "outside"}}]);
    assert_eq!(post(&r, "/api/events", &sched.to_string()).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    let dup = json!([{"ts": 0, "kind": "OrderCreated", "payload": {"order":
        {"id": "O01", "recipe_id": "R01", "release": 0, "due": 400, "priority": 1}, "family": "F1"}}]);
    assert_eq!(post(&r, "/api/events", &dup.to_string()).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let unknown = json!([{"ts": 0, "kind": "OrderCreated", "payload": {"order":
        {"id": "X1", "recipe_id": "nope", "release": 0, "due": 400, "priority": 1}, "family": "F1"}}]);
    assert_eq!(post(&r, "/api/events", &unknown.to_string()).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(post(&r, "/api/events", "{not json").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(head(&r).await, n);
}

#[tokio::test]
async fn failure_that_strands_orders_raises_a_plant_notice() {
    let dir = TempDir::new().unwrap();
    let (_svc, r) = desk_service(&dir);
    // R06 and R10 only run on L2.
    let (_, body) = post(&r, "/api/events", &failure_batch(0, "L2").to_string()).await;
    assert_eq!(body["proposals"], json!([]));
    let (_, all) = get(&r, "/api/situations").await;
    let plant = all.as_array().unwrap().iter().find(|s| s["subject"] == json!("plant")).unwrap();
    assert_eq!(plant["kind"], json!("ScheduleInfeasible"));
    let id = plant["id"].as_str().unwrap();
    assert_eq!(post(&r, &format!("/api/situations/{id}/ack"), "").await.0, StatusCode::OK);
}

#[tokio::test]
async fn corroborated_failure_yields_a_situation_and_one_proposal() {
    let dir = TempDir::new().unwrap();
    let (_svc, r) = desk_service(&dir);
    post(&r, "/api/sim/advance", r#"{"until": 60}"#).await;
    let (status, body) = post(&r, "/api/events", &failure_batch(60, "L3").to_string()).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let situations = body["situations"].as_array().unwrap();
    let proposals = body["proposals"].as_array().unwrap();
    assert_eq!(situations.len(), 1, "{body}");
    assert_eq!(proposals.len(), 1, "{body}");

    let (_, s) = get(&r, "/api/situations?active=true").await;
    let s = s.as_array().unwrap().iter().find(|x| x["id"] == situations[0]).unwrap().clone();
    assert_eq!(s["kind"], json!("LineUnavailable"));
    assert_eq!(s["subject"], json!({"line": "L3"}));

    let (status, p) = get(&r, &format!("/api/proposals/{}", proposals[0].as_str().unwrap())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(p["status"], json!("Pending"));
    assert_eq!(p["trigger"], situations[0]);
    assert!(!lines_of(&p["schedule"]).contains(&"L3".to_owned()));

    let (_, lines) = get(&r, "/api/lines").await;
    let l3 = lines.as_array().unwrap().iter().find(|l| l["line_id"] == "L3").unwrap();
    assert_eq!(l3["state"], json!("Failed"));
    assert_eq!(l3["detected_state"], json!("Failed"));
}

#[tokio::test]
async fn execute_twice_is_refused_and_metrics_compare_with_baseline() {
    let dir = TempDir::new().unwrap();
    let (_svc, r) = desk_service(&dir);
    let (status, p) = post(&r, "/api/optimize", r#"{"mode": "reactive"}"#).await;
    assert_eq!(status, StatusCode::OK, "{p}");
    assert_eq!(p["trigger"], json!("manual"));
    let id = p["id"].as_str().unwrap().to_owned();
    let n = head(&r).await;

    let (status, body) = post(&r, &format!("/api/proposals/{id}/execute"), "").await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["seqs"], json!([n + 1]));
    let (status, body) = post(&r, &format!("/api/proposals/{id}/execute"), "").await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], json!("already executed"));

    let (_, p) = get(&r, &format!("/api/proposals/{id}")).await;
    assert_eq!(p["status"], json!("Executed"));
    assert_eq!(p["executed_seq"], json!(n + 1));
    let (_, current) = get(&r, "/api/schedule/current").await;
    assert_eq!(current["schedule"], p["schedule"]);

    let (_, m) = get(&r, "/api/metrics").await;
    assert!(m["current"]["total_usage"].as_i64().unwrap() > 0);
    assert!(m["baseline"]["total_usage"].as_i64().unwrap() > 0);
    assert!(m["usage_reduction_pct"].as_f64().unwrap() > 0.0, "{m}");
}

#[tokio::test]
async fn line_failure_between_propose_and_execute_makes_the_proposal_stale() {
    let dir = TempDir::new().unwrap();
    let (_svc, r) = desk_service(&dir);
    let (_, p) = post(&r, "/api/optimize", "{}").await;
    let id = p["id"].as_str().unwrap().to_owned();
    let victim = lines_of(&p["schedule"])[0].clone();
    let (status, _) = post(&r, "/api/sim/failure", &json!({"line_id": victim}).to_string()).await;
    assert_eq!(status, StatusCode::OK);

    let (status, body) = post(&r, &format!("/api/proposals/{id}/execute"), "").await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], json!("stale proposal"));
    assert!(!body["violations"].as_array().unwrap().is_empty());
    assert!(body["details"]["hint"].as_str().unwrap().contains("/api/optimize"));
    let (_, p) = get(&r, &format!("/api/proposals/{id}")).await;
    assert_eq!(p["status"], json!("Pending"));
}

#[tokio::test]
async fn unknown_ids_are_not_found() {
    let dir = TempDir::new().unwrap();
    let (_svc, r) = desk_service(&dir);
    assert_eq!(get(&r, "/api/proposals/P999999").await.0, StatusCode::NOT_FOUND);
    assert_eq!(post(&r, "/api/proposals/P999999/execute", "").await.0, StatusCode::NOT_FOUND);
    assert_eq!(post(&r, "/api/proposals/P999999/reject", "").await.0, StatusCode::NOT_FOUND);
    assert_eq!(post(&r, "/api/situations/S999999/ack", "").await.0, StatusCode::NOT_FOUND);
    assert_eq!(
        post(&r, "/api/sim/failure", r#"{"line_id": "L99"}"#).await.0,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn manual_proposals_supersede_each_other_and_can_be_rejected() {
    let dir = TempDir::new().unwrap();
    let (_svc, r) = desk_service(&dir);
    let (_, a) = post(&r, "/api/optimize", "{}").await;
    let (_, b) = post(&r, "/api/optimize", r#"{"ga": {"seed": 9, "generations": 20}}"#).await;
    let (_, a) = get(&r, &format!("/api/proposals/{}", a["id"].as_str().unwrap())).await;
    assert_eq!(a["status"], json!("Superseded"));
    let b_id = b["id"].as_str().unwrap();
    let (status, rej) = post(&r, &format!("/api/proposals/{b_id}/reject"), "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(rej["status"], json!("Rejected"));
    assert_eq!(post(&r, &format!("/api/proposals/{b_id}/execute"), "").await.0, StatusCode::CONFLICT);
    let (_, all) = get(&r, "/api/proposals").await;
    assert_eq!(all.as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn only_recoveries_and_plant_notices_can_be_acknowledged() {
    let dir = TempDir::new().unwrap();
    let (_svc, r) = desk_service(&dir);
    let (_, fail) = post(&r, "/api/sim/failure", r#"{"line_id": "L3", "at": 20}"#).await;
    let down = fail["situations"][0].as_str().unwrap().to_owned();
    assert_eq!(post(&r, &format!("/api/situations/{down}/ack"), "").await.0, StatusCode::CONFLICT);
    let (_, rec) = post(&r, "/api/sim/recover", r#"{"line_id": "L3", "at": 50}"#).await;
    assert_eq!(rec["recovered"], json!(true));
    let up = rec["situations"][0].as_str().unwrap().to_owned();
    let (status, _) = post(&r, &format!("/api/situations/{up}/ack"), "").await;
    assert_eq!(status, StatusCode::OK);
    let (_, active) = get(&r, "/api/situations?active=true").await;
    assert!(active.as_array().unwrap().iter().all(|s| s["id"] != json!(up)));
}

#[tokio::test]
async fn duplicate_injection_is_reported() {
    let dir = TempDir::new().unwrap();
    let (_svc, r) = desk_service(&dir);
    let (_, first) = post(&r, "/api/sim/failure", r#"{"line_id": "L1"}"#).await;
    assert_eq!(first["duplicate"], json!(false));
    let (_, again) = post(&r, "/api/sim/failure", r#"{"line_id": "L1"}"#).await;
    assert_eq!(again["duplicate"], json!(true));
    assert_eq!(again["proposals"], json!([]));
}

#[tokio::test]
async fn auto_execute_commits_the_triggered_proposal() {
    let dir = TempDir::new().unwrap();
    let mut cfg = desk_config(dir.path());
    cfg.auto_execute = true;
    cfg.predictive_k = 0;
    let (_svc, r) = start(cfg);
    let (_, body) = post(&r, "/api/sim/failure", r#"{"line_id": "L1", "at": 45}"#).await;
    let id = body["proposals"][0].as_str().unwrap();
    let (_, p) = get(&r, &format!("/api/proposals/{id}")).await;
    assert_eq!(p["status"], json!("Executed"));
    let (_, current) = get(&r, "/api/schedule/current").await;
    assert!(!lines_of(&current["schedule"]).contains(&"L1".to_owned()));
}

async fn tiny_proposal(r: &Router) -> (String, Value) {
    let (status, p) = post(r, "/api/optimize", "{}").await;
    assert_eq!(status, StatusCode::OK, "{p}");
    (p["id"].as_str().unwrap().to_owned(), p)
}

fn sequence(p: &Value, line: &str) -> Vec<String> {
    p["schedule"]["jobs"][line]
        .as_array()
        .unwrap()
        .iter()
        .map(|j| j["order_id"].as_str().unwrap().to_owned())
        .collect()
}

#[tokio::test]
async fn moving_an_order_to_an_incompatible_line_is_rejected() {
    let dir = TempDir::new().unwrap();
    let (_svc, r) = tiny_service(&dir);
    let (id, before) = tiny_proposal(&r).await;
    let moves = json!({"moves": [{"order_id": "o1", "line": "L2", "position": 0}]});
    let (status, body) = post(&r, &format!("/api/proposals/{id}/adjust"), &moves.to_string()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["violations"][0]["rule"], json!("incompatible_line"));
    let (_, after) = get(&r, &format!("/api/proposals/{id}")).await;
    assert_eq!(after, before);
}

#[tokio::test]
async fn identity_move_leaves_fitness_unchanged() {
    let dir = TempDir::new().unwrap();
    let (_svc, r) = tiny_service(&dir);
    let (id, before) = tiny_proposal(&r).await;
    let first = sequence(&before, "L1")[0].clone();
    let moves = json!({"moves": [{"order_id": first, "line": "L1", "position": 0}]});
    let (status, body) = post(&r, &format!("/api/proposals/{id}/adjust"), &moves.to_string()).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["fitness"], before["fitness"]);
    assert_eq!(body["proposal"]["schedule"], before["schedule"]);
    assert_eq!(body["proposal"]["status"], json!("Adjusted"));
    for k in ["total_usage", "utilization_stddev", "expected_failure_cost", "total_tardiness"] {
        assert_eq!(body["delta"][k], json!(0.0));
    }
}

#[tokio::test]
async fn swapping_adjacent_orders_changes_usage_by_the_changeover_difference() {
    let dir = TempDir::new().unwrap();
    let (_svc, r) = tiny_service(&dir);
    let (id, before) = tiny_proposal(&r).await;
    // A then B costs a 10 minute changeover, B then A costs 25.
    assert_eq!(sequence(&before, "L1"), ["o1", "o2"]);
    let moves = json!({"moves": [{"order_id": "o2", "line": "L1", "position": 0}]});
    let (status, body) = post(&r, &format!("/api/proposals/{id}/adjust"), &moves.to_string()).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(sequence(&body["proposal"], "L1"), ["o2", "o1"]);
    assert_eq!(body["delta"]["total_usage"], json!(15.0));
    // L1 busy goes 80 -> 95 against L2's 50; the two-line stddev is half the gap over 480.
    let d = body["delta"]["utilization_stddev"].as_f64().unwrap();
    assert!((d - 15.0 / 960.0).abs() < 1e-12, "{d}");
    assert_eq!(body["delta"]["expected_failure_cost"], json!(0.0));
    assert_eq!(body["original_fitness"], before["fitness"]);
}

#[tokio::test]
async fn in_flight_and_pinned_orders_cannot_be_moved() {
    let dir = TempDir::new().unwrap();
    let (_svc, r) = tiny_service(&dir);
    post(&r, "/api/sim/advance", r#"{"until": 5}"#).await;
    let (id, before) = tiny_proposal(&r).await;
    let moves = json!({"moves": [{"order_id": "o1", "line": "L1", "position": 1}]});
    let (status, body) = post(&r, &format!("/api/proposals/{id}/adjust"), &moves.to_string()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["violations"][0]["message"].as_str().unwrap().contains("in-flight"));

    let pin = json!({"moves": [{"order_id": "o2", "pin": true}]});
    assert_eq!(post(&r, &format!("/api/proposals/{id}/adjust"), &pin.to_string()).await.0, StatusCode::OK);
    let moves = json!({"moves": [{"order_id": "o2", "line": "L1", "position": 0}]});
    let (status, body) = post(&r, &format!("/api/proposals/{id}/adjust"), &moves.to_string()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["violations"][0]["message"].as_str().unwrap().contains("pinned"));
    let (_, after) = get(&r, &format!("/api/proposals/{id}")).await;
    assert_eq!(after["schedule"], before["schedule"]);
    assert_eq!(after["pinned"], json!(["o2"]));
}

#[tokio::test]
async fn adjusted_proposal_executes() {
    let dir = TempDir::new().unwrap();
    let (_svc, r) = tiny_service(&dir);
    let (id, _) = tiny_proposal(&r).await;
    let moves = json!({"moves": [{"order_id": "o2", "line": "L1", "position": 0}]});
    post(&r, &format!("/api/proposals/{id}/adjust"), &moves.to_string()).await;
    let (status, body) = post(&r, &format!("/api/proposals/{id}/execute"), "").await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let (_, current) = get(&r, "/api/schedule/current").await;
    let order: Vec<OrderId> = current["schedule"]["jobs"]["L1"]
        .as_array()
        .unwrap()
        .iter()
        .map(|j| j["order_id"].as_str().unwrap().into())
        .collect();
    assert_eq!(order, vec![OrderId::from("o2"), OrderId::from("o1")]);
}
