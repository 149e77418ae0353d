mod common;

use common::*;
use proptest::prelude::*;
use resched_core::analytics::AnalyticsState;
use resched_core::event::{EventDraft, EventPayload, SensorReading};
use resched_core::model::Schedule;
use resched_core::optimizer::{GaParams, PlanningState};
use resched_core::situation::SituationState;
use resched_service::engine::{Action, Engine, OptimizeRequest, StateView};
use resched_service::frames::Frame;
use resched_service::proposal::{Move, Proposal};
use resched_service::ServiceConfig;
use std::collections::BTreeMap;
use std::io::Write;
use tempfile::TempDir;

#[derive(Debug, PartialEq)]
struct Observed {
    view: StateView,
    proposals: BTreeMap<String, Proposal>,
    situations: SituationState,
    analytics: AnalyticsState,
    committed: Schedule,
    planning: PlanningState,
    frames: Vec<Frame>,
}

fn observe(e: &Engine) -> Observed {
    Observed {
        view: e.state_view(),
        proposals: e.proposals().clone(),
        situations: e.situations().clone(),
        analytics: e.analytics().clone(),
        committed: e.simulator().committed().clone(),
        planning: e.simulator().planning_state(),
        frames: e.frames().history(),
    }
}

fn quick(dir: &TempDir) -> ServiceConfig {
    let mut c = desk_config(dir.path());
    c.ga = GaParams {
        population: 16,
        generations: 20,
        stall_limit: 10,
        ..GaParams::default()
    };
    c.predictive_k = 0;
    c
}

fn reading(ts: i64, value: f64) -> EventDraft {
    EventDraft {
        ts,
        payload: EventPayload::SensorReading(SensorReading {
            sensor_id: "T-aux".into(),
            line_id: None,
            value,
            source_trust: 1.0,
        }),
    }
}

fn newest(e: &Engine) -> Option<String> {
    e.proposals().keys().next_back().cloned()
}

#[test]
fn reopening_reproduces_plant_analytics_and_proposals() {
    let dir = TempDir::new().unwrap();
    let cfg = quick(&dir);
    let mut e = Engine::open(cfg.clone()).unwrap();
    op(&mut e, Action::Advance { until: 40 }).unwrap();
    op(&mut e, Action::Ingest(vec![reading(40, 20.0), reading(41, 20.5)])).unwrap();
    op(&mut e, Action::InjectFailure { line: "L3".into(), at: None }).unwrap();
    let id = newest(&e).unwrap();
    let first = e.proposals()[&id].schedule.jobs.values().flatten().next().unwrap().order_id.clone();
    op(&mut e, Action::Adjust { id: id.clone(), moves: vec![Move::Pin { order_id: first, pin: true }] }).unwrap();
    op(&mut e, Action::Execute { id }).unwrap();
    op(&mut e, Action::Advance { until: 150 }).unwrap();
    op(&mut e, Action::Recover { line: "L3".into(), at: None }).unwrap();
    let recovered = e
        .situations()
        .active_situations()
        .into_iter()
        .find(|s| s.kind == resched_core::situation::SituationKind::LineRecovered)
        .unwrap()
        .id;
    op(&mut e, Action::Acknowledge { id: recovered }).unwrap();
    op(&mut e, Action::Optimize(OptimizeRequest::default())).unwrap();
    op(&mut e, Action::Advance { until: 200 }).unwrap();
    let before = observe(&e);
    drop(e);

    let e = Engine::open(cfg).unwrap();
    assert_eq!(observe(&e), before);
}

#[test]
fn torn_tails_are_dropped_on_reopen() {
    let dir = TempDir::new().unwrap();
    let cfg = quick(&dir);
    let mut e = Engine::open(cfg.clone()).unwrap();
    op(&mut e, Action::InjectFailure { line: "L1".into(), at: Some(30) }).unwrap();
    let before = observe(&e);
    drop(e);
    for f in ["events.ndjson", "journal.ndjson"] {
        let mut file = std::fs::OpenOptions::new().append(true).open(dir.path().join("data").join(f)).unwrap();
        file.write_all(br#"{"seq":999,"ts":3"#).unwrap();
    }
    let mut e = Engine::open(cfg.clone()).unwrap();
    assert_eq!(observe(&e), before);
    let head = e.log_head();
    op(&mut e, Action::Ingest(vec![reading(31, 1.0)])).unwrap();
    assert_eq!(e.log_head(), head + 1);
    drop(e);
    assert_eq!(Engine::open(cfg).unwrap().log_head(), head + 1);
}

#[derive(Debug, Clone)]
enum Step {
    Advance(i64),
    Fail(usize),
    Recover(usize),
    Optimize(u64),
    ExecuteNewest,
    RejectNewest,
    Readings(u8),
    AckAny,
    Restart,
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        3 => (1i64..60).prop_map(Step::Advance),
        2 => (0usize..6).prop_map(Step::Fail),
        2 => (0usize..6).prop_map(Step::Recover),
        1 => (0u64..4).prop_map(Step::Optimize),
        2 => Just(Step::ExecuteNewest),
        1 => Just(Step::RejectNewest),
        1 => (1u8..4).prop_map(Step::Readings),
        1 => Just(Step::AckAny),
        1 => Just(Step::Restart),
    ]
}

fn apply(e: &mut Engine, s: &Step) {
    let line = |i: &usize| format!("L{}", i + 1).as_str().into();
    // Rejections are part of the script too; only the outcome on disk matters.
    let _ = match s {
        Step::Advance(d) => op(e, Action::Advance { until: e.simulator().clock() + d }),
        Step::Fail(i) => op(e, Action::InjectFailure { line: line(i), at: None }),
        Step::Recover(i) => op(e, Action::Recover { line: line(i), at: None }),
        Step::Optimize(seed) => op(
            e,
            Action::Optimize(OptimizeRequest {
                ga: Some(GaParams { population: 16, generations: 10, seed: *seed, ..GaParams::default() }),
                ..OptimizeRequest::default()
            }),
        ),
        Step::ExecuteNewest => match newest(e) {
            Some(id) => op(e, Action::Execute { id }),
            None => return,
        },
        Step::RejectNewest => match newest(e) {
            Some(id) => op(e, Action::Reject { id }),
            None => return,
        },
        Step::Readings(n) => {
            let t = e.simulator().clock();
            op(e, Action::Ingest((0..*n).map(|i| reading(t, 20.0 + f64::from(i))).collect()))
        }
        Step::AckAny => match e.situations().active_situations().into_iter().next() {
            Some(s) => op(e, Action::Acknowledge { id: s.id }),
            None => return,
        },
        Step::Restart => return,
    };
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn any_session_survives_restarts(script in proptest::collection::vec(step(), 1..14)) {
        let dir = TempDir::new().unwrap();
        let cfg = quick(&dir);
        let mut e = Engine::open(cfg.clone()).unwrap();
        for s in &script {
            if matches!(s, Step::Restart) {
                let before = observe(&e);
                drop(e);
                e = Engine::open(cfg.clone()).unwrap();
                prop_assert_eq!(observe(&e), before);
            } else {
                apply(&mut e, s);
            }
        }
        let before = observe(&e);
        drop(e);
        prop_assert_eq!(observe(&Engine::open(cfg).unwrap()), before);
    }
}
