mod common;

use common::{order, quiet_plant, recipe};
use resched_core::baseline::baseline_schedule;
use resched_core::event::{Event, EventKind, EventPayload, FailureCause, Outcome};
use resched_core::eventlog::EventLog;
use resched_core::ids::{LineId, OrderId};
use resched_core::model::{LineState, ScheduledJob};
use resched_core::scenario::{ScenarioConfig, ScenarioError, SensorSpec, TrueRates};
use resched_core::simulator::{CommitError, OrderStatus, Simulator};
use resched_core::validate::Rule;

fn start(config: ScenarioConfig) -> (Simulator, EventLog) {
    let (sim, drafts) = Simulator::init(config).unwrap();
    let mut log = EventLog::in_memory();
    log.append_batch(drafts).unwrap();
    (sim, log)
}

fn commit_baseline(sim: &mut Simulator, log: &mut EventLog) {
    let plan = baseline_schedule(
        &sim.plant_snapshot(),
        &sim.open_orders(),
        sim.catalog(),
        sim.config().shift(),
    )
    .unwrap();
    let draft = sim.commit_schedule(&plan, "baseline").unwrap();
    log.append(draft).unwrap();
}

fn events(log: &EventLog) -> Vec<Event> {
    log.read_from(1).unwrap()
}

#[test]
fn init_emits_one_order_created_per_order() {
    let mut c = quiet_plant();
    c.orders.truncate(3);
    let (_, log) = start(c);
    let ev = events(&log);
    assert_eq!(ev.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert!(ev.iter().all(|e| e.payload.kind() == EventKind::OrderCreated));
}

#[test]
fn unknown_recipe_is_rejected() {
    let mut c = quiet_plant();
    c.orders.push(order("o9", "R-missing", 0, 100));
    assert!(matches!(Simulator::init(c), Err(ScenarioError::Invalid(v)) if v.iter().any(|m| m.contains("o9"))));
}

#[test]
fn quiet_plant_executes_plan_exactly() {
    let (mut sim, mut log) = start(quiet_plant());
    commit_baseline(&mut sim, &mut log);
    let plan = sim.committed().clone();
    log.append_batch(sim.step(480).unwrap()).unwrap();
    let mut batches = 0;
    for e in events(&log) {
        if let EventPayload::BatchCompleted(b) = &e.payload {
            let (line, job) = plan.find(&b.order_id).unwrap();
            assert_eq!(line, &b.line_id);
            assert_eq!((b.start, b.end), (job.processing_start, job.end));
            assert_eq!(e.ts, job.end);
            assert_eq!(b.outcome, Outcome::Success);
            batches += 1;
        }
    }
    assert_eq!(batches, 6);
}

#[test]
fn event_stream_is_deterministic() {
    let run = || {
        let mut c = quiet_plant();
        c.true_rates = TrueRates::constant(0.3);
        c.line_hazards = [("L1".into(), 0.5), ("L2".into(), 0.3)].into_iter().collect();
        c.repair_minutes = Some(30);
        c.sensors = vec![SensorSpec {
            sensor_id: "T1".into(),
            mean: 50.0,
            std: 2.0,
            period: 10,
        }];
        let (mut sim, mut log) = start(c);
        commit_baseline(&mut sim, &mut log);
        for t in [60, 120, 121, 300, 480] {
            log.append_batch(sim.step(t).unwrap()).unwrap();
        }
        serde_json::to_string(&events(&log)).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn certain_failure_rate_fails_every_batch() {
    let mut c = quiet_plant();
    c.true_rates = TrueRates::constant(1.0);
    let (mut sim, mut log) = start(c);
    commit_baseline(&mut sim, &mut log);
    let ev = sim.step(480).unwrap();
    let outcomes: Vec<Outcome> = ev
        .iter()
        .filter_map(|d| match &d.payload {
            EventPayload::BatchCompleted(b) => Some(b.outcome),
            _ => None,
        })
        .collect();
    assert_eq!(outcomes.len(), 6);
    assert!(outcomes.iter().all(|o| *o == Outcome::Failed));
}

#[test]
fn without_a_plan_only_line_events_occur() {
    let mut c = quiet_plant();
    c.line_hazards = [("L1".into(), 2.0)].into_iter().collect();
    c.repair_minutes = Some(20);
    let (mut sim, _) = start(c);
    let ev = sim.step(480).unwrap();
    assert!(!ev.is_empty());
    for d in &ev {
        assert!(
            matches!(
                &d.payload,
                EventPayload::DeviceFailure(_) | EventPayload::DeviceRecovered(_) | EventPayload::SensorReading(_)
            ),
            "{d:?}"
        );
    }
}

#[test]
fn injected_failure_comes_with_corroborating_probes() {
    let (mut sim, _) = start(quiet_plant());
    let inj = sim.inject_failure(&"L2".into(), 120).unwrap();
    assert!(!inj.duplicate);
    let tail: Vec<_> = inj.events.iter().filter(|d| d.ts == 120).collect();
    assert_eq!(tail.len(), 3);
    assert!(matches!(&tail[0].payload, EventPayload::DeviceFailure(f) if f.cause == FailureCause::Injected));
    for d in &tail[1..] {
        assert!(matches!(&d.payload, EventPayload::SensorReading(r) if r.observes_down() && r.line_id == Some("L2".into())));
    }
    assert_eq!(sim.line_state(&"L2".into()), Some(LineState::Failed));

    let again = sim.inject_failure(&"L2".into(), 130).unwrap();
    assert!(again.duplicate);
    assert!(again.events.is_empty());
    assert!(sim.inject_failure(&"L2".into(), 100).is_err());
    assert!(sim.inject_failure(&"L9".into(), 200).is_err());
}

#[test]
fn failed_line_strands_its_jobs() {
    let (mut sim, mut log) = start(quiet_plant());
    commit_baseline(&mut sim, &mut log);
    let plan = sim.committed().clone();
    let l1: Vec<OrderId> = plan.jobs[&LineId::from("L1")].iter().map(|j| j.order_id.clone()).collect();
    let inj = sim.inject_failure(&"L1".into(), 1).unwrap();
    log.append_batch(inj.events).unwrap();
    log.append_batch(sim.step(480).unwrap()).unwrap();
    for e in events(&log) {
        if let EventPayload::BatchCompleted(b) = &e.payload {
            assert_ne!(b.line_id, LineId::from("L1"));
        }
    }
    for o in &l1 {
        assert_eq!(sim.order_status(o), Some(OrderStatus::Stranded));
    }
}

#[test]
fn every_order_has_exactly_one_status() {
    let mut c = quiet_plant();
    c.true_rates = TrueRates::constant(0.4);
    let (mut sim, mut log) = start(c);
    commit_baseline(&mut sim, &mut log);
    log.append_batch(sim.inject_failure(&"L2".into(), 50).unwrap().events).unwrap();
    log.append_batch(sim.step(480).unwrap()).unwrap();
    let ids: Vec<OrderId> = sim.orders().map(|o| o.id.clone()).collect();
    assert_eq!(ids.len(), 6);
    for id in ids {
        assert!(sim.order_status(&id).is_some());
    }
}

#[test]
fn commit_on_fresh_state_makes_every_job_pending() {
    let (mut sim, mut log) = start(quiet_plant());
    commit_baseline(&mut sim, &mut log);
    for o in sim.orders() {
        assert_eq!(sim.order_status(&o.id), Some(OrderStatus::Pending));
    }
}

#[test]
fn commit_dropping_a_pending_order_is_rejected() {
    let (mut sim, _) = start(quiet_plant());
    let mut plan = baseline_schedule(
        &sim.plant_snapshot(),
        &sim.open_orders(),
        sim.catalog(),
        sim.config().shift(),
    )
    .unwrap();
    let victim = plan.jobs.values_mut().find(|j| !j.is_empty()).unwrap().pop().unwrap();
    match sim.commit_schedule(&plan, "x") {
        Err(CommitError::Invalid(v)) => {
            assert!(v.iter().any(|v| v.rule == Rule::MissingOrder && v.order.as_ref() == Some(&victim.order_id)))
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn commit_containing_a_completed_order_is_rejected() {
    let (mut sim, mut log) = start(quiet_plant());
    commit_baseline(&mut sim, &mut log);
    let old = sim.committed().clone();
    log.append_batch(sim.step(100).unwrap()).unwrap();
    assert!(!sim.completed().is_empty());
    assert!(matches!(sim.commit_schedule(&old, "x"), Err(CommitError::AlreadyCompleted(_))));
}

#[test]
fn mid_run_commit_keeps_the_running_job() {
    let mut c = quiet_plant();
    c.recipes = vec![recipe("RA", "A", &[("L1", 60)])];
    c.lines = vec!["L1".into()];
    c.orders = vec![order("o1", "RA", 0, 400), order("o2", "RA", 0, 400), order("o3", "RA", 0, 400)];
    let (mut sim, mut log) = start(c);
    commit_baseline(&mut sim, &mut log);
    log.append_batch(sim.step(30).unwrap()).unwrap();
    let running = sim.in_flight_jobs()[&LineId::from("L1")].clone();
    assert_eq!(running.order_id, OrderId::from("o1"));

    // Reverse the remaining two; the running job must survive untouched.
    let mut plan = resched_core::model::Schedule::empty(sim.config().shift());
    plan.jobs.insert(
        "L1".into(),
        vec![
            ScheduledJob {
                order_id: "o3".into(),
                changeover_start: 60,
                processing_start: 60,
                end: 120,
            },
            ScheduledJob {
                order_id: "o2".into(),
                changeover_start: 120,
                processing_start: 120,
                end: 180,
            },
        ],
    );
    sim.commit_schedule(&plan, "reorder").unwrap();
    let jobs = &sim.committed().jobs[&LineId::from("L1")];
    assert_eq!(jobs[0], running);
    assert_eq!(jobs.iter().map(|j| j.order_id.as_str()).collect::<Vec<_>>(), vec!["o1", "o3", "o2"]);

    let mut altered = plan.clone();
    altered.jobs.get_mut(&LineId::from("L1")).unwrap().insert(
        0,
        ScheduledJob {
            end: running.end + 5,
            ..running.clone()
        },
    );
    assert!(matches!(sim.commit_schedule(&altered, "x"), Err(CommitError::InFlightAltered(_))));
}

#[test]
fn rebuild_from_log_matches_live_state() {
    let mut c = quiet_plant();
    c.true_rates = TrueRates::constant(0.3);
    c.line_hazards = [("L1".into(), 0.6), ("L3".into(), 0.4)].into_iter().collect();
    c.repair_minutes = Some(25);
    c.sensors = vec![SensorSpec {
        sensor_id: "T1".into(),
        mean: 5.0,
        std: 1.0,
        period: 7,
    }];
    let (mut live, mut log) = start(c.clone());
    commit_baseline(&mut live, &mut log);
    log.append_batch(live.step(95).unwrap()).unwrap();
    log.append_batch(live.inject_failure(&"L2".into(), 100).unwrap().events).unwrap();
    log.append_batch(live.step(133).unwrap()).unwrap();

    let mut rebuilt = Simulator::rebuild(c, &events(&log), live.clock()).unwrap();
    assert_eq!(rebuilt.planning_state(), live.planning_state());
    assert_eq!(rebuilt.committed(), live.committed());
    assert_eq!(rebuilt.step(480).unwrap(), live.step(480).unwrap());
}

#[test]
fn empirical_failure_frequency_tracks_true_rate() {
    // Binomial(400, 0.2): sd = 8, so 4 sd is 32 failures.
    for seed in [1, 2, 3] {
        let mut c = quiet_plant();
        c.lines = vec!["L1".into()];
        c.recipes = vec![recipe("RA", "A", &[("L1", 1)])];
        c.orders = (0..400).map(|i| order(&format!("o{i:03}"), "RA", 0, 1000)).collect();
        c.true_rates = TrueRates::constant(0.2);
        c.rng_seed = seed;
        let (mut sim, mut log) = start(c);
        commit_baseline(&mut sim, &mut log);
        let ev = sim.step(480).unwrap();
        let done: Vec<Outcome> = ev
            .iter()
            .filter_map(|d| match &d.payload {
                EventPayload::BatchCompleted(b) => Some(b.outcome),
                _ => None,
            })
            .collect();
        assert_eq!(done.len(), 400);
        let failed = done.iter().filter(|o| **o == Outcome::Failed).count() as i64;
        assert!((failed - 80).abs() <= 32, "seed {seed}: {failed}");
    }
}
