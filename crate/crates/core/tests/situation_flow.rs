mod common;

use common::quiet_plant;
use resched_core::analytics::{AnalyticsState, LogicVersion};
use resched_core::baseline::baseline_schedule;
use resched_core::event::Event;
use resched_core::eventlog::EventLog;
use resched_core::ids::LineId;
use resched_core::model::LineState;
use resched_core::simulator::Simulator;
use resched_core::situation::{Situation, SituationKind, SituationState, Subject};

struct Rig {
    sim: Simulator,
    log: EventLog,
    analytics: AnalyticsState,
    situations: SituationState,
    seen: u64,
}

impl Rig {
    fn new() -> Self {
        let (sim, drafts) = Simulator::init(quiet_plant()).unwrap();
        let mut log = EventLog::in_memory();
        log.append_batch(drafts).unwrap();
        let mut rig = Self {
            sim,
            log,
            analytics: AnalyticsState::new(LogicVersion::default()),
            situations: SituationState::new(),
            seen: 0,
        };
        rig.pump();
        rig
    }

    fn pump(&mut self) -> Vec<Situation> {
        let events: Vec<Event> = self.log.read_from(self.seen + 1).unwrap();
        let model = self.sim.config().situation_model.clone();
        let mut out = Vec::new();
        for e in &events {
            self.analytics.apply(e).unwrap();
            out.extend(self.situations.observe(&model, e, &self.analytics));
            self.seen = e.seq;
        }
        out
    }
}

#[test]
fn injected_failure_raises_one_line_unavailable() {
    let mut rig = Rig::new();
    let plan = baseline_schedule(
        &rig.sim.plant_snapshot(),
        &rig.sim.open_orders(),
        rig.sim.catalog(),
        rig.sim.config().shift(),
    )
    .unwrap();
    let d = rig.sim.commit_schedule(&plan, "baseline").unwrap();
    rig.log.append(d).unwrap();
    rig.pump();

    let line = LineId::from("L2");
    let inj = rig.sim.inject_failure(&line, 40).unwrap();
    rig.log.append_batch(inj.events).unwrap();
    let raised = rig.pump();
    let down: Vec<&Situation> = raised.iter().filter(|s| s.kind == SituationKind::LineUnavailable).collect();
    assert_eq!(down.len(), 1);
    assert_eq!(down[0].subject, Subject::Line(line.clone()));
    assert!(down[0].requires_reconfiguration);
    assert!(down[0].reliability >= 0.8);
    assert_eq!(down[0].evidence.len(), 3);
    assert_eq!(rig.situations.line_state(&line), LineState::Failed);

    // A repeated injection changes nothing.
    assert!(rig.sim.inject_failure(&line, 45).unwrap().duplicate);
    assert!(rig.pump().is_empty());

    let (events, _) = rig.sim.recover(&line, 60).unwrap();
    rig.log.append_batch(events).unwrap();
    let up: Vec<Situation> = rig.pump().into_iter().filter(|s| s.kind == SituationKind::LineRecovered).collect();
    assert_eq!(up.len(), 1);
    assert!(!rig.situations.is_active(&down[0].id));
}

#[test]
fn quiet_shift_raises_nothing() {
    let mut rig = Rig::new();
    let plan = baseline_schedule(
        &rig.sim.plant_snapshot(),
        &rig.sim.open_orders(),
        rig.sim.catalog(),
        rig.sim.config().shift(),
    )
    .unwrap();
    let d = rig.sim.commit_schedule(&plan, "baseline").unwrap();
    rig.log.append(d).unwrap();
    let ev = rig.sim.step(480).unwrap();
    rig.log.append_batch(ev).unwrap();
    assert!(rig.pump().is_empty());
    assert!(rig.situations.active_situations().is_empty());
}
