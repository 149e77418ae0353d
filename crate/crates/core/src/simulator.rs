//! Discrete-event simulation of the batch plant.
//!
//! Every state change goes through [`Simulator::absorb`], both for events the
//! simulator produces and for events ingested from outside, so the state can
//! be rebuilt from the event log plus the clock. Random draws are keyed:
//!
//! * batch outcome by (order, line, attempt),
//! * next spontaneous failure by (line, failure epoch), measured from the
//!   last time the line came up,
//! * repair duration by (line, failure epoch),
//! * sensor value by (sensor, sample index).

use crate::event::{
    BatchCompleted, DeviceFailure, DeviceRecovered, Event, EventDraft, EventPayload, FailureCause, OrderCreated,
    Outcome, ScheduleExecuted, SensorReading,
};
use crate::ids::{Family, LineId, OrderId, SensorId};
use crate::model::{Catalog, LineState, LineStatus, Minutes, Order, PlantState, Schedule, ScheduledJob};
use crate::optimizer::PlanningState;
use crate::rng::{self, KeyedStream};
use crate::scenario::{ScenarioConfig, ScenarioError};
use crate::validate::{validate_schedule, Rule, Violation};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("time {at} is before the simulation clock {clock}")]
    PastTime { at: Minutes, clock: Minutes },
    #[error("unknown line {0}")]
    UnknownLine(LineId),
}

#[derive(Debug, Error, PartialEq)]
pub enum CommitError {
    #[error("schedule rejected: {}", join(.0))]
    Invalid(Vec<Violation>),
    #[error("schedule rejected: orders already completed: {}", ids(.0))]
    AlreadyCompleted(Vec<OrderId>),
    #[error("schedule rejected: in-flight jobs altered: {}", ids(.0))]
    InFlightAltered(Vec<OrderId>),
    #[error("schedule rejected: shift {got:?} does not match the scenario shift {expected:?}")]
    ShiftMismatch {
        got: (Minutes, Minutes),
        expected: (Minutes, Minutes),
    },
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

fn ids(v: &[OrderId]) -> String {
    v.iter().map(OrderId::as_str).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderStatus {
    Completed(Outcome),
    /// Part of the committed plan, possibly running.
    Pending,
    /// Open and not in the committed plan, e.g. after its line failed.
    Stranded,
}

/// Result of a failure injection.
#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    /// Events up to and including the failure.
    pub events: Vec<EventDraft>,
    /// The line was already failed; nothing was injected.
    pub duplicate: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct SimLine {
    state: LineState,
    last_family: Option<Family>,
    epoch: u64,
    up_since: Minutes,
    repair_at: Option<Minutes>,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    config: ScenarioConfig,
    catalog: Catalog,
    outcomes: KeyedStream,
    hazards: KeyedStream,
    sensors: KeyedStream,
    repairs: KeyedStream,
    clock: Minutes,
    lines: BTreeMap<LineId, SimLine>,
    orders: BTreeMap<OrderId, Order>,
    committed: Schedule,
    pending: BTreeMap<LineId, VecDeque<ScheduledJob>>,
    completed: BTreeMap<OrderId, Outcome>,
    attempts: BTreeMap<OrderId, u32>,
    sensor_next: BTreeMap<SensorId, i64>,
}

/// Candidate happenings, in tie-break order at equal times.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Next {
    Completion(LineId),
    Repair(LineId),
    Failure(LineId),
    Sample(usize),
}

impl Simulator {
    /// Fresh plant at shift start plus one OrderCreated per order.
    pub fn init(config: ScenarioConfig) -> Result<(Self, Vec<EventDraft>), ScenarioError> {
        config.validate().map_err(ScenarioError::Invalid)?;
        let mut sim = Self::bare(config);
        let catalog = sim.catalog.clone();
        let drafts: Vec<EventDraft> = sim
            .config
            .orders
            .iter()
            .map(|o| {
                EventDraft::new(
                    sim.config.shift_start,
                    EventPayload::OrderCreated(OrderCreated {
                        order: o.clone(),
                        family: catalog.family_of(o).expect("validated").clone(),
                    }),
                )
            })
            .collect();
        for d in &drafts {
            sim.absorb_payload(d.ts, &d.payload);
        }
        Ok((sim, drafts))
    }

    /// Reconstructs the state reached after `events` with the clock at
    /// `clock` (or the last event time if later).
    pub fn rebuild(config: ScenarioConfig, events: &[Event], clock: Minutes) -> Result<Self, ScenarioError> {
        config.validate().map_err(ScenarioError::Invalid)?;
        let mut sim = Self::bare(config);
        for e in events {
            sim.absorb(e);
        }
        sim.clock = sim.clock.max(clock);
        sim.resync_sensors();
        Ok(sim)
    }

    fn bare(config: ScenarioConfig) -> Self {
        let seed = config.rng_seed;
        let lines = config
            .lines
            .iter()
            .map(|l| {
                (
                    l.clone(),
                    SimLine {
                        state: LineState::Available,
                        last_family: None,
                        epoch: 0,
                        up_since: config.shift_start,
                        repair_at: None,
                    },
                )
            })
            .collect();
        let mut sim = Self {
            catalog: config.catalog(),
            outcomes: KeyedStream::new(seed, rng::STREAM_OUTCOMES),
            hazards: KeyedStream::new(seed, rng::STREAM_HAZARDS),
            sensors: KeyedStream::new(seed, rng::STREAM_SENSORS),
            repairs: KeyedStream::new(seed, rng::STREAM_REPAIRS),
            clock: config.shift_start,
            lines,
            orders: BTreeMap::new(),
            committed: Schedule::empty(config.shift()),
            pending: BTreeMap::new(),
            completed: BTreeMap::new(),
            attempts: BTreeMap::new(),
            sensor_next: BTreeMap::new(),
            config,
        };
        sim.resync_sensors();
        sim
    }

    fn resync_sensors(&mut self) {
        let start = self.config.shift_start;
        let elapsed = (self.clock - start).max(0);
        self.sensor_next = self
            .config
            .sensors
            .iter()
            .map(|s| (s.sensor_id.clone(), elapsed / s.period + 1))
            .collect();
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn clock(&self) -> Minutes {
        self.clock
    }

    pub fn line_state(&self, line: &LineId) -> Option<LineState> {
        self.lines.get(line).map(|l| l.state)
    }

    /// The plan last committed, in-flight jobs included.
    pub fn committed(&self) -> &Schedule {
        &self.committed
    }

    pub fn orders(&self) -> impl Iterator<Item = &Order> {
        self.orders.values()
    }

    pub fn completed(&self) -> &BTreeMap<OrderId, Outcome> {
        &self.completed
    }

    pub fn order_status(&self, order: &OrderId) -> Option<OrderStatus> {
        if !self.orders.contains_key(order) {
            return None;
        }
        if let Some(o) = self.completed.get(order) {
            return Some(OrderStatus::Completed(*o));
        }
        let pending = self.pending.values().flatten().any(|j| &j.order_id == order);
        Some(if pending {
            OrderStatus::Pending
        } else {
            OrderStatus::Stranded
        })
    }

    fn in_flight(&self, line: &LineId) -> Option<&ScheduledJob> {
        self.pending
            .get(line)
            .and_then(|q| q.front())
            .filter(|j| j.changeover_start < self.clock && self.clock < j.end)
    }

    /// Jobs running at the current clock, by line.
    pub fn in_flight_jobs(&self) -> BTreeMap<LineId, ScheduledJob> {
        self.lines
            .keys()
            .filter_map(|l| self.in_flight(l).map(|j| (l.clone(), j.clone())))
            .collect()
    }

    /// Planning view: where and when new work may start.
    pub fn plant_snapshot(&self) -> PlantState {
        PlantState {
            lines: self
                .lines
                .iter()
                .map(|(id, l)| {
                    let running = self.in_flight(id);
                    let family = running
                        .and_then(|j| self.orders.get(&j.order_id))
                        .and_then(|o| self.catalog.family_of(o))
                        .cloned();
                    (
                        id.clone(),
                        LineStatus {
                            state: l.state,
                            available_from: running.map_or(self.clock, |j| j.end),
                            last_family: family.or_else(|| l.last_family.clone()),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Orders neither completed nor running, in id order.
    pub fn open_orders(&self) -> Vec<Order> {
        let running: BTreeSet<&OrderId> = self
            .lines
            .keys()
            .filter_map(|l| self.in_flight(l).map(|j| &j.order_id))
            .collect();
        self.orders
            .values()
            .filter(|o| !self.completed.contains_key(&o.id) && !running.contains(&o.id))
            .cloned()
            .collect()
    }

    /// Plant snapshot, open orders and running orders together.
    pub fn planning_state(&self) -> PlanningState {
        PlanningState {
            plant: self.plant_snapshot(),
            open_orders: self.open_orders(),
            in_flight: self
                .in_flight_jobs()
                .into_iter()
                .map(|(l, j)| (l, self.orders[&j.order_id].clone()))
                .collect(),
        }
    }

    fn next_failure(&self, id: &LineId, line: &SimLine) -> Option<Minutes> {
        let hazard = self.config.hazard(id);
        if line.state != LineState::Available || hazard <= 0.0 {
            return None;
        }
        let u = self.hazards.uniform(&[id.as_str(), &line.epoch.to_string()]);
        let per_minute = hazard / 60.0;
        let wait = (-(1.0 - u).ln() / per_minute).ceil().max(1.0);
        Some(line.up_since.saturating_add(wait.min(1e15) as Minutes))
    }

    fn repair_duration(&self, id: &LineId, epoch: u64, mean: Minutes) -> Minutes {
        let u = self.repairs.uniform(&[id.as_str(), &epoch.to_string()]);
        ((-(1.0 - u).ln() * mean as f64).round() as Minutes).max(1)
    }

    fn next_happening(&self, until: Minutes) -> Option<(Minutes, Next)> {
        let mut best: Option<(Minutes, Next)> = None;
        let mut offer = |t: Minutes, n: Next| {
            if t <= until && best.as_ref().is_none_or(|b| (t, &n) < (b.0, &b.1)) {
                best = Some((t, n));
            }
        };
        for (id, line) in &self.lines {
            if let Some(job) = self.pending.get(id).and_then(|q| q.front()) {
                offer(job.end, Next::Completion(id.clone()));
            }
            if let Some(t) = line.repair_at {
                offer(t, Next::Repair(id.clone()));
            }
            if let Some(t) = self.next_failure(id, line) {
                offer(t, Next::Failure(id.clone()));
            }
        }
        for (i, s) in self.config.sensors.iter().enumerate() {
            let idx = self.sensor_next[&s.sensor_id];
            offer(self.config.shift_start + idx * s.period, Next::Sample(i));
        }
        best
    }

    /// Runs the plant up to `until`, returning the events produced in order.
    pub fn step(&mut self, until: Minutes) -> Result<Vec<EventDraft>, SimError> {
        if until < self.clock {
            return Err(SimError::PastTime {
                at: until,
                clock: self.clock,
            });
        }
        let mut out = Vec::new();
        while let Some((t, next)) = self.next_happening(until) {
            let t = t.max(self.clock);
            self.clock = t;
            match next {
                Next::Completion(line) => {
                    let job = self.pending[&line].front().cloned().expect("offered");
                    let order = self.orders[&job.order_id].clone();
                    let family = self.catalog.family_of(&order).expect("known recipe").clone();
                    let prev = self.lines[&line].last_family.clone();
                    let attempt = self.attempts.get(&order.id).copied().unwrap_or(0);
                    let p = self.config.true_rates.rate(&order.recipe_id, &line, prev.as_ref());
                    let u = self
                        .outcomes
                        .uniform(&[order.id.as_str(), line.as_str(), &attempt.to_string()]);
                    let outcome = if u < p { Outcome::Failed } else { Outcome::Success };
                    self.emit(
                        &mut out,
                        t,
                        EventPayload::BatchCompleted(BatchCompleted {
                            order_id: order.id.clone(),
                            recipe_id: order.recipe_id.clone(),
                            line_id: line,
                            prev_family: prev,
                            family,
                            start: job.processing_start,
                            end: job.end,
                            outcome,
                        }),
                    );
                }
                Next::Repair(line) => {
                    self.emit(
                        &mut out,
                        t,
                        EventPayload::DeviceRecovered(DeviceRecovered {
                            line_id: line,
                            source_trust: 1.0,
                        }),
                    );
                }
                Next::Failure(line) => self.emit_failure(&mut out, t, &line, FailureCause::Spontaneous),
                Next::Sample(i) => {
                    let spec = self.config.sensors[i].clone();
                    let idx = self.sensor_next[&spec.sensor_id];
                    let z = self
                        .sensors
                        .rng(&[spec.sensor_id.as_str(), &idx.to_string()])
                        .standard_normal();
                    self.sensor_next.insert(spec.sensor_id.clone(), idx + 1);
                    self.emit(
                        &mut out,
                        t,
                        EventPayload::SensorReading(SensorReading {
                            sensor_id: spec.sensor_id,
                            line_id: None,
                            value: spec.mean + spec.std * z,
                            source_trust: 1.0,
                        }),
                    );
                }
            }
        }
        self.clock = until;
        Ok(out)
    }

    fn emit(&mut self, out: &mut Vec<EventDraft>, ts: Minutes, payload: EventPayload) {
        self.absorb_payload(ts, &payload);
        out.push(EventDraft::new(ts, payload));
    }

    /// A failure plus the status probes that corroborate it.
    fn emit_failure(&mut self, out: &mut Vec<EventDraft>, ts: Minutes, line: &LineId, cause: FailureCause) {
        self.emit(
            out,
            ts,
            EventPayload::DeviceFailure(DeviceFailure {
                line_id: line.clone(),
                device: format!("{line}-drive"),
                source_trust: 1.0,
                cause,
            }),
        );
        let probes = self.config.situation_model.debounce_k.saturating_sub(1);
        for _ in 0..probes {
            self.emit(
                out,
                ts,
                EventPayload::SensorReading(SensorReading {
                    sensor_id: SensorId::new(format!("{line}-status")),
                    line_id: Some(line.clone()),
                    value: 0.0,
                    source_trust: 1.0,
                }),
            );
        }
    }

    /// Deterministic failure of `line` at `at`, after running the plant up
    /// to that time.
    pub fn inject_failure(&mut self, line: &LineId, at: Minutes) -> Result<Injection, SimError> {
        self.check(line, at)?;
        let mut events = self.step(at)?;
        if self.lines[line].state == LineState::Failed {
            return Ok(Injection { events, duplicate: true });
        }
        self.emit_failure(&mut events, at, line, FailureCause::Injected);
        Ok(Injection {
            events,
            duplicate: false,
        })
    }

    /// Brings a failed line back at `at`. The flag is false when the line
    /// was not failed by then.
    pub fn recover(&mut self, line: &LineId, at: Minutes) -> Result<(Vec<EventDraft>, bool), SimError> {
        self.check(line, at)?;
        let mut events = self.step(at)?;
        if self.lines[line].state != LineState::Failed {
            return Ok((events, false));
        }
        self.emit(
            &mut events,
            at,
            EventPayload::DeviceRecovered(DeviceRecovered {
                line_id: line.clone(),
                source_trust: 1.0,
            }),
        );
        Ok((events, true))
    }

    fn check(&self, line: &LineId, at: Minutes) -> Result<(), SimError> {
        if !self.lines.contains_key(line) {
            return Err(SimError::UnknownLine(line.clone()));
        }
        if at < self.clock {
            return Err(SimError::PastTime { at, clock: self.clock });
        }
        Ok(())
    }

    /// Checks a plan against the current plant without committing it and
    /// returns the plan that would be executed, running jobs included.
    pub fn prepare_commit(&self, schedule: &Schedule) -> Result<Schedule, CommitError> {
        let shift = self.config.shift();
        if schedule.shift() != shift {
            return Err(CommitError::ShiftMismatch {
                got: (schedule.shift_start, schedule.shift_length),
                expected: (shift.start, shift.length),
            });
        }
        let done: Vec<OrderId> = schedule
            .iter_jobs()
            .filter(|(_, j)| self.completed.contains_key(&j.order_id))
            .map(|(_, j)| j.order_id.clone())
            .collect();
        if !done.is_empty() {
            return Err(CommitError::AlreadyCompleted(done));
        }
        let running = self.in_flight_jobs();
        let running_orders: BTreeMap<&OrderId, (&LineId, &ScheduledJob)> =
            running.iter().map(|(l, j)| (&j.order_id, (l, j))).collect();
        let mut altered = Vec::new();
        let mut rest = Schedule::empty(shift);
        for (line, job) in schedule.iter_jobs() {
            match running_orders.get(&job.order_id) {
                Some((l, j)) if *l == line && *j == job => {}
                Some(_) => altered.push(job.order_id.clone()),
                None => rest.jobs.entry(line.clone()).or_default().push(job.clone()),
            }
        }
        if !altered.is_empty() {
            return Err(CommitError::InFlightAltered(altered));
        }
        let plant = self.plant_snapshot();
        let open = self.open_orders();
        let violations: Vec<Violation> = validate_schedule(&rest, &plant, &open, &self.catalog)
            .into_iter()
            .filter(|v| !(v.rule == Rule::MissingOrder && self.is_stranded_by_plant(v.order.as_ref(), &open, &plant)))
            .collect();
        if !violations.is_empty() {
            return Err(CommitError::Invalid(violations));
        }
        let mut merged = Schedule::empty(shift);
        for (line, job) in running {
            merged.jobs.entry(line).or_default().push(job);
        }
        for (line, jobs) in rest.jobs {
            merged.jobs.entry(line).or_default().extend(jobs);
        }
        Ok(merged.normalized())
    }

    /// An open order no Available line can run may be left out of a plan.
    fn is_stranded_by_plant(&self, order: Option<&OrderId>, open: &[Order], plant: &PlantState) -> bool {
        order
            .and_then(|id| open.iter().find(|o| &o.id == id))
            .is_some_and(|o| self.catalog.eligible_lines(o, plant).is_empty())
    }

    /// Replaces the pending plan. Running jobs are kept as they are.
    pub fn commit_schedule(&mut self, schedule: &Schedule, source: &str) -> Result<EventDraft, CommitError> {
        let merged = self.prepare_commit(schedule)?;
        let payload = EventPayload::ScheduleExecuted(ScheduleExecuted {
            schedule: merged,
            source: source.to_owned(),
        });
        self.absorb_payload(self.clock, &payload);
        Ok(EventDraft::new(self.clock, payload))
    }

    /// Applies a logged event to the state.
    pub fn absorb(&mut self, event: &Event) {
        self.absorb_payload(event.ts, &event.payload);
    }

    fn absorb_payload(&mut self, ts: Minutes, payload: &EventPayload) {
        self.clock = self.clock.max(ts);
        match payload {
            EventPayload::OrderCreated(o) => {
                self.orders.insert(o.order.id.clone(), o.order.clone());
            }
            EventPayload::BatchCompleted(b) => {
                self.completed.insert(b.order_id.clone(), b.outcome);
                *self.attempts.entry(b.order_id.clone()).or_default() += 1;
                if let Some(line) = self.lines.get_mut(&b.line_id) {
                    line.last_family = Some(b.family.clone());
                }
                for q in self.pending.values_mut() {
                    q.retain(|j| j.order_id != b.order_id);
                }
            }
            EventPayload::ScheduleExecuted(x) => {
                self.committed = x.schedule.clone();
                self.pending = x
                    .schedule
                    .jobs
                    .iter()
                    .map(|(l, jobs)| {
                        (
                            l.clone(),
                            jobs.iter()
                                .filter(|j| !self.completed.contains_key(&j.order_id))
                                .cloned()
                                .collect(),
                        )
                    })
                    .collect();
            }
            EventPayload::DeviceFailure(f) => {
                let repair_mean = self.config.repair_minutes;
                let Some(line) = self.lines.get_mut(&f.line_id) else {
                    return;
                };
                if line.state == LineState::Failed {
                    return;
                }
                line.state = LineState::Failed;
                line.epoch += 1;
                let epoch = line.epoch;
                line.repair_at = None;
                self.pending.remove(&f.line_id);
                if let (FailureCause::Spontaneous, Some(mean)) = (f.cause, repair_mean) {
                    let d = self.repair_duration(&f.line_id, epoch, mean);
                    self.lines.get_mut(&f.line_id).expect("present").repair_at = Some(ts + d);
                }
            }
            EventPayload::DeviceRecovered(r) => {
                if let Some(line) = self.lines.get_mut(&r.line_id) {
                    if line.state == LineState::Failed {
                        line.state = LineState::Available;
                        line.up_since = ts;
                        line.repair_at = None;
                    }
                }
            }
            EventPayload::MaintenanceStart(m) => {
                if let Some(line) = self.lines.get_mut(&m.line_id) {
                    line.state = LineState::Maintenance;
                    line.repair_at = None;
                    self.pending.remove(&m.line_id);
                }
            }
            EventPayload::MaintenanceEnd(m) => {
                if let Some(line) = self.lines.get_mut(&m.line_id) {
                    if line.state == LineState::Maintenance {
                        line.state = LineState::Available;
                        line.up_since = ts;
                    }
                }
            }
            EventPayload::SensorReading(_) => {}
        }
    }
}
