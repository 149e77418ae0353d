//! Situation detection over the event stream.
//!
//! A closed rule set turns events and analytics into [`Situation`]s:
//!
//! * `LineUnavailable` once a device failure is corroborated by the next
//!   `k - 1` status probes of that line (debounce) and the window's
//!   reliability clears the emit threshold.
//! * `LineRecovered` on a recovery event; stays active until acknowledged.
//! * `SensorAnomaly` when a reading lies more than `z` rolling standard
//!   deviations from the previous window of that sensor.
//! * `HighRiskChangeover` for an upcoming committed job whose predicted
//!   failure rate exceeds the risk threshold.
//! * `ScheduleInfeasible` when the committed schedule still has work on a
//!   line that is not Available and no other situation covers it.
//!
//! Each (kind, subject) pair is emitted at most once until its condition
//! clears.

use crate::analytics::AnalyticsState;
use crate::event::{Event, EventPayload, SensorReading};
use crate::ids::{Family, LineId, OrderId, RecipeId, SensorId};
use crate::model::{LineState, Minutes, Schedule};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SituationModel {
    /// Observations in a failure debounce window, the failure event included.
    pub debounce_k: usize,
    pub emit_threshold: f64,
    pub anomaly_z: f64,
    pub anomaly_window: usize,
    pub risk_threshold: f64,
}

impl Default for SituationModel {
    fn default() -> Self {
        Self {
            debounce_k: 3,
            emit_threshold: 0.8,
            anomaly_z: 3.0,
            anomaly_window: 20,
            risk_threshold: 0.25,
        }
    }
}

impl SituationModel {
    pub fn validate(&self) -> Result<(), String> {
        let mut problems = Vec::new();
        if self.debounce_k < 1 {
            problems.push("debounce_k must be >= 1".to_owned());
        }
        if !(0.0..=1.0).contains(&self.emit_threshold) {
            problems.push("emit_threshold must be in [0, 1]".to_owned());
        }
        if self.anomaly_z.is_nan() || self.anomaly_z <= 0.0 {
            problems.push("anomaly_z must be > 0".to_owned());
        }
        if self.anomaly_window < 2 {
            problems.push("anomaly_window must be >= 2".to_owned());
        }
        if !(0.0..=1.0).contains(&self.risk_threshold) {
            problems.push("risk_threshold must be in [0, 1]".to_owned());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems.join("; "))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SituationKind {
    LineUnavailable,
    LineRecovered,
    HighRiskChangeover,
    SensorAnomaly,
    ScheduleInfeasible,
}

impl fmt::Display for SituationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subject {
    Line(LineId),
    Job { order_id: OrderId, line_id: LineId },
    Sensor(SensorId),
    Plant,
}

impl Subject {
    pub fn line(&self) -> Option<&LineId> {
        match self {
            Subject::Line(l) => Some(l),
            Subject::Job { line_id, .. } => Some(line_id),
            Subject::Sensor(_) | Subject::Plant => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Situation {
    pub id: String,
    pub kind: SituationKind,
    pub subject: Subject,
    pub detected_at: Minutes,
    /// Seq of the event that completed the detection.
    pub detected_seq: u64,
    pub evidence: Vec<u64>,
    pub reliability: f64,
    pub requires_reconfiguration: bool,
}

/// One piece of evidence for or against a hypothesized situation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub seq: u64,
    pub consistent: bool,
    pub trust: f64,
}

/// Fraction of consistent observations times their mean source trust; 0 for
/// an empty window.
pub fn check_reliability(window: &[Observation]) -> f64 {
    if window.is_empty() {
        return 0.0;
    }
    let n = window.len() as f64;
    let consistent = window.iter().filter(|o| o.consistent).count() as f64;
    let trust = window.iter().map(|o| o.trust).sum::<f64>() / n;
    consistent / n * trust
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AckError {
    #[error("situation {0} is not active")]
    NotActive(String),
    #[error("situation {0} clears automatically and cannot be acknowledged")]
    NotAcknowledgeable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Committed {
    seq: u64,
    schedule: Schedule,
    /// Family each line had produced when the schedule was committed.
    initial_family: BTreeMap<LineId, Family>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SituationState {
    next_id: u64,
    active: BTreeMap<(SituationKind, Subject), Situation>,
    history: Vec<Situation>,
    hypotheses: BTreeMap<LineId, Vec<Observation>>,
    line_states: BTreeMap<LineId, LineState>,
    last_family: BTreeMap<LineId, Family>,
    orders: BTreeMap<OrderId, (RecipeId, Family)>,
    completed: BTreeSet<OrderId>,
    committed: Option<Committed>,
    sensor_windows: BTreeMap<SensorId, VecDeque<f64>>,
    /// Malformed payloads skipped.
    pub skipped: u64,
    /// Hypotheses that failed the reliability check.
    pub suppressed: u64,
    clock: Minutes,
    last_seq: u64,
}

impl SituationState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Situations whose condition has not cleared, by detection time.
    pub fn active_situations(&self) -> Vec<Situation> {
        let mut v: Vec<Situation> = self.active.values().cloned().collect();
        v.sort_by(|a, b| (a.detected_at, &a.id).cmp(&(b.detected_at, &b.id)));
        v
    }

    /// Every situation ever emitted, in emission order.
    pub fn history(&self) -> &[Situation] {
        &self.history
    }

    pub fn find(&self, id: &str) -> Option<&Situation> {
        self.history.iter().find(|s| s.id == id)
    }

    pub fn is_active(&self, id: &str) -> bool {
        self.active.values().any(|s| s.id == id)
    }

    pub fn line_state(&self, line: &LineId) -> LineState {
        self.line_states.get(line).copied().unwrap_or_default()
    }

    /// Clears an active `LineRecovered` situation.
    pub fn acknowledge(&mut self, id: &str) -> Result<(), AckError> {
        let key = self
            .active
            .iter()
            .find(|(_, s)| s.id == id)
            .map(|(k, _)| k.clone())
            .ok_or_else(|| AckError::NotActive(id.to_owned()))?;
        if key.0 != SituationKind::LineRecovered && key.1 != Subject::Plant {
            return Err(AckError::NotAcknowledgeable(id.to_owned()));
        }
        self.active.remove(&key);
        Ok(())
    }

    /// Records a situation detected outside the rule set (for example an
    /// optimization that found orders with nowhere to run).
    pub fn raise(&mut self, kind: SituationKind, subject: Subject, evidence: Vec<u64>, requires_reconfiguration: bool) -> Option<Situation> {
        let (ts, seq) = (self.clock, self.last_seq);
        let evidence = if evidence.is_empty() { vec![seq] } else { evidence };
        self.emit(kind, subject, ts, seq, evidence, 1.0, requires_reconfiguration, 0.0)
    }

    /// Advances the state by one event and returns newly emitted situations.
    pub fn observe(&mut self, model: &SituationModel, event: &Event, analytics: &AnalyticsState) -> Vec<Situation> {
        let before = self.history.len();
        self.clock = event.ts;
        self.last_seq = event.seq;
        let (ts, seq) = (event.ts, event.seq);

        match &event.payload {
            EventPayload::OrderCreated(o) => {
                self.orders
                    .insert(o.order.id.clone(), (o.order.recipe_id.clone(), o.family.clone()));
            }
            EventPayload::BatchCompleted(b) => {
                self.completed.insert(b.order_id.clone());
                self.last_family.insert(b.line_id.clone(), b.family.clone());
                self.evaluate_risk(model, analytics, ts, seq);
                self.evaluate_infeasible(ts, seq);
            }
            EventPayload::ScheduleExecuted(x) => {
                self.committed = Some(Committed {
                    seq,
                    schedule: x.schedule.clone(),
                    initial_family: self.last_family.clone(),
                });
                self.evaluate_risk(model, analytics, ts, seq);
                self.evaluate_infeasible(ts, seq);
            }
            EventPayload::DeviceFailure(f) => {
                if !valid_trust(f.source_trust) {
                    self.skipped += 1;
                    return Vec::new();
                }
                let line = f.line_id.clone();
                self.line_states.insert(line.clone(), LineState::Failed);
                self.clear(SituationKind::LineRecovered, &Subject::Line(line.clone()));
                if !self
                    .active
                    .contains_key(&(SituationKind::LineUnavailable, Subject::Line(line.clone())))
                {
                    self.hypotheses.insert(
                        line.clone(),
                        vec![Observation {
                            seq,
                            consistent: true,
                            trust: f.source_trust,
                        }],
                    );
                    self.resolve_hypothesis(model, &line, ts, seq);
                }
                self.evaluate_infeasible(ts, seq);
            }
            EventPayload::SensorReading(r) => {
                if !r.value.is_finite() || !valid_trust(r.source_trust) {
                    self.skipped += 1;
                    return Vec::new();
                }
                match &r.line_id {
                    Some(line) => {
                        if let Some(window) = self.hypotheses.get_mut(line) {
                            window.push(Observation {
                                seq,
                                consistent: r.observes_down(),
                                trust: r.source_trust,
                            });
                            let line = line.clone();
                            self.resolve_hypothesis(model, &line, ts, seq);
                            self.evaluate_infeasible(ts, seq);
                        }
                    }
                    None => self.check_anomaly(model, r, ts, seq),
                }
            }
            EventPayload::DeviceRecovered(r) => {
                if !valid_trust(r.source_trust) {
                    self.skipped += 1;
                    return Vec::new();
                }
                let subject = Subject::Line(r.line_id.clone());
                self.line_states.insert(r.line_id.clone(), LineState::Available);
                self.hypotheses.remove(&r.line_id);
                self.clear(SituationKind::LineUnavailable, &subject);
                let window = [Observation {
                    seq,
                    consistent: true,
                    trust: r.source_trust,
                }];
                let rel = check_reliability(&window);
                self.emit(SituationKind::LineRecovered, subject, ts, seq, vec![seq], rel, true, model.emit_threshold);
                self.evaluate_infeasible(ts, seq);
            }
            EventPayload::MaintenanceStart(m) => {
                self.line_states.insert(m.line_id.clone(), LineState::Maintenance);
                self.evaluate_infeasible(ts, seq);
            }
            EventPayload::MaintenanceEnd(m) => {
                self.line_states.insert(m.line_id.clone(), LineState::Available);
                self.evaluate_infeasible(ts, seq);
            }
        }
        self.history[before..].to_vec()
    }

    fn resolve_hypothesis(&mut self, model: &SituationModel, line: &LineId, ts: Minutes, seq: u64) {
        let Some(window) = self.hypotheses.get(line) else {
            return;
        };
        if window.len() < model.debounce_k {
            return;
        }
        let window = self.hypotheses.remove(line).expect("checked above");
        let rel = check_reliability(&window);
        let evidence = window.iter().map(|o| o.seq).collect();
        if self
            .emit(
                SituationKind::LineUnavailable,
                Subject::Line(line.clone()),
                ts,
                seq,
                evidence,
                rel,
                true,
                model.emit_threshold,
            )
            .is_none()
        {
            self.suppressed += 1;
        }
    }

    fn check_anomaly(&mut self, model: &SituationModel, r: &SensorReading, ts: Minutes, seq: u64) {
        let window = self.sensor_windows.entry(r.sensor_id.clone()).or_default();
        let subject = Subject::Sensor(r.sensor_id.clone());
        if window.len() >= model.anomaly_window {
            let n = window.len() as f64;
            let mean = window.iter().sum::<f64>() / n;
            let std = (window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
            let z = if std > 0.0 {
                (r.value - mean) / std
            } else if r.value == mean {
                0.0
            } else {
                f64::INFINITY
            };
            window.push_back(r.value);
            while window.len() > model.anomaly_window {
                window.pop_front();
            }
            if z.abs() > model.anomaly_z {
                let rel = check_reliability(&[Observation {
                    seq,
                    consistent: true,
                    trust: r.source_trust,
                }]);
                self.emit(SituationKind::SensorAnomaly, subject, ts, seq, vec![seq], rel, false, model.emit_threshold);
            } else {
                self.clear(SituationKind::SensorAnomaly, &subject);
            }
        } else {
            window.push_back(r.value);
        }
    }

    fn evaluate_risk(&mut self, model: &SituationModel, analytics: &AnalyticsState, ts: Minutes, seq: u64) {
        let mut risky: Vec<(Subject, u64)> = Vec::new();
        if let Some(c) = &self.committed {
            for (line, jobs) in &c.schedule.jobs {
                let mut prev = c.initial_family.get(line).cloned();
                for job in jobs {
                    let Some((recipe, family)) = self.orders.get(&job.order_id) else {
                        continue;
                    };
                    let upcoming = job.processing_start > ts && !self.completed.contains(&job.order_id);
                    if upcoming
                        && analytics.failure_rate(recipe, line, prev.as_ref()).rate > model.risk_threshold
                    {
                        risky.push((
                            Subject::Job {
                                order_id: job.order_id.clone(),
                                line_id: line.clone(),
                            },
                            c.seq,
                        ));
                    }
                    prev = Some(family.clone());
                }
            }
        }
        let keep: BTreeSet<&Subject> = risky.iter().map(|(s, _)| s).collect();
        let stale: Vec<(SituationKind, Subject)> = self
            .active
            .keys()
            .filter(|(k, s)| *k == SituationKind::HighRiskChangeover && !keep.contains(s))
            .cloned()
            .collect();
        for key in stale {
            self.active.remove(&key);
        }
        for (subject, commit_seq) in risky {
            let mut evidence = vec![commit_seq, seq];
            evidence.dedup();
            self.emit(SituationKind::HighRiskChangeover, subject, ts, seq, evidence, 1.0, true, 0.0);
        }
    }

    fn evaluate_infeasible(&mut self, ts: Minutes, seq: u64) {
        let mut blocked: Vec<(LineId, u64)> = Vec::new();
        if let Some(c) = &self.committed {
            for (line, jobs) in &c.schedule.jobs {
                let down = self.line_state(line) != LineState::Available;
                let covered = self.hypotheses.contains_key(line)
                    || self
                        .active
                        .contains_key(&(SituationKind::LineUnavailable, Subject::Line(line.clone())));
                let has_work = jobs.iter().any(|j| !self.completed.contains(&j.order_id));
                if down && has_work && !covered {
                    blocked.push((line.clone(), c.seq));
                }
            }
        }
        let keep: BTreeSet<Subject> = blocked.iter().map(|(l, _)| Subject::Line(l.clone())).collect();
        let stale: Vec<(SituationKind, Subject)> = self
            .active
            .keys()
            .filter(|(k, s)| *k == SituationKind::ScheduleInfeasible && matches!(s, Subject::Line(_)) && !keep.contains(s))
            .cloned()
            .collect();
        for key in stale {
            self.active.remove(&key);
        }
        for (line, commit_seq) in blocked {
            let mut evidence = vec![commit_seq, seq];
            evidence.sort_unstable();
            evidence.dedup();
            self.emit(SituationKind::ScheduleInfeasible, Subject::Line(line), ts, seq, evidence, 1.0, true, 0.0);
        }
    }

    fn clear(&mut self, kind: SituationKind, subject: &Subject) {
        self.active.remove(&(kind, subject.clone()));
    }

    /// Emits unless the pair is already active or reliability is below
    /// `threshold`.
    #[allow(clippy::too_many_arguments)]
    fn emit(
        &mut self,
        kind: SituationKind,
        subject: Subject,
        ts: Minutes,
        seq: u64,
        evidence: Vec<u64>,
        reliability: f64,
        requires_reconfiguration: bool,
        threshold: f64,
    ) -> Option<Situation> {
        if reliability < threshold {
            return None;
        }
        let key = (kind, subject);
        if self.active.contains_key(&key) {
            return None;
        }
        self.next_id += 1;
        let situation = Situation {
            id: format!("S{:06}", self.next_id),
            kind,
            subject: key.1.clone(),
            detected_at: ts,
            detected_seq: seq,
            evidence,
            reliability,
            requires_reconfiguration,
        };
        self.active.insert(key, situation.clone());
        self.history.push(situation.clone());
        Some(situation)
    }
}

fn valid_trust(t: f64) -> bool {
    (0.0..=1.0).contains(&t)
}
