//! Plant events. On disk each event is one JSON object with fields in the
//! order `seq, ts, kind, payload`.

use crate::ids::{Family, LineId, OrderId, RecipeId, SensorId};
use crate::model::{Minutes, Order, Schedule};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub ts: Minutes,
    #[serde(flatten)]
    pub payload: EventPayload,
}

/// An event before the log has assigned it a sequence number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDraft {
    pub ts: Minutes,
    #[serde(flatten)]
    pub payload: EventPayload,
}

impl EventDraft {
    pub fn new(ts: Minutes, payload: EventPayload) -> Self {
        Self { ts, payload }
    }

    pub fn with_seq(self, seq: u64) -> Event {
        Event {
            seq,
            ts: self.ts,
            payload: self.payload,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventPayload {
    SensorReading(SensorReading),
    BatchCompleted(BatchCompleted),
    DeviceFailure(DeviceFailure),
    DeviceRecovered(DeviceRecovered),
    OrderCreated(OrderCreated),
    MaintenanceStart(Maintenance),
    MaintenanceEnd(Maintenance),
    ScheduleExecuted(ScheduleExecuted),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    SensorReading,
    BatchCompleted,
    DeviceFailure,
    DeviceRecovered,
    OrderCreated,
    MaintenanceStart,
    MaintenanceEnd,
    ScheduleExecuted,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl EventPayload {
    pub fn kind(&self) -> EventKind {
        match self {
            EventPayload::SensorReading(_) => EventKind::SensorReading,
            EventPayload::BatchCompleted(_) => EventKind::BatchCompleted,
            EventPayload::DeviceFailure(_) => EventKind::DeviceFailure,
            EventPayload::DeviceRecovered(_) => EventKind::DeviceRecovered,
            EventPayload::OrderCreated(_) => EventKind::OrderCreated,
            EventPayload::MaintenanceStart(_) => EventKind::MaintenanceStart,
            EventPayload::MaintenanceEnd(_) => EventKind::MaintenanceEnd,
            EventPayload::ScheduleExecuted(_) => EventKind::ScheduleExecuted,
        }
    }

    /// Line the event is about, if any.
    pub fn line(&self) -> Option<&LineId> {
        match self {
            EventPayload::SensorReading(r) => r.line_id.as_ref(),
            EventPayload::BatchCompleted(b) => Some(&b.line_id),
            EventPayload::DeviceFailure(f) => Some(&f.line_id),
            EventPayload::DeviceRecovered(r) => Some(&r.line_id),
            EventPayload::MaintenanceStart(m) | EventPayload::MaintenanceEnd(m) => Some(&m.line_id),
            EventPayload::OrderCreated(_) | EventPayload::ScheduleExecuted(_) => None,
        }
    }
}

/// A sensor value. Readings that carry a `line_id` are line status probes:
/// a value below 0.5 observes the line as down, anything else as running.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub sensor_id: SensorId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_id: Option<LineId>,
    pub value: f64,
    pub source_trust: f64,
}

impl SensorReading {
    pub const DOWN_BELOW: f64 = 0.5;

    pub fn observes_down(&self) -> bool {
        self.value < Self::DOWN_BELOW
    }

    pub fn is_status_probe(&self) -> bool {
        self.line_id.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchCompleted {
    pub order_id: OrderId,
    pub recipe_id: RecipeId,
    pub line_id: LineId,
    pub prev_family: Option<Family>,
    pub family: Family,
    pub start: Minutes,
    pub end: Minutes,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FailureCause {
    /// Sampled from the line hazard.
    Spontaneous,
    /// Requested through the simulator control interface.
    Injected,
    /// Reported by an external system.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceFailure {
    pub line_id: LineId,
    pub device: String,
    pub source_trust: f64,
    pub cause: FailureCause,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRecovered {
    pub line_id: LineId,
    pub source_trust: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderCreated {
    pub order: Order,
    /// Family of the order's recipe, denormalized so the log is self-describing.
    pub family: Family,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Maintenance {
    pub line_id: LineId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleExecuted {
    pub schedule: Schedule,
    /// What produced the schedule, e.g. `baseline` or a proposal id.
    pub source: String,
}
