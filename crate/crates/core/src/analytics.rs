//! Stream processors over the event log: smoothed failure rates keyed by
//! (recipe, line, previous family) with hierarchical backoff, and per-line
//! failure hazards.
//!
//! The state is a pure fold over the event sequence. Incremental [`apply`],
//! full [`replay`] and snapshot-then-resume all produce the same value.
//!
//! [`apply`]: AnalyticsState::apply

use crate::event::{Event, EventPayload, Outcome};
use crate::eventlog::{LogError, LogReader};
use crate::ids::{Family, LineId, RecipeId};
use crate::metrics::FailureRates;
use crate::model::Minutes;
use crate::serde_util::entries;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

/// Beta prior pseudo-counts: prior mean 1 / (1 + 9) = 0.1.
pub const PRIOR_FAILURES: u64 = 1;
pub const PRIOR_SUCCESSES: u64 = 9;
pub const DEFAULT_MIN_TRIALS: u64 = 5;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("out-of-order apply: expected seq {expected}, got {got}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("snapshot from different logic, full replay required (snapshot {found}, running {running})")]
    LogicMismatch { found: LogicVersion, running: LogicVersion },
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("snapshot io: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot format: {0}")]
    Format(#[from] serde_json::Error),
}

/// The processing rules a state was computed under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicVersion {
    pub min_trials: u64,
}

impl Default for LogicVersion {
    fn default() -> Self {
        Self {
            min_trials: DEFAULT_MIN_TRIALS,
        }
    }
}

impl fmt::Display for LogicVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "min_trials={}", self.min_trials)
    }
}

impl FromStr for LogicVersion {
    type Err = String;

    /// Accepts `default` or a comma-separated list of `key=value` overrides.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut v = LogicVersion::default();
        if s.trim().is_empty() || s == "default" {
            return Ok(v);
        }
        for part in s.split(',') {
            let (k, val) = part
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got {part:?}"))?;
            match k.trim() {
                "min_trials" => {
                    v.min_trials = val
                        .trim()
                        .parse()
                        .map_err(|e| format!("min_trials: {e}"))?
                }
                other => return Err(format!("unknown logic parameter {other:?}")),
            }
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub trials: u64,
    pub failures: u64,
}

impl Tally {
    fn record(&mut self, failed: bool) {
        self.trials += 1;
        self.failures += u64::from(failed);
    }

    pub fn smoothed_rate(&self) -> f64 {
        (self.failures + PRIOR_FAILURES) as f64 / (self.trials + PRIOR_FAILURES + PRIOR_SUCCESSES) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BackoffLevel {
    Full,
    RecipeLine,
    Recipe,
    Global,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RateKey {
    pub recipe_id: RecipeId,
    pub line_id: LineId,
    pub prev_family: Option<Family>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRateEstimate {
    pub key: RateKey,
    /// Counts at the level the estimate was taken from.
    pub trials: u64,
    pub failures: u64,
    pub rate: f64,
    pub backoff_level: BackoffLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineHazard {
    pub line_id: LineId,
    pub observed_minutes: Minutes,
    pub failure_events: u64,
    /// Failures per hour.
    pub hazard: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineTally {
    pub observed_minutes: Minutes,
    pub failure_events: u64,
    /// Not accruing exposure while failed or in maintenance.
    pub down: bool,
}

impl LineTally {
    pub fn hazard_per_hour(&self) -> f64 {
        (self.failure_events + 1) as f64 / ((self.observed_minutes + 60) as f64 / 60.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counters {
    #[serde(with = "entries")]
    pub full: BTreeMap<(RecipeId, LineId, Option<Family>), Tally>,
    #[serde(with = "entries")]
    pub recipe_line: BTreeMap<(RecipeId, LineId), Tally>,
    pub recipe: BTreeMap<RecipeId, Tally>,
    pub global: Tally,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyticsState {
    pub logic_version: LogicVersion,
    pub last_applied_seq: u64,
    pub last_ts: Option<Minutes>,
    /// Seq of the last event that changed a failure-rate counter.
    pub rates_seq: u64,
    pub counters: Counters,
    pub hazards: BTreeMap<LineId, LineTally>,
}

impl Default for AnalyticsState {
    fn default() -> Self {
        Self::new(LogicVersion::default())
    }
}

impl AnalyticsState {
    pub fn new(logic_version: LogicVersion) -> Self {
        Self {
            logic_version,
            last_applied_seq: 0,
            last_ts: None,
            rates_seq: 0,
            counters: Counters::default(),
            hazards: BTreeMap::new(),
        }
    }

    pub fn apply(&mut self, event: &Event) -> Result<(), AnalyticsError> {
        let expected = self.last_applied_seq + 1;
        if event.seq != expected {
            return Err(AnalyticsError::OutOfOrder {
                expected,
                got: event.seq,
            });
        }
        if let Some(prev) = self.last_ts {
            let delta = (event.ts - prev).max(0);
            for t in self.hazards.values_mut().filter(|t| !t.down) {
                t.observed_minutes += delta;
            }
        }
        self.last_ts = Some(event.ts);
        if let Some(line) = event.payload.line() {
            self.hazards.entry(line.clone()).or_default();
        }

        match &event.payload {
            EventPayload::BatchCompleted(b) => {
                let failed = b.outcome == Outcome::Failed;
                let c = &mut self.counters;
                c.full
                    .entry((b.recipe_id.clone(), b.line_id.clone(), b.prev_family.clone()))
                    .or_default()
                    .record(failed);
                c.recipe_line
                    .entry((b.recipe_id.clone(), b.line_id.clone()))
                    .or_default()
                    .record(failed);
                c.recipe.entry(b.recipe_id.clone()).or_default().record(failed);
                c.global.record(failed);
                self.rates_seq = event.seq;
            }
            EventPayload::DeviceFailure(f) => {
                let t = self.hazards.entry(f.line_id.clone()).or_default();
                t.failure_events += 1;
                t.down = true;
            }
            EventPayload::DeviceRecovered(r) => {
                self.hazards.entry(r.line_id.clone()).or_default().down = false;
            }
            EventPayload::MaintenanceStart(m) => {
                self.hazards.entry(m.line_id.clone()).or_default().down = true;
            }
            EventPayload::MaintenanceEnd(m) => {
                self.hazards.entry(m.line_id.clone()).or_default().down = false;
            }
            EventPayload::SensorReading(_)
            | EventPayload::OrderCreated(_)
            | EventPayload::ScheduleExecuted(_) => {}
        }
        self.last_applied_seq = event.seq;
        Ok(())
    }

    /// Functional form of [`apply`](Self::apply).
    pub fn applied(mut self, event: &Event) -> Result<Self, AnalyticsError> {
        self.apply(event)?;
        Ok(self)
    }

    /// Walks Full, RecipeLine, Recipe and returns the first level with at
    /// least `min_trials` observations, otherwise the Global level.
    pub fn failure_rate(&self, recipe: &RecipeId, line: &LineId, prev_family: Option<&Family>) -> FailureRateEstimate {
        let min = self.logic_version.min_trials;
        let c = &self.counters;
        let key = RateKey {
            recipe_id: recipe.clone(),
            line_id: line.clone(),
            prev_family: prev_family.cloned(),
        };
        let candidates = [
            (
                BackoffLevel::Full,
                c.full
                    .get(&(recipe.clone(), line.clone(), prev_family.cloned()))
                    .copied(),
            ),
            (
                BackoffLevel::RecipeLine,
                c.recipe_line.get(&(recipe.clone(), line.clone())).copied(),
            ),
            (BackoffLevel::Recipe, c.recipe.get(recipe).copied()),
        ];
        let (level, tally) = candidates
            .into_iter()
            .find_map(|(lvl, t)| t.filter(|t| t.trials >= min).map(|t| (lvl, t)))
            .unwrap_or((BackoffLevel::Global, c.global));
        FailureRateEstimate {
            key,
            trials: tally.trials,
            failures: tally.failures,
            rate: tally.smoothed_rate(),
            backoff_level: level,
        }
    }

    /// Resolved estimates for every observed full key.
    pub fn rate_table(&self) -> Vec<FailureRateEstimate> {
        self.counters
            .full
            .keys()
            .map(|(r, l, f)| self.failure_rate(r, l, f.as_ref()))
            .collect()
    }

    pub fn hazard(&self, line: &LineId) -> LineHazard {
        let t = self.hazards.get(line).copied().unwrap_or_default();
        LineHazard {
            line_id: line.clone(),
            observed_minutes: t.observed_minutes,
            failure_events: t.failure_events,
            hazard: t.hazard_per_hour(),
        }
    }

    pub fn line_hazards(&self) -> Vec<LineHazard> {
        self.hazards.keys().map(|l| self.hazard(l)).collect()
    }

    /// SHA-256 over the derived outputs (counters, hazards and the resolved
    /// rate table). Two states under different logic hash differently only if
    /// the logic change altered some output.
    pub fn state_hash(&self) -> String {
        #[derive(Serialize)]
        struct View<'a> {
            last_applied_seq: u64,
            counters: &'a Counters,
            hazards: Vec<LineHazard>,
            rates: Vec<FailureRateEstimate>,
        }
        let view = View {
            last_applied_seq: self.last_applied_seq,
            counters: &self.counters,
            hazards: self.line_hazards(),
            rates: self.rate_table(),
        };
        let bytes = serde_json::to_vec(&view).expect("analytics view serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn snapshot(&self, path: impl AsRef<Path>) -> Result<(), AnalyticsError> {
        let bytes = serde_json::to_vec_pretty(self)?;
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    /// Loads a snapshot taken under `logic`. Replay can resume at
    /// `last_applied_seq + 1`.
    pub fn restore(path: impl AsRef<Path>, logic: &LogicVersion) -> Result<Self, AnalyticsError> {
        let state: AnalyticsState = serde_json::from_slice(&std::fs::read(path)?)?;
        if &state.logic_version != logic {
            return Err(AnalyticsError::LogicMismatch {
                found: state.logic_version,
                running: logic.clone(),
            });
        }
        Ok(state)
    }

    /// Applies every event after `last_applied_seq`.
    pub fn catch_up(&mut self, log: &LogReader) -> Result<(), AnalyticsError> {
        for e in log.read_from(self.last_applied_seq + 1)? {
            self.apply(&e)?;
        }
        Ok(())
    }
}

impl FailureRates for AnalyticsState {
    fn rate(&self, recipe: &RecipeId, line: &LineId, prev_family: Option<&Family>) -> f64 {
        self.failure_rate(recipe, line, prev_family).rate
    }
}

/// Folds the whole log under `logic`.
pub fn replay(log: &LogReader, logic: LogicVersion) -> Result<AnalyticsState, AnalyticsError> {
    let mut state = AnalyticsState::new(logic);
    state.catch_up(log)?;
    Ok(state)
}

/// Folds an in-memory event sequence.
pub fn fold<'a>(events: impl IntoIterator<Item = &'a Event>, logic: LogicVersion) -> Result<AnalyticsState, AnalyticsError> {
    let mut state = AnalyticsState::new(logic);
    for e in events {
        state.apply(e)?;
    }
    Ok(state)
}
