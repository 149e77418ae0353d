//! Offline recomputation of analytics and situations from an event log.

use resched_core::analytics::{AnalyticsState, LogicVersion};
use resched_core::eventlog::{EventLog, LogError};
use resched_core::situation::{Situation, SituationModel, SituationState};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("no event log at {0}")]
    Missing(String),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Analytics(#[from] resched_core::analytics::AnalyticsError),
}

pub struct ReplaySummary {
    pub events: u64,
    pub analytics: AnalyticsState,
    pub situations: Vec<Situation>,
}

impl ReplaySummary {
    pub fn state_hash(&self) -> String {
        self.analytics.state_hash()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "events: {}", self.events);
        let _ = writeln!(out, "logic: {}", self.analytics.logic_version);
        let _ = writeln!(out, "\nfailure rates:");
        let _ = writeln!(
            out,
            "{:<10} {:<8} {:<8} {:>7} {:>9} {:>8}  level",
            "recipe", "line", "prev", "trials", "failures", "rate"
        );
        for r in self.analytics.rate_table() {
            let prev = r.key.prev_family.as_ref().map_or("-".to_owned(), ToString::to_string);
            let _ = writeln!(
                out,
                "{:<10} {:<8} {:<8} {:>7} {:>9} {:>8.4}  {:?}",
                r.key.recipe_id.to_string(),
                r.key.line_id.to_string(),
                prev,
                r.trials,
                r.failures,
                r.rate,
                r.backoff_level
            );
        }
        let _ = writeln!(out, "\nline hazards (per hour):");
        for h in self.analytics.line_hazards() {
            let _ = writeln!(
                out,
                "{:<8} observed={}min failures={} hazard={:.5}",
                h.line_id.to_string(),
                h.observed_minutes,
                h.failure_events,
                h.hazard
            );
        }
        let _ = writeln!(out, "\nsituations:");
        for s in &self.situations {
            let _ = writeln!(
                out,
                "{} seq={} t={} {} {} reliability={:.3}",
                s.id,
                s.detected_seq,
                s.detected_at,
                s.kind,
                serde_json::to_string(&s.subject).expect("subject serializes"),
                s.reliability
            );
        }
        let _ = writeln!(out, "\nstate_hash={}", self.state_hash());
        out
    }
}

/// Folds the whole log through a fresh estimator and situation engine.
pub fn replay(path: &Path, logic: LogicVersion, model: &SituationModel) -> Result<ReplaySummary, ReplayError> {
    if !path.is_file() {
        return Err(ReplayError::Missing(path.display().to_string()));
    }
    let (log, _) = EventLog::load(path)?;
    let mut analytics = AnalyticsState::new(logic);
    let mut situations = SituationState::new();
    let events = log.read_from(1)?;
    for e in &events {
        analytics.apply(e)?;
        situations.observe(model, e, &analytics);
    }
    Ok(ReplaySummary {
        events: events.len() as u64,
        analytics,
        situations: situations.history().to_vec(),
    })
}
