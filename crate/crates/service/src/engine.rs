//! The service's single owner of plant, analytics, situation and proposal
//! state. Every mutating request passes through [`Engine::handle`] one at a
//! time and leaves exactly one audit record.

use crate::config::ServiceConfig;
use crate::frames::{FrameHub, FrameKind};
use crate::proposal::{proposal_id, Move, Proposal, ProposalStatus};
use crate::store::{wall_millis, AuditOutcome, AuditRecord, JournalEntry, JournalRecord, NdjsonFile};
use resched_core::analytics::{AnalyticsState, FailureRateEstimate, LineHazard, LogicVersion};
use resched_core::baseline::baseline_schedule;
use resched_core::event::{Event, EventDraft, EventPayload};
use resched_core::eventlog::{Durability, EventLog};
use resched_core::ids::{Family, LineId, OrderId, RecipeId};
use resched_core::metrics::{compute_metrics, MetricsContext, MetricsReport};
use resched_core::model::{Catalog, LineState, Minutes, Schedule, ScheduledJob, Shift};
use resched_core::optimizer::{
    decode, fingerprint, fitness_of, optimize_predictive, optimize_reactive, scalar_fitness, Contingency,
    ContingencyCache, GaParams, ObjectiveWeights, OptimizeError, OptimizeResult, PlanningState,
};
use resched_core::scenario::ScenarioConfig;
use resched_core::simulator::{CommitError, SimError, Simulator};
use resched_core::situation::{AckError, Situation, SituationKind, SituationModel, SituationState, Subject};
use resched_core::validate::{validate_schedule, Rule, Violation};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

const EVENTS_FILE: &str = "events.ndjson";
const JOURNAL_FILE: &str = "journal.ndjson";
const AUDIT_FILE: &str = "audit.ndjson";

/// Rounds of auto-executed re-planning one command may cause.
const MAX_TRIGGER_ROUNDS: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Scenario(#[from] resched_core::scenario::ScenarioError),
    #[error(transparent)]
    Log(#[from] resched_core::eventlog::LogError),
    #[error(transparent)]
    Analytics(#[from] resched_core::analytics::AnalyticsError),
    #[error("storage failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("recovery failed: {0}")]
    Recovery(String),
}

/// Error returned to an API caller.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub error: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

impl ApiError {
    pub fn new(status: u16, error: impl Into<String>) -> Self {
        Self {
            status,
            error: error.into(),
            violations: Vec::new(),
            details: Value::Null,
        }
    }

    fn with_violations(mut self, v: Vec<Violation>) -> Self {
        self.violations = v;
        self
    }

    fn with_details(mut self, d: Value) -> Self {
        self.details = d;
        self
    }

    fn outcome(&self) -> AuditOutcome {
        match self.status {
            401 => AuditOutcome::Unauthorized,
            500.. => AuditOutcome::Error,
            _ => AuditOutcome::Rejected,
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        ApiError::new(500, e.to_string())
    }
}

impl From<resched_core::eventlog::LogError> for ApiError {
    fn from(e: resched_core::eventlog::LogError) -> Self {
        EngineError::from(e).into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizeMode {
    #[default]
    Reactive,
    Predictive,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeRequest {
    #[serde(default)]
    pub mode: OptimizeMode,
    #[serde(default)]
    pub weights: Option<ObjectiveWeights>,
    #[serde(default)]
    pub ga: Option<GaParams>,
    /// Predictive only; defaults to the configured k (at least 1).
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Ingest(Vec<EventDraft>),
    Optimize(OptimizeRequest),
    Adjust { id: String, moves: Vec<Move> },
    Execute { id: String },
    Reject { id: String },
    Acknowledge { id: String },
    Advance { until: Minutes },
    InjectFailure { line: LineId, at: Option<Minutes> },
    Recover { line: LineId, at: Option<Minutes> },
}

/// A mutating API call as received.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    /// Bearer token, if the caller sent one.
    pub token: Option<String>,
    /// e.g. `POST /api/events`.
    pub action: String,
    /// Short description of the request body for the audit log.
    pub summary: String,
    /// The parsed body, or why it could not be parsed.
    pub body: Result<Action, String>,
}

impl Request {
    pub fn new(token: Option<&str>, action: impl Into<String>, body: Action) -> Self {
        let summary = summarize(&body);
        Self {
            token: token.map(str::to_owned),
            action: action.into(),
            summary,
            body: Ok(body),
        }
    }
}

fn summarize(a: &Action) -> String {
    match a {
        Action::Ingest(evs) => format!("{} events", evs.len()),
        Action::Optimize(r) => format!("mode={:?}", r.mode).to_lowercase(),
        Action::Adjust { id, moves } => format!("{id}: {} moves", moves.len()),
        Action::Execute { id } | Action::Reject { id } | Action::Acknowledge { id } => id.clone(),
        Action::Advance { until } => format!("until={until}"),
        Action::InjectFailure { line, at } | Action::Recover { line, at } => match at {
            Some(t) => format!("{line} at {t}"),
            None => line.to_string(),
        },
    }
}

/// What a command changed in the plant-facing state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Effects {
    pub seqs: Vec<u64>,
    pub situations: Vec<String>,
    pub proposals: Vec<String>,
}

impl Effects {
    fn merge(&mut self, other: Effects) {
        self.seqs.extend(other.seqs);
        self.situations.extend(other.situations);
        self.proposals.extend(other.proposals);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineView {
    pub line_id: LineId,
    /// State in the plant.
    pub state: LineState,
    /// State as detected from the event stream.
    pub detected_state: LineState,
    pub available_from: Minutes,
    pub last_family: Option<Family>,
    pub hazard: LineHazard,
    pub in_flight: Option<ScheduledJob>,
}

/// Remaining work under the committed plan against the greedy baseline for
/// the same open orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsView {
    pub clock: Minutes,
    pub current: MetricsReport,
    /// Absent when some open order has no Available line.
    pub baseline: Option<MetricsReport>,
    pub usage_reduction_pct: Option<f64>,
    pub stddev_reduction_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyView {
    pub line: LineId,
    pub hazard: f64,
    pub seed: u64,
    pub fingerprint: String,
    pub fresh: bool,
    pub scalar: Option<f64>,
    pub stranded: Vec<OrderId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub clock: Minutes,
    pub head: u64,
    pub analytics_seq: u64,
    pub state_hash: String,
    pub frames: u64,
}

/// Point-in-time copy of everything the read endpoints serve.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub state: StateView,
    pub committed: Schedule,
    pub proposals: BTreeMap<String, Proposal>,
    pub situations: Vec<Situation>,
    pub active: BTreeSet<String>,
    pub analytics: AnalyticsState,
    pub lines: Vec<LineView>,
    pub metrics: MetricsView,
    pub contingencies: Vec<ContingencyView>,
}

/// Inputs for a contingency refresh that can run off the command loop.
pub struct ContingencyJob {
    state: PlanningState,
    catalog: Catalog,
    shift: Shift,
    analytics: AnalyticsState,
    rework: f64,
    weights: ObjectiveWeights,
    params: GaParams,
    k: usize,
}

impl ContingencyJob {
    pub fn run(self) -> Result<BTreeMap<LineId, Contingency>, OptimizeError> {
        optimize_predictive(
            &self.state,
            &self.catalog,
            self.shift,
            &self.analytics,
            self.rework,
            &self.weights,
            &self.params,
            self.k,
        )
    }
}

pub struct Engine {
    config: ServiceConfig,
    scenario: ScenarioConfig,
    model: SituationModel,
    sim: Simulator,
    log: EventLog,
    analytics: AnalyticsState,
    situations: SituationState,
    proposals: BTreeMap<String, Proposal>,
    next_proposal: u64,
    journal: NdjsonFile,
    audit: NdjsonFile,
    audit_seq: u64,
    journaled_clock: Minutes,
    cache: ContingencyCache,
    frames: Arc<FrameHub>,
}

impl Engine {
    /// Opens the data directory, replaying the event log and journal if
    /// they exist and starting the scenario otherwise.
    pub fn open(config: ServiceConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let scenario = ScenarioConfig::load(&config.scenario)?;
        let model = config.situation_model.clone().unwrap_or_else(|| scenario.situation_model.clone());
        std::fs::create_dir_all(&config.data_dir)?;
        let durability = if config.fsync { Durability::Sync } else { Durability::Flush };
        let (log, report) = EventLog::load_with(config.data_dir.join(EVENTS_FILE), durability)?;
        if report.discarded_bytes > 0 {
            tracing::warn!(bytes = report.discarded_bytes, "event log had a torn tail");
        }
        let (journal, records): (NdjsonFile, Vec<JournalRecord>) =
            NdjsonFile::open(config.data_dir.join(JOURNAL_FILE), config.fsync)?;
        let (audit, audits): (NdjsonFile, Vec<AuditRecord>) =
            NdjsonFile::open(config.data_dir.join(AUDIT_FILE), config.fsync)?;

        let fresh = log.head() == 0;
        let (sim, boot) = if fresh {
            let (sim, drafts) = Simulator::init(scenario.clone())?;
            (sim, drafts)
        } else {
            let events = log.read_from(1)?;
            let journal_clock = records
                .iter()
                .filter_map(|r| match r.entry {
                    JournalEntry::Clock { clock } => Some(clock),
                    _ => None,
                })
                .max();
            let clock = [Some(scenario.shift_start), log.last_ts(), journal_clock]
                .into_iter()
                .flatten()
                .max()
                .expect("shift start present");
            (Simulator::rebuild(scenario.clone(), &events, clock)?, Vec::new())
        };
        let mut engine = Self {
            journaled_clock: sim.clock(),
            config,
            scenario,
            model,
            sim,
            log,
            analytics: AnalyticsState::new(LogicVersion::default()),
            situations: SituationState::new(),
            proposals: BTreeMap::new(),
            next_proposal: 1,
            journal,
            audit,
            audit_seq: audits.last().map_or(0, |a| a.seq),
            cache: ContingencyCache::default(),
            frames: Arc::new(FrameHub::default()),
        };
        if fresh {
            engine.log.append_batch(boot)?;
            engine.pump()?;
            if engine.config.commit_baseline_on_start {
                let state = engine.sim.planning_state();
                if let Ok(plan) = baseline_schedule(&state.plant, &state.open_orders, engine.sim.catalog(), engine.shift()) {
                    let draft = engine
                        .sim
                        .commit_schedule(&plan, "baseline")
                        .map_err(|e| EngineError::Recovery(e.to_string()))?;
                    engine.log.append(draft)?;
                    engine.pump()?;
                }
            }
        } else {
            engine.replay(records)?;
        }
        Ok(engine)
    }

    /// Rebuilds analytics, situations and proposals by interleaving the
    /// journal with the event log.
    fn replay(&mut self, records: Vec<JournalRecord>) -> Result<(), EngineError> {
        for r in records {
            if r.after_seq > self.log.head() {
                return Err(EngineError::Recovery(format!(
                    "journal refers to seq {} beyond log head {}",
                    r.after_seq,
                    self.log.head()
                )));
            }
            self.pump_to(r.after_seq)?;
            match r.entry {
                JournalEntry::Proposal { proposal } => {
                    let n: u64 = proposal.id.trim_start_matches('P').parse().unwrap_or(0);
                    self.next_proposal = self.next_proposal.max(n + 1);
                    self.frames.push(FrameKind::Proposal, &*proposal);
                    self.proposals.insert(proposal.id.clone(), *proposal);
                }
                JournalEntry::Acknowledge { situation_id } => {
                    let _ = self.situations.acknowledge(&situation_id);
                }
                JournalEntry::Raise {
                    kind,
                    subject,
                    evidence,
                    requires_reconfiguration,
                } => {
                    if let Some(s) = self.situations.raise(kind, subject, evidence, requires_reconfiguration) {
                        self.frames.push(FrameKind::Situation, &s);
                    }
                }
                JournalEntry::Clock { clock } => self.journaled_clock = clock,
            }
        }
        self.pump()?;
        Ok(())
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn frames(&self) -> Arc<FrameHub> {
        Arc::clone(&self.frames)
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn analytics(&self) -> &AnalyticsState {
        &self.analytics
    }

    pub fn situations(&self) -> &SituationState {
        &self.situations
    }

    pub fn proposals(&self) -> &BTreeMap<String, Proposal> {
        &self.proposals
    }

    pub fn proposal(&self, id: &str) -> Option<&Proposal> {
        self.proposals.get(id)
    }

    pub fn log_head(&self) -> u64 {
        self.log.head()
    }

    pub fn events(&self) -> Vec<Event> {
        self.log.read_from(1).unwrap_or_default()
    }

    fn shift(&self) -> Shift {
        self.scenario.shift()
    }

    /// Serves one mutating request and writes its audit record.
    pub fn handle(&mut self, req: Request) -> Result<Value, ApiError> {
        let principal = req
            .token
            .as_deref()
            .and_then(|t| self.config.principal(t))
            .map(str::to_owned);
        let result = match (&principal, req.body) {
            (None, _) => Err(ApiError::new(401, "missing or unknown bearer token")),
            (Some(_), Err(msg)) => Err(ApiError::new(400, msg)),
            (Some(_), Ok(action)) => self.perform(action),
        };
        let (outcome, detail) = match &result {
            Ok(_) => (AuditOutcome::Ok, None),
            Err(e) => (e.outcome(), Some(e.error.clone())),
        };
        self.audit_seq += 1;
        let record = AuditRecord {
            seq: self.audit_seq,
            ts: wall_millis(),
            sim_clock: self.sim.clock(),
            principal,
            action: req.action,
            request: req.summary,
            outcome,
            detail,
        };
        if let Err(e) = self.audit.append(&record) {
            tracing::error!(error = %e, "audit append failed");
            return Err(ApiError::new(500, format!("audit log unavailable: {e}")));
        }
        self.journal_clock().map_err(ApiError::from)?;
        result
    }

    /// Advances the clock without an API caller; used by the realtime ticker.
    pub fn tick(&mut self, until: Minutes) -> Result<Effects, EngineError> {
        if until <= self.sim.clock() {
            return Ok(Effects::default());
        }
        let drafts = self.sim.step(until).map_err(|e| EngineError::Recovery(e.to_string()))?;
        let fx = self.append_and_react(drafts).map_err(|e| EngineError::Recovery(e.error))?;
        self.journal_clock()?;
        Ok(fx)
    }

    fn perform(&mut self, action: Action) -> Result<Value, ApiError> {
        match action {
            Action::Ingest(drafts) => self.ingest(drafts).map(to_value),
            Action::Optimize(r) => self.optimize(r),
            Action::Adjust { id, moves } => self.adjust(&id, moves),
            Action::Execute { id } => self.execute(&id).map(to_value),
            Action::Reject { id } => self.reject(&id),
            Action::Acknowledge { id } => self.acknowledge(&id),
            Action::Advance { until } => {
                let drafts = self.sim.step(until).map_err(sim_error)?;
                self.append_and_react(drafts).map(to_value)
            }
            Action::InjectFailure { line, at } => {
                let at = at.unwrap_or(self.sim.clock());
                let inj = self.sim.inject_failure(&line, at).map_err(sim_error)?;
                let fx = self.append_and_react(inj.events)?;
                Ok(json!({ "duplicate": inj.duplicate, "seqs": fx.seqs, "situations": fx.situations, "proposals": fx.proposals }))
            }
            Action::Recover { line, at } => {
                let at = at.unwrap_or(self.sim.clock());
                let (events, recovered) = self.sim.recover(&line, at).map_err(sim_error)?;
                let fx = self.append_and_react(events)?;
                Ok(json!({ "recovered": recovered, "seqs": fx.seqs, "situations": fx.situations, "proposals": fx.proposals }))
            }
        }
    }

    fn ingest(&mut self, drafts: Vec<EventDraft>) -> Result<Effects, ApiError> {
        let Some(first) = drafts.first() else {
            return Ok(Effects::default());
        };
        let floor = self.sim.clock().max(self.log.last_ts().unwrap_or(Minutes::MIN));
        if first.ts < floor || drafts.windows(2).any(|w| w[1].ts < w[0].ts) {
            return Err(ApiError::new(422, "timestamp regression: batch rejected").with_details(json!({ "not_before": floor })));
        }
        let mut problems = Vec::new();
        let mut new_orders = BTreeSet::new();
        for (i, d) in drafts.iter().enumerate() {
            match &d.payload {
                EventPayload::ScheduleExecuted(_) => {
                    problems.push(format!("event {i}: schedules are executed through proposals"))
                }
                EventPayload::OrderCreated(o) => {
                    let known = self.sim.orders().any(|x| x.id == o.order.id) || !new_orders.insert(o.order.id.clone());
                    match self.sim.catalog().recipe(&o.order.recipe_id) {
                        _ if known => problems.push(format!("event {i}: order {} already exists", o.order.id)),
                        None => problems.push(format!("event {i}: unknown recipe {}", o.order.recipe_id)),
                        Some(r) if r.family != o.family => {
                            problems.push(format!("event {i}: family {} does not match recipe", o.family))
                        }
                        Some(_) => {}
                    }
                }
                _ => {}
            }
        }
        if !problems.is_empty() {
            return Err(ApiError::new(422, "batch rejected").with_details(json!(problems)));
        }
        let lead = self.sim.step(first.ts).map_err(sim_error)?;
        let mut fx = self.append_and_pump(lead)?;
        let seqs = self.log.append_batch(drafts)?;
        for e in self.log.read_from(seqs[0])? {
            self.sim.absorb(&e);
        }
        fx.seqs.extend(seqs);
        fx.situations.extend(self.pump()?.into_iter().map(|s| s.id));
        let raised: Vec<Situation> = fx
            .situations
            .iter()
            .filter_map(|id| self.situations.find(id).cloned())
            .collect();
        let more = self.react(raised)?;
        fx.merge(more);
        Ok(fx)
    }

    fn append_and_pump(&mut self, drafts: Vec<EventDraft>) -> Result<Effects, ApiError> {
        if drafts.is_empty() {
            return Ok(Effects::default());
        }
        let seqs = self.log.append_batch(drafts)?;
        let raised = self.pump()?;
        Ok(Effects {
            seqs,
            situations: raised.into_iter().map(|s| s.id).collect(),
            proposals: Vec::new(),
        })
    }

    fn append_and_react(&mut self, drafts: Vec<EventDraft>) -> Result<Effects, ApiError> {
        let mut fx = self.append_and_pump(drafts)?;
        let raised: Vec<Situation> = fx
            .situations
            .iter()
            .filter_map(|id| self.situations.find(id).cloned())
            .collect();
        let more = self.react(raised)?;
        fx.merge(more);
        Ok(fx)
    }

    /// Feeds unseen events to analytics and the situation engine.
    fn pump(&mut self) -> Result<Vec<Situation>, EngineError> {
        self.pump_to(self.log.head())
    }

    fn pump_to(&mut self, seq: u64) -> Result<Vec<Situation>, EngineError> {
        let from = self.analytics.last_applied_seq + 1;
        if seq < from {
            return Ok(Vec::new());
        }
        let mut raised = Vec::new();
        for e in self.log.read_from(from)?.into_iter().take((seq + 1 - from) as usize) {
            self.analytics.apply(&e)?;
            for s in self.situations.observe(&self.model, &e, &self.analytics) {
                self.frames.push(FrameKind::Situation, &s);
                raised.push(s);
            }
            if let EventPayload::ScheduleExecuted(x) = &e.payload {
                self.frames.push(FrameKind::Schedule, json!({ "seq": e.seq, "source": x.source }));
            }
        }
        Ok(raised)
    }

    fn journal(&mut self, entry: JournalEntry) -> Result<(), EngineError> {
        self.journal.append(&JournalRecord {
            after_seq: self.log.head(),
            entry,
        })?;
        Ok(())
    }

    fn journal_clock(&mut self) -> Result<(), EngineError> {
        let clock = self.sim.clock();
        if clock != self.journaled_clock {
            self.journal(JournalEntry::Clock { clock })?;
            self.journaled_clock = clock;
        }
        Ok(())
    }

    fn store_proposal(&mut self, p: Proposal) -> Result<(), EngineError> {
        self.journal(JournalEntry::Proposal {
            proposal: Box::new(p.clone()),
        })?;
        self.frames.push(FrameKind::Proposal, &p);
        self.proposals.insert(p.id.clone(), p);
        Ok(())
    }

    fn raise(&mut self, kind: SituationKind, subject: Subject, evidence: Vec<u64>) -> Result<Option<Situation>, EngineError> {
        let s = self.situations.raise(kind, subject.clone(), evidence.clone(), false);
        if let Some(s) = &s {
            self.journal(JournalEntry::Raise {
                kind,
                subject,
                evidence,
                requires_reconfiguration: false,
            })?;
            self.frames.push(FrameKind::Situation, s);
        }
        Ok(s)
    }

    /// Turns situations that call for re-planning into proposals, one per
    /// situation, and executes the newest when configured to.
    fn react(&mut self, raised: Vec<Situation>) -> Result<Effects, ApiError> {
        let mut fx = Effects::default();
        let mut queue = raised;
        for _ in 0..MAX_TRIGGER_ROUNDS {
            let mut memo: Option<(String, Result<OptimizeResult, Vec<OrderId>>)> = None;
            let mut newest = None;
            for s in queue.iter().filter(|s| s.requires_reconfiguration) {
                match self.propose_for(s, &mut memo)? {
                    Ok(id) => {
                        fx.proposals.push(id.clone());
                        newest = Some(id);
                    }
                    Err(stranded) => {
                        let ids: Vec<&str> = stranded.iter().map(OrderId::as_str).collect();
                        tracing::warn!(situation = %s.id, orders = ?ids, "re-planning strands orders");
                        if let Some(x) = self.raise(SituationKind::ScheduleInfeasible, Subject::Plant, vec![s.detected_seq])? {
                            fx.situations.push(x.id);
                        }
                    }
                }
            }
            queue = Vec::new();
            if let (true, Some(id)) = (self.config.auto_execute, newest) {
                match self.execute(&id) {
                    Ok(more) => {
                        fx.seqs.extend(&more.seqs);
                        fx.situations.extend(more.situations.iter().cloned());
                        queue = more
                            .situations
                            .iter()
                            .filter_map(|sid| self.situations.find(sid).cloned())
                            .collect();
                    }
                    Err(e) => tracing::warn!(proposal = %id, error = %e.error, "auto-execute failed"),
                }
            }
            if queue.is_empty() {
                break;
            }
        }
        Ok(fx)
    }

    /// Creates the proposal answering `s`. `Err` carries stranded orders.
    fn propose_for(
        &mut self,
        s: &Situation,
        memo: &mut Option<(String, Result<OptimizeResult, Vec<OrderId>>)>,
    ) -> Result<Result<String, Vec<OrderId>>, ApiError> {
        let state = self.sim.planning_state();
        let (weights, params) = (self.config.weights, self.config.ga);
        let catalog = self.sim.catalog().clone();
        if let (SituationKind::LineUnavailable, Subject::Line(line)) = (s.kind, &s.subject) {
            if let Some(r) = self.cache.lookup(
                line,
                &state,
                &catalog,
                self.shift(),
                &self.analytics,
                self.config.rework_factor,
                &weights,
                &params,
            ) {
                let trigger = format!("predictive:{line}");
                return Ok(Ok(self.new_proposal(trigger, Some(s.id.clone()), r, state)?));
            }
        }
        let fp = fingerprint(&state, self.analytics.rates_seq, &weights, &params);
        let result = match memo {
            Some((f, r)) if *f == fp => r.clone(),
            _ => {
                let inst = state.instance(&catalog, self.shift(), &self.analytics, self.config.rework_factor);
                let r = match optimize_reactive(&inst, &weights, &params) {
                    Ok(r) => Ok(r),
                    Err(OptimizeError::Stranded(x)) => Err(x.0),
                    Err(e) => return Err(ApiError::new(500, format!("optimization failed: {e}"))),
                };
                *memo = Some((fp, r.clone()));
                r
            }
        };
        match result {
            Ok(r) => Ok(Ok(self.new_proposal(s.id.clone(), Some(s.id.clone()), r, state)?)),
            Err(stranded) => Ok(Err(stranded)),
        }
    }

    fn new_proposal(
        &mut self,
        trigger: String,
        situation_id: Option<String>,
        r: OptimizeResult,
        basis: PlanningState,
    ) -> Result<String, EngineError> {
        let manual = situation_id.is_none();
        let superseded: Vec<String> = self
            .proposals
            .values()
            .filter(|p| p.status == ProposalStatus::Pending && p.is_manual() == manual)
            .map(|p| p.id.clone())
            .collect();
        for id in superseded {
            let mut p = self.proposals[&id].clone();
            p.status = ProposalStatus::Superseded;
            self.store_proposal(p)?;
        }
        let id = proposal_id(self.next_proposal);
        self.next_proposal += 1;
        let p = Proposal {
            id: id.clone(),
            trigger,
            situation_id,
            status: ProposalStatus::Pending,
            created_at: self.sim.clock(),
            created_seq: self.log.head(),
            schedule: r.schedule,
            chromosome: r.chromosome,
            fitness: r.fitness,
            original_fitness: r.fitness,
            baseline_fitness: r.baseline_fitness,
            scalar: r.scalar,
            baseline_scalar: r.baseline_scalar,
            generations_run: r.generations_run,
            adjustments: Vec::new(),
            pinned: BTreeSet::new(),
            basis,
            executed_seq: None,
        };
        self.store_proposal(p)?;
        Ok(id)
    }

    fn optimize(&mut self, r: OptimizeRequest) -> Result<Value, ApiError> {
        let weights = r.weights.unwrap_or(self.config.weights);
        let params = r.ga.unwrap_or(self.config.ga);
        weights.validate().map_err(|e| ApiError::new(422, e))?;
        params.validate().map_err(|e| ApiError::new(422, e))?;
        let state = self.sim.planning_state();
        let catalog = self.sim.catalog().clone();
        match r.mode {
            OptimizeMode::Reactive => {
                let inst = state.instance(&catalog, self.shift(), &self.analytics, self.config.rework_factor);
                let result = optimize_reactive(&inst, &weights, &params).map_err(|e| match e {
                    OptimizeError::Stranded(s) => {
                        ApiError::new(422, "orders cannot be placed on any Available line").with_details(json!({ "stranded": s.0 }))
                    }
                    e => ApiError::new(422, e.to_string()),
                })?;
                let id = self.new_proposal("manual".into(), None, result, state)?;
                Ok(to_value(&self.proposals[&id]))
            }
            OptimizeMode::Predictive => {
                let k = r.k.unwrap_or(self.config.predictive_k).max(1);
                let entries = optimize_predictive(
                    &state,
                    &catalog,
                    self.shift(),
                    &self.analytics,
                    self.config.rework_factor,
                    &weights,
                    &params,
                    k,
                )
                .map_err(|e| ApiError::new(422, e.to_string()))?;
                self.cache.replace(entries);
                Ok(to_value(self.contingency_views()))
            }
        }
    }

    fn adjust(&mut self, id: &str, moves: Vec<Move>) -> Result<Value, ApiError> {
        let p = self.proposals.get(id).ok_or_else(|| ApiError::new(404, format!("no proposal {id}")))?;
        if !p.status.is_open() {
            return Err(ApiError::new(409, format!("proposal is {}", p.status)));
        }
        let catalog = self.sim.catalog();
        let mut ch = p.chromosome.clone();
        let mut pinned = p.pinned.clone();
        let mut violations = Vec::new();
        let violation = |rule: Rule, line: Option<&LineId>, order: &OrderId, message: String| Violation {
            rule,
            line: line.cloned(),
            order: Some(order.clone()),
            message,
        };
        for m in &moves {
            let order = m.order();
            if !ch.assign.contains_key(order) {
                let (rule, msg) = if p.basis.in_flight.values().any(|o| &o.id == order) {
                    (Rule::UnknownReference, format!("{order} is an in-flight job and cannot be moved"))
                } else {
                    (Rule::UnknownReference, format!("{order} is not part of this proposal"))
                };
                violations.push(violation(rule, None, order, msg));
                continue;
            }
            match m {
                Move::Pin { pin, .. } => {
                    if *pin {
                        pinned.insert(order.clone());
                    } else {
                        pinned.remove(order);
                    }
                }
                Move::Place { line, position, .. } => {
                    if pinned.contains(order) {
                        violations.push(violation(Rule::UnknownReference, Some(line), order, format!("{order} is pinned")));
                        continue;
                    }
                    let o = p.basis.open_orders.iter().find(|o| &o.id == order).expect("chromosome orders are open");
                    if !catalog.recipe(&o.recipe_id).is_some_and(|r| r.is_compatible(line)) {
                        violations.push(violation(
                            Rule::IncompatibleLine,
                            Some(line),
                            order,
                            format!("recipe {} cannot run on {line}", o.recipe_id),
                        ));
                        continue;
                    }
                    if !p.basis.plant.is_available(line) {
                        violations.push(violation(Rule::LineNotAvailable, Some(line), order, format!("{line} is not Available")));
                        continue;
                    }
                    ch = ch.moved(order, line, *position);
                }
            }
        }
        if !violations.is_empty() {
            return Err(ApiError::new(422, "adjustment rejected").with_violations(violations));
        }
        let shift = self.shift();
        let inst = p.basis.instance(catalog, shift, &self.analytics, self.config.rework_factor);
        let schedule = decode(&ch, &inst).map_err(|e| ApiError::new(422, e.to_string()))?;
        let v = validate_schedule(&schedule, &p.basis.plant, &p.basis.open_orders, catalog);
        if !v.is_empty() {
            return Err(ApiError::new(422, "adjustment rejected").with_violations(v));
        }
        let fitness = fitness_of(&schedule, &inst).map_err(|e| ApiError::new(422, e.to_string()))?;
        let mut p = p.clone();
        p.scalar = scalar_fitness(&fitness, &self.config.weights, &p.baseline_fitness);
        p.schedule = schedule;
        p.chromosome = ch;
        p.fitness = fitness;
        p.adjustments.extend(moves);
        p.pinned = pinned;
        p.status = ProposalStatus::Adjusted;
        let delta: Vec<f64> = fitness
            .components()
            .iter()
            .zip(p.original_fitness.components())
            .map(|(a, b)| a - b)
            .collect();
        self.store_proposal(p.clone())?;
        Ok(json!({
            "proposal": p,
            "original_fitness": p.original_fitness,
            "fitness": p.fitness,
            "delta": {
                "total_usage": delta[0],
                "utilization_stddev": delta[1],
                "expected_failure_cost": delta[2],
                "total_tardiness": delta[3],
            },
        }))
    }

    fn execute(&mut self, id: &str) -> Result<Effects, ApiError> {
        let p = self.proposals.get(id).ok_or_else(|| ApiError::new(404, format!("no proposal {id}")))?;
        match p.status {
            ProposalStatus::Executed => return Err(ApiError::new(409, "already executed")),
            s if !s.is_open() => return Err(ApiError::new(409, format!("proposal is {s}"))),
            _ => {}
        }
        if let Some(sid) = &p.situation_id {
            if let Some(other) = self
                .proposals
                .values()
                .find(|q| q.status == ProposalStatus::Executed && q.situation_id.as_ref() == Some(sid))
            {
                return Err(ApiError::new(409, format!("{} already executed for trigger {sid}", other.id)));
            }
        }
        let schedule = p.schedule.clone();
        let draft = self.sim.commit_schedule(&schedule, id).map_err(|e| {
            let violations = match &e {
                CommitError::Invalid(v) => v.clone(),
                _ => Vec::new(),
            };
            ApiError::new(409, "stale proposal")
                .with_violations(violations)
                .with_details(json!({ "reason": e.to_string(), "hint": "POST /api/optimize for a fresh plan" }))
        })?;
        let mut fx = self.append_and_pump(vec![draft])?;
        let mut p = self.proposals[id].clone();
        p.status = ProposalStatus::Executed;
        p.executed_seq = fx.seqs.first().copied();
        self.store_proposal(p)?;
        fx.proposals.push(id.to_owned());
        Ok(fx)
    }

    fn reject(&mut self, id: &str) -> Result<Value, ApiError> {
        let p = self.proposals.get(id).ok_or_else(|| ApiError::new(404, format!("no proposal {id}")))?;
        if !p.status.is_open() {
            return Err(ApiError::new(409, format!("proposal is {}", p.status)));
        }
        let mut p = p.clone();
        p.status = ProposalStatus::Rejected;
        self.store_proposal(p.clone())?;
        Ok(to_value(&p))
    }

    fn acknowledge(&mut self, id: &str) -> Result<Value, ApiError> {
        self.situations.acknowledge(id).map_err(|e| match e {
            AckError::NotActive(_) => ApiError::new(404, e.to_string()),
            AckError::NotAcknowledgeable(_) => ApiError::new(409, e.to_string()),
        })?;
        self.journal(JournalEntry::Acknowledge {
            situation_id: id.to_owned(),
        })?;
        Ok(json!({ "acknowledged": id }))
    }

    /// Contingency refresh inputs when the cache does not match the current
    /// state for the `k` riskiest lines.
    pub fn contingency_job(&self) -> Option<ContingencyJob> {
        let k = self.config.predictive_k;
        if k == 0 {
            return None;
        }
        let state = self.sim.planning_state();
        if self.cache_is_fresh(&state, k) {
            return None;
        }
        Some(ContingencyJob {
            state,
            catalog: self.sim.catalog().clone(),
            shift: self.shift(),
            analytics: self.analytics.clone(),
            rework: self.config.rework_factor,
            weights: self.config.weights,
            params: self.config.ga,
            k,
        })
    }

    fn top_lines(&self, state: &PlanningState, k: usize) -> Vec<LineId> {
        let mut ranked: Vec<(f64, &LineId)> = state
            .plant
            .available_lines()
            .map(|l| (self.analytics.hazard(l).hazard, l))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        ranked.into_iter().take(k).map(|(_, l)| l.clone()).collect()
    }

    fn expected_fingerprint(&self, state: &PlanningState, line: &LineId) -> String {
        fingerprint(
            &state.with_line_failed(line),
            self.analytics.rates_seq,
            &self.config.weights,
            &self.config.ga,
        )
    }

    fn cache_is_fresh(&self, state: &PlanningState, k: usize) -> bool {
        self.top_lines(state, k).iter().all(|l| {
            self.cache
                .entries
                .get(l)
                .is_some_and(|c| c.fingerprint == self.expected_fingerprint(state, l))
        })
    }

    /// Installs contingencies computed elsewhere. Entries that no longer
    /// match the state are harmless: lookups check fingerprints.
    pub fn install_contingencies(&mut self, entries: BTreeMap<LineId, Contingency>) {
        self.cache.replace(entries);
    }

    /// Computes contingencies on the spot.
    pub fn refresh_contingencies(&mut self) -> Result<(), OptimizeError> {
        if let Some(job) = self.contingency_job() {
            let entries = job.run()?;
            self.install_contingencies(entries);
        }
        Ok(())
    }

    fn contingency_views(&self) -> Vec<ContingencyView> {
        let state = self.sim.planning_state();
        self.cache
            .entries
            .values()
            .map(|c| ContingencyView {
                line: c.line.clone(),
                hazard: c.hazard,
                seed: c.seed,
                fresh: c.fingerprint == self.expected_fingerprint(&state, &c.line),
                fingerprint: c.fingerprint.clone(),
                scalar: c.result.as_ref().map(|r| r.scalar),
                stranded: c.stranded.clone(),
            })
            .collect()
    }

    pub fn state_view(&self) -> StateView {
        StateView {
            clock: self.sim.clock(),
            head: self.log.head(),
            analytics_seq: self.analytics.last_applied_seq,
            state_hash: self.analytics.state_hash(),
            frames: self.frames.len(),
        }
    }

    pub fn lines(&self) -> Vec<LineView> {
        let plant = self.sim.plant_snapshot();
        let running = self.sim.in_flight_jobs();
        plant
            .lines
            .into_iter()
            .map(|(id, st)| LineView {
                state: st.state,
                detected_state: self.situations.line_state(&id),
                available_from: st.available_from,
                last_family: st.last_family,
                hazard: self.analytics.hazard(&id),
                in_flight: running.get(&id).cloned(),
                line_id: id,
            })
            .collect()
    }

    pub fn metrics(&self) -> MetricsView {
        let state = self.sim.planning_state();
        let open: BTreeSet<&OrderId> = state.open_orders.iter().map(|o| &o.id).collect();
        let mut current = Schedule::empty(self.shift());
        for (line, jobs) in &self.sim.committed().jobs {
            let keep: Vec<ScheduledJob> = jobs.iter().filter(|j| open.contains(&j.order_id)).cloned().collect();
            if !keep.is_empty() {
                current.jobs.insert(line.clone(), keep);
            }
        }
        let ctx = MetricsContext {
            catalog: self.sim.catalog(),
            orders: &state.open_orders,
            plant: &state.plant,
            rates: &self.analytics,
            rework_factor: self.config.rework_factor,
        };
        let current = compute_metrics(&current, &ctx).expect("scenario shift is non-degenerate");
        let baseline = baseline_schedule(&state.plant, &state.open_orders, self.sim.catalog(), self.shift())
            .ok()
            .map(|b| compute_metrics(&b, &ctx).expect("scenario shift is non-degenerate"));
        let pct = |a: f64, b: f64| (b > 0.0).then(|| 100.0 * (1.0 - a / b));
        MetricsView {
            clock: self.sim.clock(),
            usage_reduction_pct: baseline
                .as_ref()
                .and_then(|b| pct(current.total_usage as f64, b.total_usage as f64)),
            stddev_reduction_pct: baseline
                .as_ref()
                .and_then(|b| pct(current.utilization_stddev, b.utilization_stddev)),
            current,
            baseline,
        }
    }

    pub fn failure_rate(&self, recipe: &RecipeId, line: &LineId, prev: Option<&Family>) -> FailureRateEstimate {
        self.analytics.failure_rate(recipe, line, prev)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            state: self.state_view(),
            committed: self.sim.committed().clone(),
            proposals: self.proposals.clone(),
            situations: self.situations.history().to_vec(),
            active: self.situations.active_situations().into_iter().map(|s| s.id).collect(),
            analytics: self.analytics.clone(),
            lines: self.lines(),
            metrics: self.metrics(),
            contingencies: self.contingency_views(),
        }
    }
}

fn to_value(x: impl Serialize) -> Value {
    serde_json::to_value(x).expect("response serializes")
}

fn sim_error(e: SimError) -> ApiError {
    match e {
        SimError::UnknownLine(_) => ApiError::new(404, e.to_string()),
        _ => ApiError::new(422, e.to_string()),
    }
}
