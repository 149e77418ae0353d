//! Paired baseline-versus-optimized plant runs.

use resched_core::analytics::{AnalyticsState, LogicVersion};
use resched_core::baseline::baseline_schedule;
use resched_core::event::{EventDraft, EventPayload, Outcome};
use resched_core::ids::{LineId, OrderId};
use resched_core::metrics::{compute_metrics, MetricsContext, MetricsReport, DEFAULT_REWORK_FACTOR};
use resched_core::model::{Minutes, Schedule, ScheduledJob};
use resched_core::optimizer::{
    decode, optimize_reactive, Chromosome, GaParams, ObjectiveWeights, OptimizeError, PlanningState,
};
use resched_core::rng::{key_hash, DetRng};
use resched_core::scenario::ScenarioConfig;
use resched_core::simulator::Simulator;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("optimization failed: {0}")]
    Optimize(#[from] OptimizeError),
    #[error("simulation failed: {0}")]
    Simulation(String),
    #[error("cannot write artifacts: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot write csv: {0}")]
    Csv(#[from] csv::Error),
}

impl RunError {
    pub fn is_validation(&self) -> bool {
        matches!(self, RunError::Invalid(_))
    }
}

/// Knobs of an experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub ga: GaParams,
    pub weights: ObjectiveWeights,
    /// Shifts of randomly planned production the estimator sees before the
    /// optimizer runs.
    pub warmup_shifts: usize,
    pub rework_factor: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            ga: GaParams {
                population: 96,
                generations: 600,
                stall_limit: 120,
                ..GaParams::default()
            },
            weights: ObjectiveWeights::default(),
            warmup_shifts: 20,
            rework_factor: DEFAULT_REWORK_FACTOR,
        }
    }
}

/// What one arm of the experiment produced on the plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub completed: usize,
    pub failed_batches: usize,
    pub unfinished: Vec<OrderId>,
    pub line_failures: usize,
    pub replans: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub baseline: MetricsReport,
    pub optimized: MetricsReport,
    pub usage_reduction_pct: f64,
    pub stddev_reduction_pct: f64,
    pub generations_run: usize,
    pub baseline_run: ArmSummary,
    pub optimized_run: ArmSummary,
    /// Seconds; left out of the artifacts so they stay byte-identical.
    #[serde(skip)]
    pub wall_time: f64,
}

pub fn reduction_pct(optimized: f64, baseline: f64) -> f64 {
    if baseline > 0.0 {
        100.0 * (1.0 - optimized / baseline)
    } else {
        0.0
    }
}

#[derive(Clone, Copy)]
enum Policy {
    Baseline,
    Optimized,
}

struct Arm {
    realized: Schedule,
    summary: ArmSummary,
    generations_run: usize,
}

/// Runs baseline and optimized plans through the plant with the same
/// failure draws and compares what actually happened.
pub fn run(scenario: &ScenarioConfig, seed: u64, settings: &RunSettings) -> Result<RunReport, RunError> {
    scenario.validate().map_err(RunError::Invalid)?;
    let started = Instant::now();
    let analytics = warm_up(scenario, seed, settings)?;
    let base = simulate(scenario, seed, settings, &analytics, Policy::Baseline)?;
    let opt = simulate(scenario, seed, settings, &analytics, Policy::Optimized)?;

    let plant = scenario.plant_at_start();
    let ctx = MetricsContext {
        catalog: &scenario.catalog(),
        orders: &scenario.orders,
        plant: &plant,
        rates: &analytics,
        rework_factor: settings.rework_factor,
    };
    let metrics = |s: &Schedule| compute_metrics(s, &ctx).map_err(|e| RunError::Invalid(vec![e.to_string()]));
    let baseline = metrics(&base.realized)?;
    let optimized = metrics(&opt.realized)?;
    Ok(RunReport {
        scenario: scenario.name.clone(),
        seed,
        usage_reduction_pct: reduction_pct(optimized.total_usage as f64, baseline.total_usage as f64),
        stddev_reduction_pct: reduction_pct(optimized.utilization_stddev, baseline.utilization_stddev),
        baseline,
        optimized,
        generations_run: opt.generations_run,
        baseline_run: base.summary,
        optimized_run: opt.summary,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

/// Failure-rate estimates learned from earlier shifts planned at random, so
/// the optimizer never sees the true rates.
pub fn warm_up(scenario: &ScenarioConfig, seed: u64, settings: &RunSettings) -> Result<AnalyticsState, RunError> {
    let mut analytics = AnalyticsState::new(LogicVersion::default());
    let mut seq = 0;
    for shift in 0..settings.warmup_shifts {
        let key = key_hash(&["warmup", &seed.to_string(), &shift.to_string()]);
        let cfg = ScenarioConfig {
            rng_seed: key,
            line_hazards: BTreeMap::new(),
            ..scenario.clone()
        };
        let (mut sim, mut drafts) = Simulator::init(cfg).map_err(|e| RunError::Simulation(e.to_string()))?;
        let state = sim.planning_state();
        let plan = random_plan(scenario, &state, &mut DetRng::seed_from(key))?;
        drafts.push(commit(&mut sim, &plan)?);
        drafts.extend(step(&mut sim, horizon(scenario))?);
        for d in drafts {
            seq += 1;
            analytics
                .apply(&d.with_seq(seq))
                .map_err(|e| RunError::Simulation(e.to_string()))?;
        }
    }
    Ok(analytics)
}

fn random_plan(scenario: &ScenarioConfig, state: &PlanningState, rng: &mut DetRng) -> Result<Schedule, RunError> {
    let catalog = scenario.catalog();
    let mut perm: Vec<OrderId> = state.open_orders.iter().map(|o| o.id.clone()).collect();
    rng.shuffle(&mut perm);
    let mut assign = BTreeMap::new();
    for o in &state.open_orders {
        let lines = catalog.eligible_lines(o, &state.plant);
        if lines.is_empty() {
            return Err(RunError::Invalid(vec![format!("order {} has no eligible line", o.id)]));
        }
        assign.insert(o.id.clone(), lines[rng.below(lines.len())].clone());
    }
    let rates = resched_core::metrics::ConstantRate(0.0);
    let inst = state.instance(&catalog, scenario.shift(), &rates, 0.0);
    Ok(decode(&Chromosome { perm, assign }, &inst)?)
}

/// Runs stop here; work not done by then counts as unfinished.
fn horizon(scenario: &ScenarioConfig) -> Minutes {
    scenario.shift_start + 3 * scenario.shift_length
}

fn commit(sim: &mut Simulator, plan: &Schedule) -> Result<EventDraft, RunError> {
    sim.commit_schedule(plan, "experiment")
        .map_err(|e| RunError::Simulation(e.to_string()))
}

fn step(sim: &mut Simulator, until: Minutes) -> Result<Vec<EventDraft>, RunError> {
    sim.step(until).map_err(|e| RunError::Simulation(e.to_string()))
}

/// One arm: plan at shift start, then re-plan the open work with the same
/// policy whenever a line goes down or comes back.
fn simulate(
    scenario: &ScenarioConfig,
    seed: u64,
    settings: &RunSettings,
    analytics: &AnalyticsState,
    policy: Policy,
) -> Result<Arm, RunError> {
    let cfg = ScenarioConfig {
        rng_seed: seed,
        ..scenario.clone()
    };
    let (mut sim, _) = Simulator::init(cfg).map_err(|e| RunError::Simulation(e.to_string()))?;
    let catalog = scenario.catalog();
    let mut summary = ArmSummary {
        completed: 0,
        failed_batches: 0,
        unfinished: Vec::new(),
        line_failures: 0,
        replans: 0,
    };
    let mut generations_run = 0;
    let mut plans = 0u64;
    let mut plan = |sim: &Simulator| -> Result<Option<Schedule>, RunError> {
        let mut state = sim.planning_state();
        // Orders whose every line is down wait for a repair.
        state
            .open_orders
            .retain(|o| !catalog.eligible_lines(o, &state.plant).is_empty());
        if state.open_orders.is_empty() {
            return Ok(None);
        }
        plans += 1;
        let schedule = match policy {
            Policy::Baseline => baseline_schedule(&state.plant, &state.open_orders, &catalog, scenario.shift()).ok(),
            Policy::Optimized => {
                let inst = state.instance(&catalog, scenario.shift(), analytics, settings.rework_factor);
                let ga = GaParams {
                    seed: key_hash(&["optimize", &seed.to_string(), &plans.to_string()]),
                    ..settings.ga
                };
                match optimize_reactive(&inst, &settings.weights, &ga) {
                    Ok(r) => {
                        generations_run += r.generations_run;
                        Some(r.schedule)
                    }
                    Err(OptimizeError::Stranded(_)) => None,
                    Err(e) => return Err(e.into()),
                }
            }
        };
        Ok(schedule)
    };

    if let Some(p) = plan(&sim)? {
        commit(&mut sim, &p)?;
    }
    let mut changeover_of: BTreeMap<OrderId, Minutes> = BTreeMap::new();
    let mut realized: BTreeMap<LineId, Vec<ScheduledJob>> = BTreeMap::new();
    let end = horizon(scenario);
    while sim.clock() < end {
        note_changeovers(&sim, &mut changeover_of);
        let until = (sim.clock() + 1).min(end);
        let events = step(&mut sim, until)?;
        let mut replan = false;
        for d in &events {
            match &d.payload {
                EventPayload::BatchCompleted(b) => {
                    summary.completed += 1;
                    if b.outcome == Outcome::Failed {
                        summary.failed_batches += 1;
                    }
                    let co = changeover_of.get(&b.order_id).copied().unwrap_or(b.start);
                    realized.entry(b.line_id.clone()).or_default().push(ScheduledJob {
                        order_id: b.order_id.clone(),
                        changeover_start: co.min(b.start),
                        processing_start: b.start,
                        end: b.end,
                    });
                }
                EventPayload::DeviceFailure(_) => {
                    summary.line_failures += 1;
                    replan = true;
                }
                EventPayload::DeviceRecovered(_) => replan = true,
                _ => {}
            }
        }
        if replan {
            if let Some(p) = plan(&sim)? {
                summary.replans += 1;
                commit(&mut sim, &p)?;
            }
        }
        if sim.open_orders().is_empty() && sim.in_flight_jobs().is_empty() {
            break;
        }
    }
    let mut unfinished: Vec<OrderId> = scenario
        .orders
        .iter()
        .map(|o| o.id.clone())
        .filter(|id| !sim.completed().contains_key(id))
        .collect();
    unfinished.sort();
    summary.unfinished = unfinished;
    Ok(Arm {
        realized: Schedule {
            shift_start: scenario.shift_start,
            shift_length: scenario.shift_length,
            jobs: realized,
        },
        summary,
        generations_run,
    })
}

fn note_changeovers(sim: &Simulator, out: &mut BTreeMap<OrderId, Minutes>) {
    for (_, job) in sim.committed().iter_jobs() {
        if job.changeover_start >= sim.clock() || !out.contains_key(&job.order_id) {
            out.insert(job.order_id.clone(), job.changeover_start);
        }
    }
}

/// Writes `report.json`, `usage.csv` and `utilization.csv` into `dir`.
pub fn write_artifacts(report: &RunReport, dir: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    write_atomic(&dir.join("report.json"), json.as_bytes())?;

    let mut usage = csv::Writer::from_writer(Vec::new());
    usage.write_record(["line_id", "baseline_usage_min", "optimized_usage_min"])?;
    for line in lines_of(report) {
        let get = |m: &MetricsReport| m.per_line_usage.get(&line).copied().unwrap_or(0).to_string();
        usage.write_record([line.to_string(), get(&report.baseline), get(&report.optimized)])?;
    }
    write_atomic(&dir.join("usage.csv"), &usage.into_inner().map_err(|e| e.into_error())?)?;

    let mut util = csv::Writer::from_writer(Vec::new());
    util.write_record(["line_id", "baseline_utilization", "optimized_utilization"])?;
    for line in lines_of(report) {
        let get = |m: &MetricsReport| format!("{:.6}", m.per_line_utilization.get(&line).copied().unwrap_or(0.0));
        util.write_record([line.to_string(), get(&report.baseline), get(&report.optimized)])?;
    }
    write_atomic(&dir.join("utilization.csv"), &util.into_inner().map_err(|e| e.into_error())?)?;
    Ok(())
}

fn lines_of(report: &RunReport) -> Vec<LineId> {
    let mut v: Vec<LineId> = report
        .baseline
        .per_line_usage
        .keys()
        .chain(report.optimized.per_line_usage.keys())
        .cloned()
        .collect();
    v.sort();
    v.dedup();
    v
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
        Some(Self {
            median,
            min: v[0],
            max: v[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub reports: Vec<RunReport>,
    pub usage_reduction_pct: Spread,
    pub stddev_reduction_pct: Spread,
}

pub fn compare(scenario: &ScenarioConfig, seeds: &[u64], settings: &RunSettings) -> Result<Comparison, RunError> {
    if seeds.is_empty() {
        return Err(RunError::Invalid(vec!["at least one seed is required".into()]));
    }
    let reports = seeds
        .iter()
        .map(|s| run(scenario, *s, settings))
        .collect::<Result<Vec<_>, _>>()?;
    let usage: Vec<f64> = reports.iter().map(|r| r.usage_reduction_pct).collect();
    let stddev: Vec<f64> = reports.iter().map(|r| r.stddev_reduction_pct).collect();
    Ok(Comparison {
        usage_reduction_pct: Spread::of(&usage).expect("non-empty"),
        stddev_reduction_pct: Spread::of(&stddev).expect("non-empty"),
        reports,
    })
}

impl Comparison {
    /// Aligned text table, one row per seed plus the spread rows.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>8} {:>12} {:>12} {:>10} {:>12} {:>12} {:>10}",
            "seed", "base_usage", "opt_usage", "usage_%", "base_stddev", "opt_stddev", "stddev_%"
        );
        for r in &self.reports {
            let _ = writeln!(
                out,
                "{:>8} {:>12} {:>12} {:>10.2} {:>12.4} {:>12.4} {:>10.2}",
                r.seed,
                r.baseline.total_usage,
                r.optimized.total_usage,
                r.usage_reduction_pct,
                r.baseline.utilization_stddev,
                r.optimized.utilization_stddev,
                r.stddev_reduction_pct
            );
        }
        for (name, pick) in [("median", 0), ("min", 1), ("max", 2)] {
            let f = |s: &Spread| [s.median, s.min, s.max][pick];
            let _ = writeln!(
                out,
                "{:>8} {:>12} {:>12} {:>10.2} {:>12} {:>12} {:>10.2}",
                name,
                "",
                "",
                f(&self.usage_reduction_pct),
                "",
                "",
                f(&self.stddev_reduction_pct)
            );
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<(), RunError> {
        std::fs::create_dir_all(dir)?;
        for r in &self.reports {
            write_artifacts(r, &dir.join(format!("seed-{}", r.seed)))?;
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "seed",
            "baseline_usage_min",
            "optimized_usage_min",
            "usage_reduction_pct",
            "baseline_stddev",
            "optimized_stddev",
            "stddev_reduction_pct",
        ])?;
        for r in &self.reports {
            w.write_record([
                r.seed.to_string(),
                r.baseline.total_usage.to_string(),
                r.optimized.total_usage.to_string(),
                format!("{:.4}", r.usage_reduction_pct),
                format!("{:.6}", r.baseline.utilization_stddev),
                format!("{:.6}", r.optimized.utilization_stddev),
                format!("{:.4}", r.stddev_reduction_pct),
            ])?;
        }
        write_atomic(&dir.join("summary.csv"), &w.into_inner().map_err(|e| e.into_error())?)?;
        write_atomic(&dir.join("summary.txt"), self.table().as_bytes())?;
        Ok(())
    }
}
