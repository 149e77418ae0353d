//! Schedule metrics: per-line usage span, utilization and its spread,
//! expected failure cost and tardiness.

use crate::ids::{Family, LineId, OrderId, RecipeId};
use crate::model::{Catalog, Minutes, Order, PlantState, Schedule};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Source of per-batch failure probabilities keyed by
/// (recipe, line, family produced before).
pub trait FailureRates {
    fn rate(&self, recipe: &RecipeId, line: &LineId, prev_family: Option<&Family>) -> f64;
}

/// The same probability for every batch.
#[derive(Debug, Clone, Copy)]
pub struct ConstantRate(pub f64);

impl FailureRates for ConstantRate {
    fn rate(&self, _: &RecipeId, _: &LineId, _: Option<&Family>) -> f64 {
        self.0
    }
}

impl<T: FailureRates + ?Sized> FailureRates for &T {
    fn rate(&self, recipe: &RecipeId, line: &LineId, prev_family: Option<&Family>) -> f64 {
        (**self).rate(recipe, line, prev_family)
    }
}

pub const DEFAULT_REWORK_FACTOR: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("degenerate shift: shift_length is 0")]
    DegenerateShift,
}

/// Everything besides the schedule that the metrics depend on.
pub struct MetricsContext<'a> {
    pub catalog: &'a Catalog,
    pub orders: &'a [Order],
    /// Lines to report, and the family each last produced.
    pub plant: &'a PlantState,
    pub rates: &'a dyn FailureRates,
    pub rework_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_line_usage: BTreeMap<LineId, Minutes>,
    pub total_usage: Minutes,
    pub per_line_utilization: BTreeMap<LineId, f64>,
    pub utilization_stddev: f64,
    pub expected_failure_cost: f64,
    pub total_tardiness: Minutes,
}

/// Aggregates of a single line's job sequence.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LineStats {
    /// Last job end minus shift start, 0 when idle.
    pub usage: Minutes,
    /// Changeover plus processing minutes.
    pub busy: Minutes,
    /// Σ rate × processing minutes × rework factor, summed in job order.
    pub risk: f64,
    pub tardiness: Minutes,
}

/// The four optimization objectives, all minimized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessVector {
    pub total_usage: f64,
    pub utilization_stddev: f64,
    pub expected_failure_cost: f64,
    pub total_tardiness: f64,
}

impl FitnessVector {
    pub fn components(&self) -> [f64; 4] {
        [
            self.total_usage,
            self.utilization_stddev,
            self.expected_failure_cost,
            self.total_tardiness,
        ]
    }
}

impl From<&MetricsReport> for FitnessVector {
    fn from(r: &MetricsReport) -> Self {
        Self {
            total_usage: r.total_usage as f64,
            utilization_stddev: r.utilization_stddev,
            expected_failure_cost: r.expected_failure_cost,
            total_tardiness: r.total_tardiness as f64,
        }
    }
}

/// Totals over lines. Both the schedule-level metrics and the optimizer's
/// fast evaluator reduce through here, so they agree bit for bit as long as
/// lines are visited in id order.
pub fn reduce_lines(stats: &[LineStats], shift_length: Minutes) -> FitnessVector {
    let len = shift_length as f64;
    let mut total_usage = 0;
    let mut cost = 0.0;
    let mut tardiness = 0;
    let mut busy_sum: Minutes = 0;
    for s in stats {
        total_usage += s.usage;
        cost += s.risk;
        tardiness += s.tardiness;
        busy_sum += s.busy;
    }
    // Spread is taken over busy minutes and scaled once, so equal
    // utilizations give exactly zero.
    let stddev = if stats.is_empty() {
        0.0
    } else {
        let n = stats.len() as f64;
        let mean = busy_sum as f64 / n;
        let var = stats
            .iter()
            .map(|s| {
                let d = s.busy as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        var.sqrt() / len
    };
    FitnessVector {
        total_usage: total_usage as f64,
        utilization_stddev: stddev,
        expected_failure_cost: cost,
        total_tardiness: tardiness as f64,
    }
}

/// Lines covered by a report: every Available line plus any line carrying jobs.
pub fn reported_lines<'a>(schedule: &'a Schedule, plant: &'a PlantState) -> Vec<&'a LineId> {
    let mut lines: Vec<&LineId> = plant.available_lines().collect();
    for (line, jobs) in &schedule.jobs {
        if !jobs.is_empty() && !plant.is_available(line) {
            lines.push(line);
        }
    }
    lines.sort();
    lines.dedup();
    lines
}

pub fn compute_metrics(schedule: &Schedule, ctx: &MetricsContext<'_>) -> Result<MetricsReport, MetricsError> {
    if schedule.shift_length == 0 {
        return Err(MetricsError::DegenerateShift);
    }
    let orders: BTreeMap<&OrderId, &Order> = ctx.orders.iter().map(|o| (&o.id, o)).collect();
    let lines = reported_lines(schedule, ctx.plant);
    let mut stats = Vec::with_capacity(lines.len());
    for line in &lines {
        let jobs = schedule.jobs.get(*line).map(Vec::as_slice).unwrap_or(&[]);
        let mut prev: Option<&Family> = ctx.plant.lines.get(*line).and_then(|s| s.last_family.as_ref());
        let mut s = LineStats::default();
        for job in jobs {
            s.busy += job.busy_minutes();
            let order = orders.get(&job.order_id);
            let recipe = order.and_then(|o| ctx.catalog.recipe(&o.recipe_id));
            if let (Some(order), Some(recipe)) = (order, recipe) {
                let p = ctx.rates.rate(&recipe.id, line, prev);
                s.risk += p * job.processing_minutes() as f64 * ctx.rework_factor;
                s.tardiness += (job.end - order.due).max(0);
                prev = Some(&recipe.family);
            }
        }
        s.usage = jobs.last().map_or(0, |j| j.end - schedule.shift_start);
        stats.push(s);
    }
    let totals = reduce_lines(&stats, schedule.shift_length);
    let len = schedule.shift_length as f64;
    Ok(MetricsReport {
        per_line_usage: lines.iter().zip(&stats).map(|(l, s)| ((*l).clone(), s.usage)).collect(),
        total_usage: totals.total_usage as Minutes,
        per_line_utilization: lines
            .iter()
            .zip(&stats)
            .map(|(l, s)| ((*l).clone(), s.busy as f64 / len))
            .collect(),
        utilization_stddev: totals.utilization_stddev,
        expected_failure_cost: totals.expected_failure_cost,
        total_tardiness: totals.total_tardiness as Minutes,
    })
}
