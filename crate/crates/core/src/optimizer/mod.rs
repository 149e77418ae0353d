//! Multi-criteria schedule optimization: a genetic algorithm over
//! (permutation, assignment) chromosomes, an exhaustive oracle for small
//! instances, and predictive contingency plans.

mod brute;
mod ga;
mod predictive;
mod problem;

pub use brute::{brute_force_optimum, ORACLE_MAX_LINES, ORACLE_MAX_ORDERS};
pub use ga::optimize_reactive;
pub use predictive::{
    contingency_seed, fingerprint, optimize_predictive, Contingency, ContingencyCache, PlanningState,
};

use crate::baseline::StrandedOrders;
use crate::ids::{LineId, OrderId};
use crate::metrics::{FailureRates, FitnessVector};
use crate::model::{Catalog, Order, PlantState, Schedule, Shift};
use problem::Problem;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OptimizeError {
    #[error(transparent)]
    Stranded(#[from] StrandedOrders),
    #[error("instance too large for oracle")]
    TooLarge,
    #[error("degenerate shift: shift_length is 0")]
    DegenerateShift,
    #[error("an order id appears twice")]
    DuplicateOrder,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("chromosome does not match the instance")]
    BadChromosome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub w_usage: f64,
    pub w_balance: f64,
    pub w_risk: f64,
    pub w_tardiness: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            w_usage: 0.5,
            w_balance: 0.2,
            w_risk: 0.2,
            w_tardiness: 0.1,
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<(), String> {
        let w = [self.w_usage, self.w_balance, self.w_risk, self.w_tardiness];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err("weights must be finite and non-negative".into());
        }
        if w.iter().sum::<f64>() <= 0.0 {
            return Err("weights must not all be zero".into());
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            w_usage: self.w_usage * c,
            w_balance: self.w_balance * c,
            w_risk: self.w_risk * c,
            w_tardiness: self.w_tardiness * c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaParams {
    pub population: usize,
    pub generations: usize,
    pub stall_limit: usize,
    pub tournament_size: usize,
    pub crossover_rate: f64,
    pub swap_mutation_rate: f64,
    pub reassign_mutation_rate: f64,
    pub elites: usize,
    pub seed: u64,
}

impl Default for GaParams {
    fn default() -> Self {
        Self {
            population: 64,
            generations: 200,
            stall_limit: 40,
            tournament_size: 3,
            crossover_rate: 0.9,
            swap_mutation_rate: 0.1,
            reassign_mutation_rate: 0.1,
            elites: 2,
            seed: 0,
        }
    }
}

impl GaParams {
    pub fn validate(&self) -> Result<(), String> {
        let mut v = Vec::new();
        if self.population < 2 {
            v.push("population must be >= 2");
        }
        if self.elites >= self.population {
            v.push("elites must be < population");
        }
        if self.tournament_size < 1 {
            v.push("tournament_size must be >= 1");
        }
        for p in [self.crossover_rate, self.swap_mutation_rate, self.reassign_mutation_rate] {
            if !(0.0..=1.0).contains(&p) {
                v.push("rates must be in [0, 1]");
                break;
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v.join("; "))
        }
    }
}

/// Weighted sum of objectives, each divided by the baseline's value (by 1
/// when the baseline value is 0 or, for minute-valued objectives, below 1).
pub fn scalar_fitness(fv: &FitnessVector, w: &ObjectiveWeights, base: &FitnessVector) -> f64 {
    let minutes = |v: f64, b: f64| v / b.max(1.0);
    let fraction = |v: f64, b: f64| if b > 0.0 { v / b } else { v };
    w.w_usage * minutes(fv.total_usage, base.total_usage)
        + w.w_balance * fraction(fv.utilization_stddev, base.utilization_stddev)
        + w.w_risk * minutes(fv.expected_failure_cost, base.expected_failure_cost)
        + w.w_tardiness * minutes(fv.total_tardiness, base.total_tardiness)
}

/// Genotype: a global placement sequence plus the line of each order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chromosome {
    pub perm: Vec<OrderId>,
    pub assign: BTreeMap<OrderId, LineId>,
}

impl Chromosome {
    /// The chromosome that decodes to `schedule`'s line sequences: orders in
    /// processing-start order (ties by line id) on their scheduled lines.
    pub fn from_schedule(schedule: &Schedule) -> Self {
        let mut jobs: Vec<(&LineId, &crate::model::ScheduledJob)> = schedule.iter_jobs().collect();
        jobs.sort_by(|a, b| (a.1.processing_start, a.0).cmp(&(b.1.processing_start, b.0)));
        Self {
            perm: jobs.iter().map(|(_, j)| j.order_id.clone()).collect(),
            assign: jobs.iter().map(|(l, j)| (j.order_id.clone(), (*l).clone())).collect(),
        }
    }

    /// Moves `order` to `line`, at `position` among that line's jobs.
    pub fn moved(&self, order: &OrderId, line: &LineId, position: usize) -> Self {
        let mut assign = self.assign.clone();
        assign.insert(order.clone(), line.clone());
        let rest: Vec<&OrderId> = self.perm.iter().filter(|o| *o != order).collect();
        let on_line: Vec<usize> = rest
            .iter()
            .enumerate()
            .filter(|(_, o)| assign.get(**o) == Some(line))
            .map(|(i, _)| i)
            .collect();
        let at = on_line.get(position).copied().unwrap_or(rest.len());
        let mut perm: Vec<OrderId> = rest.into_iter().cloned().collect();
        perm.insert(at, order.clone());
        Self { perm, assign }
    }
}

/// A scheduling instance: what must be planned, where, and against which
/// failure predictions.
#[derive(Clone, Copy)]
pub struct Instance<'a> {
    pub catalog: &'a Catalog,
    pub plant: &'a PlantState,
    pub orders: &'a [Order],
    pub shift: Shift,
    pub rates: &'a dyn FailureRates,
    pub rework_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub schedule: Schedule,
    pub chromosome: Chromosome,
    pub fitness: FitnessVector,
    pub scalar: f64,
    pub baseline_fitness: FitnessVector,
    pub baseline_scalar: f64,
    pub generations_run: usize,
    /// Best scalar fitness after each generation (entry 0 is the initial
    /// population).
    pub history: Vec<f64>,
}

/// Serial schedule generation for a chromosome.
pub fn decode(chromosome: &Chromosome, inst: &Instance<'_>) -> Result<Schedule, OptimizeError> {
    let p = Problem::new(inst)?;
    let g = p.genome_of(chromosome).ok_or(OptimizeError::BadChromosome)?;
    Ok(p.decode(&g))
}

/// Scalar fitness of the greedy baseline, used as the normalization point.
pub fn baseline_fitness(inst: &Instance<'_>) -> Result<(Schedule, FitnessVector), OptimizeError> {
    let schedule = crate::baseline::baseline_schedule(inst.plant, inst.orders, inst.catalog, inst.shift)?;
    let fv = fitness_of(&schedule, inst)?;
    Ok((schedule, fv))
}

pub fn fitness_of(schedule: &Schedule, inst: &Instance<'_>) -> Result<FitnessVector, OptimizeError> {
    let ctx = crate::metrics::MetricsContext {
        catalog: inst.catalog,
        orders: inst.orders,
        plant: inst.plant,
        rates: inst.rates,
        rework_factor: inst.rework_factor,
    };
    crate::metrics::compute_metrics(schedule, &ctx)
        .map(|r| FitnessVector::from(&r))
        .map_err(|_| OptimizeError::DegenerateShift)
}
