use super::{
    baseline_fitness, fitness_of, optimize_reactive, scalar_fitness, Chromosome, GaParams, Instance, ObjectiveWeights,
    OptimizeError, OptimizeResult,
};
use crate::analytics::AnalyticsState;
use crate::ids::{LineId, OrderId};
use crate::model::{Catalog, LineState, Order, PlantState, Shift};
use crate::rng::key_hash;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

/// What a planner sees: line availability, the orders still to place, and
/// the orders currently running on each line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningState {
    pub plant: PlantState,
    pub open_orders: Vec<Order>,
    #[serde(default)]
    pub in_flight: BTreeMap<LineId, Order>,
}

impl PlanningState {
    /// The state as it would be right after `line` fails: the line is out and
    /// the order running on it is open again.
    pub fn with_line_failed(&self, line: &LineId) -> Self {
        let mut next = self.clone();
        next.plant = next.plant.with_line_state(line, LineState::Failed);
        if let Some(o) = next.in_flight.remove(line) {
            next.open_orders.push(o);
            next.open_orders.sort_by(|a, b| a.id.cmp(&b.id));
        }
        next
    }

    pub fn instance<'a>(
        &'a self,
        catalog: &'a Catalog,
        shift: Shift,
        rates: &'a dyn crate::metrics::FailureRates,
        rework_factor: f64,
    ) -> Instance<'a> {
        Instance {
            catalog,
            plant: &self.plant,
            orders: &self.open_orders,
            shift,
            rates,
            rework_factor,
        }
    }
}

/// Seed of the contingency plan for `line`.
pub fn contingency_seed(master: u64, line: &LineId) -> u64 {
    master.wrapping_add(key_hash(&["contingency", line.as_str()]))
}

/// Identifies the planning inputs a contingency is valid for: available
/// lines, open orders, the failure-rate counters and the search settings.
/// Clock and line free times are left out; a matching plan is re-decoded
/// against the current plant.
pub fn fingerprint(state: &PlanningState, rates_seq: u64, weights: &ObjectiveWeights, params: &GaParams) -> String {
    #[derive(Serialize)]
    struct View<'a> {
        lines: Vec<&'a LineId>,
        orders: Vec<&'a OrderId>,
        rates_seq: u64,
        weights: &'a ObjectiveWeights,
        params: &'a GaParams,
    }
    let view = View {
        lines: state.plant.available_lines().collect(),
        orders: state.open_orders.iter().map(|o| &o.id).collect(),
        rates_seq,
        weights,
        params,
    };
    hex::encode(Sha256::digest(serde_json::to_vec(&view).expect("fingerprint view serializes")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contingency {
    pub line: LineId,
    pub hazard: f64,
    pub seed: u64,
    pub fingerprint: String,
    /// The plan, or `None` when losing the line strands orders.
    pub result: Option<OptimizeResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stranded: Vec<OrderId>,
}

/// Contingency plans for the `k` Available lines with the highest failure
/// hazard (ties by id).
#[allow(clippy::too_many_arguments)]
pub fn optimize_predictive(
    state: &PlanningState,
    catalog: &Catalog,
    shift: Shift,
    analytics: &AnalyticsState,
    rework_factor: f64,
    weights: &ObjectiveWeights,
    params: &GaParams,
    k: usize,
) -> Result<BTreeMap<LineId, Contingency>, OptimizeError> {
    if k == 0 {
        return Err(OptimizeError::InvalidParams("k must be >= 1".into()));
    }
    let mut ranked: Vec<(f64, &LineId)> = state
        .plant
        .available_lines()
        .map(|l| (analytics.hazard(l).hazard, l))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let mut out = BTreeMap::new();
    for (hazard, line) in ranked.into_iter().take(k) {
        let hypothetical = state.with_line_failed(line);
        let seed = contingency_seed(params.seed, line);
        let inst = hypothetical.instance(catalog, shift, analytics, rework_factor);
        let run = GaParams { seed, ..*params };
        let (result, stranded) = match optimize_reactive(&inst, weights, &run) {
            Ok(r) => (Some(r), Vec::new()),
            Err(OptimizeError::Stranded(s)) => (None, s.0),
            Err(e) => return Err(e),
        };
        out.insert(
            line.clone(),
            Contingency {
                line: line.clone(),
                hazard,
                seed,
                fingerprint: fingerprint(&hypothetical, analytics.rates_seq, weights, params),
                result,
                stranded,
            },
        );
    }
    Ok(out)
}

/// Contingency plans kept until their inputs change.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContingencyCache {
    pub entries: BTreeMap<LineId, Contingency>,
}

impl ContingencyCache {
    pub fn replace(&mut self, entries: BTreeMap<LineId, Contingency>) {
        self.entries = entries;
    }

    /// The cached plan for the failure of `line`, re-decoded against
    /// `actual`, if it was computed for the same inputs.
    #[allow(clippy::too_many_arguments)]
    pub fn lookup(
        &self,
        line: &LineId,
        actual: &PlanningState,
        catalog: &Catalog,
        shift: Shift,
        analytics: &AnalyticsState,
        rework_factor: f64,
        weights: &ObjectiveWeights,
        params: &GaParams,
    ) -> Option<OptimizeResult> {
        let entry = self.entries.get(line)?;
        let cached = entry.result.as_ref()?;
        if entry.fingerprint != fingerprint(actual, analytics.rates_seq, weights, params) {
            return None;
        }
        let inst = actual.instance(catalog, shift, analytics, rework_factor);
        redecode(&cached.chromosome, &inst, weights).ok()
    }
}

fn redecode(chromosome: &Chromosome, inst: &Instance<'_>, weights: &ObjectiveWeights) -> Result<OptimizeResult, OptimizeError> {
    let schedule = super::decode(chromosome, inst)?;
    let (_, base_fv) = baseline_fitness(inst)?;
    let fitness = fitness_of(&schedule, inst)?;
    Ok(OptimizeResult {
        chromosome: chromosome.clone(),
        scalar: scalar_fitness(&fitness, weights, &base_fv),
        schedule,
        fitness,
        baseline_scalar: scalar_fitness(&base_fv, weights, &base_fv),
        baseline_fitness: base_fv,
        generations_run: 0,
        history: Vec::new(),
    })
}
