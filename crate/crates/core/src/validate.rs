//! Schedule validation against plant state, open orders and the catalog.

use crate::ids::{LineId, OrderId};
use crate::model::{Catalog, Order, PlantState, Schedule};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    UnknownReference,
    LineNotAvailable,
    IncompatibleLine,
    Unsorted,
    Overlap,
    StartsBeforeLineFree,
    StartsBeforeRelease,
    DurationMismatch,
    ChangeoverMismatch,
    DuplicateOrder,
    MissingOrder,
}

impl Rule {
    pub fn label(self) -> &'static str {
        match self {
            Rule::UnknownReference => "unknown reference",
            Rule::LineNotAvailable => "line not available",
            Rule::IncompatibleLine => "incompatible line",
            Rule::Unsorted => "segments not sorted",
            Rule::Overlap => "overlap",
            Rule::StartsBeforeLineFree => "starts before line is free",
            Rule::StartsBeforeRelease => "starts before release",
            Rule::DurationMismatch => "duration mismatch",
            Rule::ChangeoverMismatch => "changeover mismatch",
            Rule::DuplicateOrder => "order scheduled twice",
            Rule::MissingOrder => "open order not scheduled",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<LineId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<OrderId>,
    pub message: String,
}

impl Violation {
    fn new(rule: Rule, line: Option<&LineId>, order: Option<&OrderId>, detail: String) -> Self {
        Self {
            rule,
            line: line.cloned(),
            order: order.cloned(),
            message: detail,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.rule.label(), self.message)
    }
}

/// Checks every schedule invariant. An empty result means the schedule is
/// valid; unresolvable ids are reported as violations rather than errors.
pub fn validate_schedule(
    schedule: &Schedule,
    plant: &PlantState,
    orders: &[Order],
    catalog: &Catalog,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let by_id: BTreeMap<&OrderId, &Order> = orders.iter().map(|o| (&o.id, o)).collect();
    let mut seen: BTreeSet<&OrderId> = BTreeSet::new();

    for (line, jobs) in &schedule.jobs {
        let Some(status) = plant.lines.get(line) else {
            if !jobs.is_empty() {
                out.push(Violation::new(
                    Rule::UnknownReference,
                    Some(line),
                    None,
                    format!("line {line} does not exist"),
                ));
            }
            continue;
        };
        if !jobs.is_empty() && !status.is_available() {
            for job in jobs {
                out.push(Violation::new(
                    Rule::LineNotAvailable,
                    Some(line),
                    Some(&job.order_id),
                    format!("order {} placed on {line} which is {:?}", job.order_id, status.state),
                ));
            }
        }

        let mut prev_family = status.last_family.clone();
        for (idx, job) in jobs.iter().enumerate() {
            if !seen.insert(&job.order_id) {
                out.push(Violation::new(
                    Rule::DuplicateOrder,
                    Some(line),
                    Some(&job.order_id),
                    format!("order {} appears more than once", job.order_id),
                ));
            }
            if idx == 0 && job.changeover_start < status.available_from {
                out.push(Violation::new(
                    Rule::StartsBeforeLineFree,
                    Some(line),
                    Some(&job.order_id),
                    format!(
                        "order {} starts at {} but {line} is free from {}",
                        job.order_id, job.changeover_start, status.available_from
                    ),
                ));
            }
            if idx > 0 {
                let before = &jobs[idx - 1];
                if job.changeover_start < before.changeover_start {
                    out.push(Violation::new(
                        Rule::Unsorted,
                        Some(line),
                        Some(&job.order_id),
                        format!("order {} precedes its predecessor on {line}", job.order_id),
                    ));
                } else if job.changeover_start < before.end {
                    out.push(Violation::new(
                        Rule::Overlap,
                        Some(line),
                        Some(&job.order_id),
                        format!(
                            "overlap on {line}: {} ends at {} but {} starts at {}",
                            before.order_id, before.end, job.order_id, job.changeover_start
                        ),
                    ));
                }
            }
            if job.changeover_start > job.processing_start || job.processing_start > job.end {
                out.push(Violation::new(
                    Rule::Unsorted,
                    Some(line),
                    Some(&job.order_id),
                    format!("order {} has inverted segment bounds", job.order_id),
                ));
            }

            let Some(order) = by_id.get(&job.order_id) else {
                out.push(Violation::new(
                    Rule::UnknownReference,
                    Some(line),
                    Some(&job.order_id),
                    format!("order {} is not an open order", job.order_id),
                ));
                prev_family = None;
                continue;
            };
            let Some(recipe) = catalog.recipe(&order.recipe_id) else {
                out.push(Violation::new(
                    Rule::UnknownReference,
                    Some(line),
                    Some(&job.order_id),
                    format!("recipe {} of order {} does not exist", order.recipe_id, order.id),
                ));
                prev_family = None;
                continue;
            };

            if job.processing_start < order.release {
                out.push(Violation::new(
                    Rule::StartsBeforeRelease,
                    Some(line),
                    Some(&job.order_id),
                    format!(
                        "order {} processes at {} before release {}",
                        order.id, job.processing_start, order.release
                    ),
                ));
            }
            match recipe.duration_on(line) {
                None => out.push(Violation::new(
                    Rule::IncompatibleLine,
                    Some(line),
                    Some(&job.order_id),
                    format!("recipe {} cannot run on {line}", recipe.id),
                )),
                Some(d) if d != job.processing_minutes() => out.push(Violation::new(
                    Rule::DurationMismatch,
                    Some(line),
                    Some(&job.order_id),
                    format!(
                        "order {} processes for {} min, recipe needs {d}",
                        order.id,
                        job.processing_minutes()
                    ),
                )),
                Some(_) => {}
            }
            let expected = catalog.changeovers.before(prev_family.as_ref(), &recipe.family);
            if job.changeover_minutes() != expected {
                out.push(Violation::new(
                    Rule::ChangeoverMismatch,
                    Some(line),
                    Some(&job.order_id),
                    format!(
                        "order {} has {} changeover min, expected {expected}",
                        order.id,
                        job.changeover_minutes()
                    ),
                ));
            }
            prev_family = Some(recipe.family.clone());
        }
    }

    for order in orders {
        if !seen.contains(&order.id) {
            out.push(Violation::new(
                Rule::MissingOrder,
                None,
                Some(&order.id),
                format!("order {} is not scheduled", order.id),
            ));
        }
    }
    out
}
