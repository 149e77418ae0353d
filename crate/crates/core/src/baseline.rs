//! Greedy list scheduler used as the "historic" reference plan.

use crate::ids::OrderId;
use crate::model::{Catalog, LineCursor, Order, PlantState, Schedule, Shift};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Orders that have no compatible Available line.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct StrandedOrders(pub Vec<OrderId>);

impl fmt::Display for StrandedOrders {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<&str> = self.0.iter().map(OrderId::as_str).collect();
        write!(f, "orders without a compatible available line: {}", ids.join(", "))
    }
}

pub fn find_stranded(orders: &[Order], plant: &PlantState, catalog: &Catalog) -> Option<StrandedOrders> {
    let stranded: Vec<OrderId> = orders
        .iter()
        .filter(|o| catalog.eligible_lines(o, plant).is_empty())
        .map(|o| o.id.clone())
        .collect();
    (!stranded.is_empty()).then_some(StrandedOrders(stranded))
}

/// Orders in dispatch order: priority, then release, then id.
pub fn dispatch_order(orders: &[Order]) -> Vec<&Order> {
    let mut sorted: Vec<&Order> = orders.iter().collect();
    sorted.sort_by(|a, b| (a.priority, a.release, &a.id).cmp(&(b.priority, b.release, &b.id)));
    sorted
}

/// Deterministic greedy plan: each order, in dispatch order, goes to the
/// compatible Available line whose current finish is earliest (ties by line
/// id) and is placed serially with its changeover.
pub fn baseline_schedule(
    plant: &PlantState,
    open_orders: &[Order],
    catalog: &Catalog,
    shift: Shift,
) -> Result<Schedule, StrandedOrders> {
    if let Some(stranded) = find_stranded(open_orders, plant, catalog) {
        return Err(stranded);
    }
    let mut cursors: BTreeMap<_, _> = plant
        .lines
        .iter()
        .filter(|(_, s)| s.is_available())
        .map(|(id, s)| (id.clone(), LineCursor::from_status(s)))
        .collect();
    let mut schedule = Schedule::empty(shift);

    for order in dispatch_order(open_orders) {
        let recipe = catalog
            .recipe(&order.recipe_id)
            .expect("stranded check resolves every recipe");
        // BTreeMap iteration is in id order, so min_by_key keeps the lowest id on ties.
        let (line, cursor) = cursors
            .iter_mut()
            .filter(|(id, _)| recipe.is_compatible(id))
            .min_by_key(|(_, c)| c.finish)
            .expect("stranded check guarantees a compatible line");
        let duration = recipe.duration_on(line).expect("compatible");
        let job = cursor.place(order, &recipe.family, duration, &catalog.changeovers);
        schedule.jobs.entry(line.clone()).or_default().push(job);
    }
    Ok(schedule)
}
