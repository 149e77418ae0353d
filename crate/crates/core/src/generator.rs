//! Random scenario synthesis.

use crate::ids::{Family, LineId, RecipeId, SensorId};
use crate::model::{ChangeoverMatrix, Order, Recipe};
use crate::rng::{self, DetRng};
use crate::scenario::{ScenarioConfig, SensorSpec, TransitionRate, TrueRates};
use crate::situation::SituationModel;
use std::collections::BTreeMap;
use thiserror::Error;

pub const MAX_LINES: usize = 50;
pub const MAX_RECIPES: usize = 780;
pub const MAX_ORDERS: usize = 2000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenerateError {
    #[error("{what} must be between 1 and {max}, got {got}")]
    OutOfRange { what: &'static str, got: usize, max: usize },
}

fn id(prefix: &str, i: usize, count: usize) -> String {
    let width = count.to_string().len();
    format!("{prefix}{:0width$}", i + 1)
}

fn check(what: &'static str, got: usize, max: usize) -> Result<(), GenerateError> {
    if got == 0 || got > max {
        Err(GenerateError::OutOfRange { what, got, max })
    } else {
        Ok(())
    }
}

/// A valid scenario: 480-minute shift, batch durations in [20, 90],
/// changeovers in [0, 30] with a zero diagonal, and true failure rates in
/// [0.02, 0.3], higher after a family change.
pub fn generate(lines: usize, recipes: usize, orders: usize, seed: u64) -> Result<ScenarioConfig, GenerateError> {
    check("lines", lines, MAX_LINES)?;
    check("recipes", recipes, MAX_RECIPES)?;
    check("orders", orders, MAX_ORDERS)?;
    let mut rng = DetRng::seed_from(seed);
    let shift_length = 480;

    let line_ids: Vec<LineId> = (0..lines).map(|i| LineId::new(id("L", i, lines))).collect();
    let n_families = recipes.div_ceil(3).clamp(1, 8);
    let families: Vec<Family> = (0..n_families).map(|i| Family::new(id("F", i, n_families))).collect();

    let mut changeovers = ChangeoverMatrix::new(0);
    for from in &families {
        for to in &families {
            if from != to {
                changeovers.set(from.clone(), to.clone(), rng.range_inclusive(0, 30));
            }
        }
    }

    let mut recipe_list = Vec::with_capacity(recipes);
    for i in 0..recipes {
        let family = families[rng.below(n_families)].clone();
        let k = 1 + rng.below(lines.min(3));
        let mut pool = line_ids.clone();
        rng.shuffle(&mut pool);
        let durations: BTreeMap<LineId, i64> = pool
            .into_iter()
            .take(k)
            .map(|l| (l, rng.range_inclusive(20, 90)))
            .collect();
        recipe_list.push(Recipe {
            id: RecipeId::new(id("R", i, recipes)),
            family,
            durations,
        });
    }

    let mut full = Vec::new();
    for r in &recipe_list {
        for line in r.durations.keys() {
            let prevs = std::iter::once(None).chain(families.iter().map(Some));
            for prev in prevs {
                let cross = prev.is_some_and(|p| p != &r.family);
                let rate = if cross {
                    0.10 + 0.20 * rng.uniform()
                } else {
                    0.02 + 0.08 * rng.uniform()
                };
                full.push(TransitionRate {
                    recipe_id: r.id.clone(),
                    line_id: line.clone(),
                    prev_family: prev.cloned(),
                    rate: (rate * 1000.0).round() / 1000.0,
                });
            }
        }
    }

    let order_list: Vec<Order> = (0..orders)
        .map(|i| {
            let recipe = &recipe_list[rng.below(recipes)];
            let release = rng.range_inclusive(0, shift_length / 4);
            let due = release + rng.range_inclusive(120, shift_length);
            Order {
                id: crate::ids::OrderId::new(id("O", i, orders)),
                recipe_id: recipe.id.clone(),
                release,
                due,
                priority: rng.range_inclusive(1, 3) as u32,
            }
        })
        .collect();

    let line_hazards = line_ids
        .iter()
        .map(|l| (l.clone(), (rng.uniform() * 0.05 * 1000.0).round() / 1000.0))
        .collect();

    Ok(ScenarioConfig {
        rng_algorithm: rng::ALGORITHM.to_owned(),
        name: format!("generated-{lines}x{orders}-{seed}"),
        lines: line_ids,
        recipes: recipe_list,
        changeover_matrix: changeovers,
        orders: order_list,
        shift_start: 0,
        shift_length,
        true_rates: TrueRates {
            default: 0.05,
            full,
            ..TrueRates::default()
        },
        line_hazards,
        repair_minutes: Some(45),
        sensors: vec![
            SensorSpec {
                sensor_id: SensorId::new("T-mixer"),
                mean: 60.0,
                std: 1.5,
                period: 15,
            },
            SensorSpec {
                sensor_id: SensorId::new("P-line"),
                mean: 4.0,
                std: 0.2,
                period: 15,
            },
        ],
        situation_model: SituationModel::default(),
        rng_seed: seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_scenarios_validate() {
        for seed in 0..20 {
            let c = generate(6, 12, 40, seed).unwrap();
            assert_eq!(c.validate(), Ok(()));
            assert_eq!(c.orders.len(), 40);
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate(3, 5, 9, 4).unwrap(), generate(3, 5, 9, 4).unwrap());
        assert_ne!(generate(3, 5, 9, 4).unwrap(), generate(3, 5, 9, 5).unwrap());
    }

    #[test]
    fn bounds() {
        assert!(generate(0, 1, 1, 0).is_err());
        assert!(generate(51, 1, 1, 0).is_err());
    }
}
