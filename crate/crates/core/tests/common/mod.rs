#![allow(dead_code)]

use resched_core::ids::LineId;
use resched_core::model::{ChangeoverMatrix, Order, Recipe};
use resched_core::rng;
use resched_core::scenario::{ScenarioConfig, TrueRates};
use resched_core::situation::SituationModel;
use std::collections::BTreeMap;

pub fn recipe(id: &str, family: &str, lines: &[(&str, i64)]) -> Recipe {
    Recipe {
        id: id.into(),
        family: family.into(),
        durations: lines.iter().map(|(l, d)| (LineId::from(*l), *d)).collect(),
    }
}

pub fn order(id: &str, recipe: &str, release: i64, due: i64) -> Order {
    Order {
        id: id.into(),
        recipe_id: recipe.into(),
        release,
        due,
        priority: 1,
    }
}

/// Three lines, two families, six orders; no failures of any kind.
pub fn quiet_plant() -> ScenarioConfig {
    ScenarioConfig {
        rng_algorithm: rng::ALGORITHM.to_owned(),
        name: "quiet".into(),
        lines: vec!["L1".into(), "L2".into(), "L3".into()],
        recipes: vec![
            recipe("RA", "A", &[("L1", 30), ("L2", 40), ("L3", 35)]),
            recipe("RB", "B", &[("L1", 45), ("L2", 30)]),
            recipe("RC", "A", &[("L2", 25), ("L3", 20)]),
        ],
        changeover_matrix: ChangeoverMatrix::new(10),
        orders: vec![
            order("o1", "RA", 0, 200),
            order("o2", "RB", 0, 200),
            order("o3", "RC", 10, 150),
            order("o4", "RA", 20, 300),
            order("o5", "RB", 30, 300),
            order("o6", "RC", 0, 100),
        ],
        shift_start: 0,
        shift_length: 480,
        true_rates: TrueRates::constant(0.0),
        line_hazards: BTreeMap::new(),
        repair_minutes: None,
        sensors: vec![],
        situation_model: SituationModel::default(),
        rng_seed: 42,
    }
}
