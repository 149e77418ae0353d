//! Scenario files: the plant, its orders, and the ground truth the simulator
//! draws from.

use crate::ids::{Family, LineId, OrderId, RecipeId, SensorId};
use crate::model::{Catalog, ChangeoverMatrix, Minutes, Order, PlantState, Recipe, Shift};
use crate::rng;
use crate::situation::SituationModel;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeLineRate {
    pub recipe_id: RecipeId,
    pub line_id: LineId,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRate {
    pub recipe_id: RecipeId,
    pub line_id: LineId,
    pub prev_family: Option<Family>,
    pub rate: f64,
}

/// Ground-truth batch failure probabilities. Lookup falls back from the full
/// key to (recipe, line), then recipe, then `default`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrueRates {
    pub default: f64,
    #[serde(default)]
    pub recipe: BTreeMap<RecipeId, f64>,
    #[serde(default)]
    pub recipe_line: Vec<RecipeLineRate>,
    #[serde(default)]
    pub full: Vec<TransitionRate>,
}

impl TrueRates {
    pub fn constant(p: f64) -> Self {
        Self {
            default: p,
            ..Self::default()
        }
    }

    pub fn rate(&self, recipe: &RecipeId, line: &LineId, prev: Option<&Family>) -> f64 {
        if let Some(t) = self
            .full
            .iter()
            .find(|t| &t.recipe_id == recipe && &t.line_id == line && t.prev_family.as_ref() == prev)
        {
            return t.rate;
        }
        if let Some(t) = self
            .recipe_line
            .iter()
            .find(|t| &t.recipe_id == recipe && &t.line_id == line)
        {
            return t.rate;
        }
        self.recipe.get(recipe).copied().unwrap_or(self.default)
    }

    fn all(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.default)
            .chain(self.recipe.values().copied())
            .chain(self.recipe_line.iter().map(|t| t.rate))
            .chain(self.full.iter().map(|t| t.rate))
    }
}

impl crate::metrics::FailureRates for TrueRates {
    fn rate(&self, recipe: &RecipeId, line: &LineId, prev_family: Option<&Family>) -> f64 {
        TrueRates::rate(self, recipe, line, prev_family)
    }
}

/// A synthetic sensor sampled every `period` minutes from N(mean, std).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub sensor_id: SensorId,
    pub mean: f64,
    pub std: f64,
    pub period: Minutes,
}

fn default_algorithm() -> String {
    rng::ALGORITHM.to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// The generator the draws were specified against.
    #[serde(default = "default_algorithm")]
    pub rng_algorithm: String,
    #[serde(default)]
    pub name: String,
    pub lines: Vec<LineId>,
    pub recipes: Vec<Recipe>,
    pub changeover_matrix: ChangeoverMatrix,
    pub orders: Vec<Order>,
    pub shift_start: Minutes,
    pub shift_length: Minutes,
    pub true_rates: TrueRates,
    /// Failures per hour; lines not listed never fail spontaneously.
    #[serde(default)]
    pub line_hazards: BTreeMap<LineId, f64>,
    /// Mean repair time after a spontaneous failure. Absent means failed
    /// lines wait for an explicit recovery.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repair_minutes: Option<Minutes>,
    #[serde(default)]
    pub sensors: Vec<SensorSpec>,
    #[serde(default)]
    pub situation_model: SituationModel,
    pub rng_seed: u64,
}

impl ScenarioConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Parses and validates.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let config: Self = serde_json::from_str(text)?;
        config.validate().map_err(ScenarioError::Invalid)?;
        Ok(config)
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
        std::fs::write(path, self.to_json_pretty())?;
        Ok(())
    }

    pub fn shift(&self) -> Shift {
        Shift {
            start: self.shift_start,
            length: self.shift_length,
        }
    }

    pub fn catalog(&self) -> Catalog {
        Catalog::new(self.recipes.iter().cloned(), self.changeover_matrix.clone())
    }

    pub fn plant_at_start(&self) -> PlantState {
        PlantState::at_shift_start(&self.lines, self.shift_start)
    }

    pub fn hazard(&self, line: &LineId) -> f64 {
        self.line_hazards.get(line).copied().unwrap_or(0.0)
    }

    /// Every violation, not just the first.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut v = Vec::new();
        if self.rng_algorithm != rng::ALGORITHM {
            v.push(format!(
                "rng_algorithm {:?} is not the supported generator {:?}",
                self.rng_algorithm,
                rng::ALGORITHM
            ));
        }
        if self.shift_length <= 0 {
            v.push("shift_length must be > 0".into());
        }
        let lines: BTreeSet<&LineId> = self.lines.iter().collect();
        if lines.len() != self.lines.len() {
            v.push("duplicate line id".into());
        }
        if self.lines.is_empty() {
            v.push("no lines".into());
        }
        let mut recipes: BTreeMap<&RecipeId, &Recipe> = BTreeMap::new();
        for r in &self.recipes {
            if recipes.insert(&r.id, r).is_some() {
                v.push(format!("duplicate recipe {}", r.id));
            }
            for (line, d) in &r.durations {
                if !lines.contains(line) {
                    v.push(format!("recipe {} references unknown line {}", r.id, line));
                }
                if *d <= 0 {
                    v.push(format!("recipe {} has non-positive duration on {}", r.id, line));
                }
            }
        }
        for (from, to, m) in self.changeover_matrix.entries() {
            if m < 0 {
                v.push(format!("negative changeover {from} -> {to}"));
            }
        }
        if self.changeover_matrix.default_minutes() < 0 {
            v.push("negative default changeover".into());
        }
        let mut orders: BTreeSet<&OrderId> = BTreeSet::new();
        for o in &self.orders {
            if !orders.insert(&o.id) {
                v.push(format!("duplicate order {}", o.id));
            }
            match recipes.get(&o.recipe_id) {
                None => v.push(format!("order {} references unknown recipe {}", o.id, o.recipe_id)),
                Some(r) if !r.durations.keys().any(|l| lines.contains(l)) => {
                    v.push(format!("order {}: recipe {} has no compatible line", o.id, r.id))
                }
                Some(_) => {}
            }
        }
        for p in self.true_rates.all() {
            if !(0.0..=1.0).contains(&p) {
                v.push(format!("true rate {p} outside [0, 1]"));
            }
        }
        for (line, h) in &self.line_hazards {
            if !lines.contains(line) {
                v.push(format!("hazard for unknown line {line}"));
            }
            if !(h.is_finite() && *h >= 0.0) {
                v.push(format!("hazard of {line} must be finite and >= 0"));
            }
        }
        if self.repair_minutes.is_some_and(|m| m <= 0) {
            v.push("repair_minutes must be > 0".into());
        }
        for s in &self.sensors {
            if s.period <= 0 {
                v.push(format!("sensor {} period must be > 0", s.sensor_id));
            }
            if !(s.mean.is_finite() && s.std.is_finite() && s.std >= 0.0) {
                v.push(format!("sensor {} needs finite mean and std >= 0", s.sensor_id));
            }
        }
        if let Err(e) = self.situation_model.validate() {
            v.push(e);
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small() -> ScenarioConfig {
        ScenarioConfig {
            rng_algorithm: default_algorithm(),
            name: "small".into(),
            lines: vec!["L1".into(), "L2".into()],
            recipes: vec![Recipe {
                id: "R1".into(),
                family: "A".into(),
                durations: [("L1".into(), 30)].into_iter().collect(),
            }],
            changeover_matrix: ChangeoverMatrix::new(10),
            orders: vec![Order {
                id: "o1".into(),
                recipe_id: "R1".into(),
                release: 0,
                due: 100,
                priority: 1,
            }],
            shift_start: 0,
            shift_length: 480,
            true_rates: TrueRates::constant(0.1),
            line_hazards: BTreeMap::new(),
            repair_minutes: None,
            sensors: vec![],
            situation_model: SituationModel::default(),
            rng_seed: 1,
        }
    }

    #[test]
    fn roundtrip() {
        let c = small();
        assert_eq!(ScenarioConfig::from_json(&c.to_json_pretty()).unwrap(), c);
    }

    #[test]
    fn all_violations_are_listed() {
        let mut c = small();
        c.orders[0].recipe_id = "R9".into();
        c.true_rates.default = 1.5;
        c.shift_length = 0;
        let v = c.validate().unwrap_err();
        assert_eq!(v.len(), 3, "{v:?}");
    }

    #[test]
    fn rate_backoff() {
        let t = TrueRates {
            default: 0.1,
            recipe: [("R1".into(), 0.2)].into_iter().collect(),
            recipe_line: vec![RecipeLineRate {
                recipe_id: "R1".into(),
                line_id: "L1".into(),
                rate: 0.3,
            }],
            full: vec![TransitionRate {
                recipe_id: "R1".into(),
                line_id: "L1".into(),
                prev_family: Some("B".into()),
                rate: 0.4,
            }],
        };
        let (r, l1, l2) = (RecipeId::from("R1"), LineId::from("L1"), LineId::from("L2"));
        assert_eq!(t.rate(&r, &l1, Some(&"B".into())), 0.4);
        assert_eq!(t.rate(&r, &l1, None), 0.3);
        assert_eq!(t.rate(&r, &l2, None), 0.2);
        assert_eq!(t.rate(&"R2".into(), &l2, None), 0.1);
    }
}
