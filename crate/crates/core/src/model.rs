//! Plant domain types: recipes, changeovers, lines, orders and schedules.
//!
//! Time is integer minutes measured from the start of the shift.

use crate::ids::{Family, LineId, OrderId, RecipeId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub type Minutes = i64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recipe {
    pub id: RecipeId,
    pub family: Family,
    /// Processing minutes on each compatible line.
    pub durations: BTreeMap<LineId, Minutes>,
}

impl Recipe {
    pub fn duration_on(&self, line: &LineId) -> Option<Minutes> {
        self.durations.get(line).copied()
    }

    pub fn is_compatible(&self, line: &LineId) -> bool {
        self.durations.contains_key(line)
    }
}

/// Sequence-dependent changeover minutes between recipe families.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "ChangeoverFile", into = "ChangeoverFile")]
pub struct ChangeoverMatrix {
    entries: BTreeMap<(Family, Family), Minutes>,
    default_minutes: Minutes,
}

impl ChangeoverMatrix {
    pub fn new(default_minutes: Minutes) -> Self {
        Self {
            entries: BTreeMap::new(),
            default_minutes,
        }
    }

    pub fn with_entry(mut self, from: impl Into<Family>, to: impl Into<Family>, minutes: Minutes) -> Self {
        self.set(from.into(), to.into(), minutes);
        self
    }

    pub fn set(&mut self, from: Family, to: Family, minutes: Minutes) {
        self.entries.insert((from, to), minutes);
    }

    pub fn default_minutes(&self) -> Minutes {
        self.default_minutes
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Family, &Family, Minutes)> {
        self.entries.iter().map(|((f, t), m)| (f, t, *m))
    }

    /// Changeover minutes from `from` to `to`. Same-family pairs default to 0.
    pub fn minutes(&self, from: &Family, to: &Family) -> Minutes {
        if let Some(m) = self.entries.get(&(from.clone(), to.clone())) {
            return *m;
        }
        if from == to {
            0
        } else {
            self.default_minutes
        }
    }

    /// Changeover before a job, where `prev` is the family last produced on
    /// the line (`None` for a clean line).
    pub fn before(&self, prev: Option<&Family>, next: &Family) -> Minutes {
        prev.map_or(0, |p| self.minutes(p, next))
    }
}

#[derive(Serialize, Deserialize)]
struct ChangeoverFile {
    default_minutes: Minutes,
    #[serde(default)]
    entries: Vec<ChangeoverEntry>,
}

#[derive(Serialize, Deserialize)]
struct ChangeoverEntry {
    from: Family,
    to: Family,
    minutes: Minutes,
}

impl From<ChangeoverFile> for ChangeoverMatrix {
    fn from(f: ChangeoverFile) -> Self {
        let mut m = ChangeoverMatrix::new(f.default_minutes);
        for e in f.entries {
            m.set(e.from, e.to, e.minutes);
        }
        m
    }
}

impl From<ChangeoverMatrix> for ChangeoverFile {
    fn from(m: ChangeoverMatrix) -> Self {
        ChangeoverFile {
            default_minutes: m.default_minutes,
            entries: m
                .entries
                .into_iter()
                .map(|((from, to), minutes)| ChangeoverEntry { from, to, minutes })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub enum LineState {
    #[default]
    Available,
    Failed,
    Maintenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductionLine {
    pub id: LineId,
    #[serde(default)]
    pub state: LineState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Order {
    pub id: OrderId,
    pub recipe_id: RecipeId,
    pub release: Minutes,
    pub due: Minutes,
    /// Lower is more urgent.
    #[serde(default)]
    pub priority: u32,
}

/// One placement on a line: changeover `[changeover_start, processing_start)`
/// followed by processing `[processing_start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledJob {
    pub order_id: OrderId,
    pub changeover_start: Minutes,
    pub processing_start: Minutes,
    pub end: Minutes,
}

impl ScheduledJob {
    pub fn changeover_minutes(&self) -> Minutes {
        self.processing_start - self.changeover_start
    }

    pub fn processing_minutes(&self) -> Minutes {
        self.end - self.processing_start
    }

    pub fn busy_minutes(&self) -> Minutes {
        self.end - self.changeover_start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub shift_start: Minutes,
    pub shift_length: Minutes,
    /// Per-line ordered jobs. Lines without work may be absent.
    pub jobs: BTreeMap<LineId, Vec<ScheduledJob>>,
}

impl Schedule {
    pub fn empty(shift: Shift) -> Self {
        Self {
            shift_start: shift.start,
            shift_length: shift.length,
            jobs: BTreeMap::new(),
        }
    }

    pub fn shift(&self) -> Shift {
        Shift {
            start: self.shift_start,
            length: self.shift_length,
        }
    }

    pub fn job_count(&self) -> usize {
        self.jobs.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.job_count() == 0
    }

    pub fn iter_jobs(&self) -> impl Iterator<Item = (&LineId, &ScheduledJob)> {
        self.jobs
            .iter()
            .flat_map(|(line, jobs)| jobs.iter().map(move |j| (line, j)))
    }

    /// Line and job placing `order`, if scheduled.
    pub fn find(&self, order: &OrderId) -> Option<(&LineId, &ScheduledJob)> {
        self.iter_jobs().find(|(_, j)| &j.order_id == order)
    }

    /// Per-line order sequences, the genotype view of a schedule.
    pub fn sequences(&self) -> BTreeMap<LineId, Vec<OrderId>> {
        self.jobs
            .iter()
            .map(|(l, jobs)| (l.clone(), jobs.iter().map(|j| j.order_id.clone()).collect()))
            .collect()
    }

    /// Drops lines that carry no jobs so that equal plans compare equal.
    pub fn normalized(mut self) -> Self {
        self.jobs.retain(|_, jobs| !jobs.is_empty());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shift {
    pub start: Minutes,
    pub length: Minutes,
}

impl Shift {
    pub fn end(&self) -> Minutes {
        self.start + self.length
    }
}

/// Planning view of one line: its state, the earliest minute new work may
/// begin, and the family it last produced (which determines the first
/// changeover of a new plan).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineStatus {
    pub state: LineState,
    pub available_from: Minutes,
    #[serde(default)]
    pub last_family: Option<Family>,
}

impl LineStatus {
    pub fn is_available(&self) -> bool {
        self.state == LineState::Available
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PlantState {
    pub lines: BTreeMap<LineId, LineStatus>,
}

impl PlantState {
    /// All lines Available and clean at `start`.
    pub fn at_shift_start<'a>(lines: impl IntoIterator<Item = &'a LineId>, start: Minutes) -> Self {
        Self {
            lines: lines
                .into_iter()
                .map(|id| {
                    (
                        id.clone(),
                        LineStatus {
                            state: LineState::Available,
                            available_from: start,
                            last_family: None,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn is_available(&self, line: &LineId) -> bool {
        self.lines.get(line).is_some_and(LineStatus::is_available)
    }

    pub fn available_lines(&self) -> impl Iterator<Item = &LineId> {
        self.lines
            .iter()
            .filter(|(_, s)| s.is_available())
            .map(|(id, _)| id)
    }

    pub fn with_line_state(mut self, line: &LineId, state: LineState) -> Self {
        if let Some(s) = self.lines.get_mut(line) {
            s.state = state;
        }
        self
    }
}

/// Static plant knowledge: recipes and the changeover matrix.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Catalog {
    pub recipes: BTreeMap<RecipeId, Recipe>,
    pub changeovers: ChangeoverMatrix,
}

impl Catalog {
    pub fn new(recipes: impl IntoIterator<Item = Recipe>, changeovers: ChangeoverMatrix) -> Self {
        Self {
            recipes: recipes.into_iter().map(|r| (r.id.clone(), r)).collect(),
            changeovers,
        }
    }

    pub fn recipe(&self, id: &RecipeId) -> Option<&Recipe> {
        self.recipes.get(id)
    }

    pub fn family_of(&self, order: &Order) -> Option<&Family> {
        self.recipe(&order.recipe_id).map(|r| &r.family)
    }

    /// Compatible Available lines for an order, in id order.
    pub fn eligible_lines<'a>(&'a self, order: &Order, plant: &'a PlantState) -> Vec<&'a LineId> {
        match self.recipe(&order.recipe_id) {
            Some(r) => plant
                .available_lines()
                .filter(|l| r.is_compatible(l))
                .collect(),
            None => Vec::new(),
        }
    }
}

/// Serial placement cursor for one line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineCursor {
    pub finish: Minutes,
    pub last_family: Option<Family>,
}

impl LineCursor {
    pub fn from_status(status: &LineStatus) -> Self {
        Self {
            finish: status.available_from,
            last_family: status.last_family.clone(),
        }
    }

    /// Appends a job. Processing starts at `max(finish + changeover, release)`;
    /// the changeover is placed immediately before processing so that any
    /// idle gap precedes it.
    pub fn place(
        &mut self,
        order: &Order,
        family: &Family,
        duration: Minutes,
        changeovers: &ChangeoverMatrix,
    ) -> ScheduledJob {
        let changeover = changeovers.before(self.last_family.as_ref(), family);
        let processing_start = (self.finish + changeover).max(order.release);
        let job = ScheduledJob {
            order_id: order.id.clone(),
            changeover_start: processing_start - changeover,
            processing_start,
            end: processing_start + duration,
        };
        self.finish = job.end;
        self.last_family = Some(family.clone());
        job
    }
}
