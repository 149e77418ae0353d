use resched_core::ids::{LineId, OrderId};
use resched_core::metrics::FitnessVector;
use resched_core::model::{Minutes, Schedule};
use resched_core::optimizer::{Chromosome, PlanningState};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProposalStatus {
    Pending,
    Adjusted,
    Executed,
    Superseded,
    Rejected,
}

impl ProposalStatus {
    pub fn is_open(self) -> bool {
        matches!(self, ProposalStatus::Pending | ProposalStatus::Adjusted)
    }
}

impl fmt::Display for ProposalStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// An operator edit: move an order to a line and position among that
/// line's jobs, or pin it so later moves leave it alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Move {
    Place {
        order_id: OrderId,
        line: LineId,
        position: usize,
    },
    Pin {
        order_id: OrderId,
        pin: bool,
    },
}

impl Move {
    pub fn order(&self) -> &OrderId {
        match self {
            Move::Place { order_id, .. } | Move::Pin { order_id, .. } => order_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub id: String,
    /// Situation id, `manual`, or `predictive:<line>`.
    pub trigger: String,
    /// The situation that caused the proposal, if any.
    #[serde(default)]
    pub situation_id: Option<String>,
    pub status: ProposalStatus,
    pub created_at: Minutes,
    pub created_seq: u64,
    pub schedule: Schedule,
    pub chromosome: Chromosome,
    pub fitness: FitnessVector,
    /// Fitness when first proposed, before any adjustment.
    pub original_fitness: FitnessVector,
    pub baseline_fitness: FitnessVector,
    pub scalar: f64,
    pub baseline_scalar: f64,
    pub generations_run: usize,
    #[serde(default)]
    pub adjustments: Vec<Move>,
    #[serde(default)]
    pub pinned: BTreeSet<OrderId>,
    /// What the plan was computed against.
    pub basis: PlanningState,
    #[serde(default)]
    pub executed_seq: Option<u64>,
}

impl Proposal {
    pub fn is_manual(&self) -> bool {
        self.situation_id.is_none()
    }
}

pub fn proposal_id(n: u64) -> String {
    format!("P{n:06}")
}
