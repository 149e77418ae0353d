//! Experiment harness and offline tools behind the `resched` binary.

pub mod experiment;
pub mod replay;
