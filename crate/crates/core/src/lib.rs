pub mod analytics;
pub mod baseline;
pub mod event;
pub mod eventlog;
pub mod generator;
pub mod ids;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod rng;
pub mod scenario;
pub mod simulator;
pub mod situation;
mod serde_util;
pub mod validate;
