//! HTTP control plane for the re-scheduling loop.

pub mod config;
pub mod engine;
pub mod frames;
pub mod http;
pub mod proposal;
pub mod store;

pub use config::ServiceConfig;
pub use engine::{Action, ApiError, Engine, Request};
