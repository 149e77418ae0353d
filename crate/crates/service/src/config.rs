use resched_core::optimizer::{GaParams, ObjectiveWeights};
use resched_core::situation::SituationModel;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    /// Scenario file; relative paths resolve against the config file.
    pub scenario: PathBuf,
    /// Holds `events.ndjson`, `journal.ndjson` and `audit.ndjson`.
    pub data_dir: PathBuf,
    /// Principal name to bearer token.
    pub tokens: BTreeMap<String, String>,
    /// Overrides the scenario's situation model when present.
    #[serde(default)]
    pub situation_model: Option<SituationModel>,
    #[serde(default)]
    pub ga: GaParams,
    #[serde(default)]
    pub weights: ObjectiveWeights,
    #[serde(default)]
    pub auto_execute: bool,
    /// Contingency plans kept warm for this many riskiest lines; 0 disables.
    #[serde(default = "default_k")]
    pub predictive_k: usize,
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_port")]
    pub port: u16,
    #[serde(default = "default_rework")]
    pub rework_factor: f64,
    /// Commit the greedy baseline when starting on an empty log.
    #[serde(default = "yes")]
    pub commit_baseline_on_start: bool,
    /// Wall milliseconds per simulated minute; absent means the clock only
    /// moves with commands.
    #[serde(default)]
    pub realtime_ms_per_minute: Option<u64>,
    /// fsync every append.
    #[serde(default = "yes")]
    pub fsync: bool,
}

fn default_k() -> usize {
    1
}

fn default_bind() -> String {
    "127.0.0.1".into()
}

fn default_port() -> u16 {
    8080
}

fn default_rework() -> f64 {
    resched_core::metrics::DEFAULT_REWORK_FACTOR
}

fn yes() -> bool {
    true
}

impl ServiceConfig {
    /// Minimal config for a scenario and data directory.
    pub fn new(scenario: impl Into<PathBuf>, data_dir: impl Into<PathBuf>) -> Self {
        Self {
            scenario: scenario.into(),
            data_dir: data_dir.into(),
            tokens: BTreeMap::new(),
            situation_model: None,
            ga: GaParams::default(),
            weights: ObjectiveWeights::default(),
            auto_execute: false,
            predictive_k: default_k(),
            bind: default_bind(),
            port: default_port(),
            rework_factor: default_rework(),
            commit_baseline_on_start: true,
            realtime_ms_per_minute: None,
            fsync: true,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let mut c: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if c.scenario.is_relative() {
            c.scenario = base.join(&c.scenario);
        }
        if c.data_dir.is_relative() {
            c.data_dir = base.join(&c.data_dir);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.ga.validate().map_err(ConfigError::Invalid)?;
        self.weights.validate().map_err(ConfigError::Invalid)?;
        if let Some(m) = &self.situation_model {
            m.validate().map_err(ConfigError::Invalid)?;
        }
        if !(self.rework_factor.is_finite() && self.rework_factor >= 0.0) {
            return Err(ConfigError::Invalid("rework_factor must be finite and non-negative".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in self.tokens.values() {
            if t.is_empty() || !seen.insert(t) {
                return Err(ConfigError::Invalid("tokens must be non-empty and distinct".into()));
            }
        }
        Ok(())
    }

    pub fn principal(&self, token: &str) -> Option<&str> {
        self.tokens.iter().find(|(_, t)| t.as_str() == token).map(|(p, _)| p.as_str())
    }
}
