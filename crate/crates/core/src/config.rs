//! Experiment configuration files.
//!
//! Configs are flat TOML: model parameters, horizon, trial count and seed at
//! the top level, the initial-condition recipe as an `initial` table.
//!
//! ```toml
//! n = 20
//! m = 4
//! delta = 0.5
//! eta = 0.2
//! horizon = 5000
//! trials = 100
//! seed = 7
//! initial = { kind = "uniform" }
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::montecarlo::ExperimentConfig;

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// TOML text that parses back to an identical config. Seeds above
/// `i64::MAX` have no TOML representation and are rejected.
pub fn config_to_toml(config: &ExperimentConfig) -> Result<String> {
    toml::to_string(config).map_err(|e| Error::ConfigParse(e.to_string()))
}
