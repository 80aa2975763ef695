//! TOML scenario files. Every table and key is optional; missing ones take
//! their defaults and unknown ones are rejected.

use std::path::{Path, PathBuf};

use rac_core::simnet::{Scenario, ScenarioError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Syntax(String),
    #[error("invalid scenario: {0}")]
    Invalid(#[from] ScenarioError),
    /// TOML integers are signed, so e.g. a seed above `i64::MAX` has no
    /// file form.
    #[error("cannot write scenario: {0}")]
    Unrepresentable(String),
}

/// Largest seed a scenario file or manifest can hold.
pub const MAX_SEED: u64 = i64::MAX as u64;

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioFileError> {
    let sc: Scenario =
        toml::from_str(text).map_err(|e| ScenarioFileError::Syntax(e.to_string()))?;
    sc.validate()?;
    Ok(sc)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioFileError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_scenario(&text)
}

/// Renders a scenario back into the file format.
pub fn to_toml(sc: &Scenario) -> Result<String, ScenarioFileError> {
    toml::to_string(sc).map_err(|e| ScenarioFileError::Unrepresentable(e.to_string()))
}
