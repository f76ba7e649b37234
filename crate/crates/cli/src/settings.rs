//! Config-file support: a flat key-value JSON object whose keys mirror the
//! command-line flags. Flags always override file values.

use std::path::Path;

use serde::Deserialize;

use dbmc_core::{Error, Result};

/// All recognized config-file keys. Unknown keys are rejected so typos
/// surface instead of silently using defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub scheme: Option<String>,
    pub detector: Option<String>,
    pub d: Option<f64>,
    pub a: Option<f64>,
    pub r: Option<f64>,
    #[serde(rename = "D")]
    pub diffusion: Option<f64>,
    #[serde(rename = "Ts")]
    pub ts: Option<f64>,
    #[serde(rename = "L")]
    pub memory: Option<usize>,
    #[serde(rename = "N")]
    pub molecules: Option<u64>,
    #[serde(rename = "K")]
    pub bits: Option<usize>,
    #[serde(rename = "R")]
    pub realizations: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub power_normalized: Option<bool>,
    pub taps: Option<String>,
    pub b1: Option<f64>,
    pub b2: Option<f64>,
    pub b3: Option<f64>,
    pub b4: Option<f64>,
    pub b5: Option<f64>,
    pub b6: Option<f64>,
    /// simulate-channel: molecules to release
    pub n: Option<u64>,
    pub dt: Option<f64>,
    pub scenario: Option<String>,
    pub source: Option<usize>,
    pub bin: Option<f64>,
    pub horizon: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}
