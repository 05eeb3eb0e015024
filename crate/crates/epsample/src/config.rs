//! The optional JSON config file shared by all subcommands.

use std::fs;
use std::path::Path;

use epsample_core::pipeline::SamplerConfig;
use epsample_core::workload::ScenarioConfig;
use serde::{Deserialize, Serialize};

use crate::cli::CliError;

/// Every section is optional; command-line flags override file values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub sampler: SamplerConfig,
    pub scenario: Option<ScenarioConfig>,
    pub evaluation: EvaluationConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Patterns seen at most this often count as rare; default max(1, N/1000).
    pub rare_max: Option<u64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}
