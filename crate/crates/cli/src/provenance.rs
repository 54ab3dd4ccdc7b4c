use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// Build string baked in at compile time.
pub const GIT_DESCRIBE: &str = env!("ILVM_GIT_DESCRIBE");

/// Stamp carried by every output file. No timestamps, so reruns with the
/// same inputs produce identical bytes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub git_describe: String,
    pub version: String,
}

impl Provenance {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            command: command.to_string(),
            config_hash: config.hash(),
            seed: config.seed,
            git_describe: GIT_DESCRIBE.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("provenance always serializes")
    }

    /// Comment lines for the top of a CSV file.
    pub fn csv_header(&self) -> String {
        format!(
            "# command={} config_hash={} seed={} git={} version={}\n",
            self.command, self.config_hash, self.seed, self.git_describe, self.version
        )
    }
}
