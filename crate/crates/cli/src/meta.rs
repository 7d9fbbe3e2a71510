//! Report envelopes: every artifact embeds the seed and the hashes of the
//! config and input files that produced it.

use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub tool_version: String,
    pub seed: u64,
    pub config_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_report_sha256: Option<String>,
}

impl RunMeta {
    pub fn new(seed: u64, config_sha256: String) -> Self {
        RunMeta {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_sha256,
            dataset_sha256: None,
            prior_report_sha256: None,
        }
    }

    pub fn with_dataset(mut self, path: &Path) -> Result<Self, CliError> {
        self.dataset_sha256 = Some(sha256_file(path)?);
        Ok(self)
    }

    pub fn with_prior_report(mut self, path: &Path) -> Result<Self, CliError> {
        self.prior_report_sha256 = Some(sha256_file(path)?);
        Ok(self)
    }
}

/// A report payload wrapped with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub meta: RunMeta,
    pub report: T,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::pipeline(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| CliError::pipeline(format!("writing {}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("parsing {}: {e}", path.display())))
}
