//! One structured config file covers backend, parallelism, seeds, prompt
//! templates, and thresholds, so every run's configuration is captured in
//! the report it produces. Environment variables override secrets only.

use std::path::{Path, PathBuf};

use conflictkit::backend::BackendCapabilities;
use conflictkit::confidence::REPHRASE_PROMPT;
use conflictkit::detector::PromptTemplates;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Synthetic,
    Replay,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    /// Replay: recording file to serve responses from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recording: Option<PathBuf>,
    /// Synthetic: script file with capabilities and rules.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    /// Http: endpoint URL.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Http: wire adapter name ("native" ships with the crate).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter: Option<String>,
    /// Http: name of the environment variable holding the bearer token.
    /// Only the name lives in config; the secret never does.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    /// Optional capture: every response is recorded into this file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_to: Option<PathBuf>,
    /// Declared capabilities (http requires them; replay/synthetic have
    /// their own defaults).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capabilities: Option<BackendCapabilities>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recognition: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_instruction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rephrase: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdsSection {
    #[serde(default = "default_max_skip_fraction")]
    pub max_skip_fraction: f64,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: usize,
}

fn default_max_skip_fraction() -> f64 {
    0.1
}

fn default_retry_limit() -> usize {
    3
}

impl Default for ThresholdsSection {
    fn default() -> Self {
        ThresholdsSection {
            max_skip_fraction: default_max_skip_fraction(),
            retry_limit: default_retry_limit(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    pub backend: BackendSection,
    #[serde(default)]
    pub prompts: PromptsSection,
    #[serde(default)]
    pub thresholds: ThresholdsSection,
}

fn default_parallelism() -> usize {
    1
}

impl Config {
    /// Load from a TOML file. Relative paths inside the config resolve
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Config, CliError> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: Config = toml::from_str(&content)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.backend.recording = config.backend.recording.map(|p| resolve(base, p));
        config.backend.script = config.backend.script.map(|p| resolve(base, p));
        config.backend.record_to = config.backend.record_to.map(|p| resolve(base, p));
        Ok(config)
    }

    /// Apply command-line overrides: a backend spec of the form
    /// `replay:<path>`, `synthetic:<path>`, or `http:<url>`, plus seed and
    /// parallelism.
    pub fn apply_overrides(
        &mut self,
        backend_spec: Option<&str>,
        seed: Option<u64>,
        parallelism: Option<usize>,
    ) -> Result<(), CliError> {
        if let Some(spec) = backend_spec {
            let (kind, value) = spec.split_once(':').ok_or_else(|| {
                CliError::config(format!(
                    "backend override must look like replay:<path>, synthetic:<path>, or http:<url>; got {spec:?}"
                ))
            })?;
            match kind {
                "replay" => {
                    self.backend.kind = BackendKind::Replay;
                    self.backend.recording = Some(PathBuf::from(value));
                }
                "synthetic" => {
                    self.backend.kind = BackendKind::Synthetic;
                    self.backend.script = Some(PathBuf::from(value));
                }
                "http" => {
                    self.backend.kind = BackendKind::Http;
                    self.backend.endpoint = Some(value.to_string());
                }
                other => {
                    return Err(CliError::config(format!("unknown backend kind {other:?}")))
                }
            }
        }
        if let Some(seed) = seed {
            self.seed = seed;
        }
        if let Some(parallelism) = parallelism {
            self.parallelism = parallelism;
        }
        Ok(())
    }

    /// Hash of the effective configuration, embedded in every report so the
    /// numbers stay tied to their inputs.
    pub fn sha256(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialization cannot fail");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn prompt_templates(&self) -> PromptTemplates {
        let mut templates = PromptTemplates::default();
        if let Some(recognition) = &self.prompts.recognition {
            templates.recognition = recognition.clone();
        }
        if let Some(instruction) = &self.prompts.answer_instruction {
            templates.answer_instruction = instruction.clone();
        }
        templates
    }

    pub fn rephrase_prompt(&self) -> String {
        self.prompts
            .rephrase
            .clone()
            .unwrap_or_else(|| REPHRASE_PROMPT.to_string())
    }
}

fn resolve(base: &Path, path: PathBuf) -> PathBuf {
    if path.is_absolute() {
        path
    } else {
        base.join(path)
    }
}
