//! Construct the runtime backend described by the config, with optional
//! response capture.

use std::path::PathBuf;
use std::sync::Arc;

use conflictkit::backend::{
    Backend, BackendCapabilities, HttpBackend, NativeAdapter, RecordingBackend, ReplayBackend,
    SyntheticBackend,
};

use crate::config::{BackendKind, Config};
use crate::CliError;

pub enum RuntimeBackend {
    Plain(Box<dyn Backend>),
    Recording {
        recorder: Arc<RecordingBackend>,
        record_to: PathBuf,
    },
}

impl RuntimeBackend {
    pub fn backend(&self) -> &dyn Backend {
        match self {
            RuntimeBackend::Plain(backend) => backend.as_ref(),
            RuntimeBackend::Recording { recorder, .. } => recorder.as_ref(),
        }
    }

    /// Flush captured responses, if capture was requested.
    pub fn finalize(&self) -> Result<(), CliError> {
        if let RuntimeBackend::Recording { recorder, record_to } = self {
            recorder
                .save(record_to)
                .map_err(|e| CliError::pipeline(format!("saving recording: {e}")))?;
            log::info!("recorded responses saved to {}", record_to.display());
        }
        Ok(())
    }
}

pub fn build_backend(config: &Config) -> Result<RuntimeBackend, CliError> {
    let section = &config.backend;
    let inner: Box<dyn Backend> = match section.kind {
        BackendKind::Replay => {
            let path = section.recording.as_ref().ok_or_else(|| {
                CliError::config("backend.kind = \"replay\" requires backend.recording")
            })?;
            if !path.exists() {
                return Err(CliError::config(format!(
                    "recording file {} does not exist",
                    path.display()
                )));
            }
            let mut replay = ReplayBackend::load(path)
                .map_err(|e| CliError::config(format!("loading {}: {e}", path.display())))?;
            if let Some(capabilities) = section.capabilities {
                replay = replay.with_capabilities(capabilities);
            }
            Box::new(replay)
        }
        BackendKind::Synthetic => {
            let path = section.script.as_ref().ok_or_else(|| {
                CliError::config("backend.kind = \"synthetic\" requires backend.script")
            })?;
            if !path.exists() {
                return Err(CliError::config(format!(
                    "script file {} does not exist",
                    path.display()
                )));
            }
            Box::new(
                SyntheticBackend::load_script(path)
                    .map_err(|e| CliError::config(format!("loading {}: {e}", path.display())))?,
            )
        }
        BackendKind::Http => {
            let endpoint = section.endpoint.as_ref().ok_or_else(|| {
                CliError::config("backend.kind = \"http\" requires backend.endpoint")
            })?;
            let capabilities = section.capabilities.ok_or_else(|| {
                CliError::config(
                    "backend.kind = \"http\" requires backend.capabilities to be declared",
                )
            })?;
            let adapter = match section.adapter.as_deref().unwrap_or("native") {
                "native" => Box::new(NativeAdapter),
                other => {
                    return Err(CliError::config(format!("unknown adapter {other:?}")))
                }
            };
            let auth_token = match &section.auth_env {
                Some(var) => Some(std::env::var(var).map_err(|_| {
                    CliError::config(format!("auth environment variable {var} is not set"))
                })?),
                None => None,
            };
            Box::new(HttpBackend::new(
                endpoint.clone(),
                auth_token,
                capabilities,
                adapter,
            ))
        }
    };

    Ok(match &section.record_to {
        Some(record_to) => RuntimeBackend::Recording {
            recorder: Arc::new(RecordingBackend::new(inner)),
            record_to: record_to.clone(),
        },
        None => RuntimeBackend::Plain(inner),
    })
}

/// Capability probe used for pre-flight checks that want a friendlier error
/// than the backend's own gating.
pub fn capabilities(config: &Config) -> Option<BackendCapabilities> {
    config.backend.capabilities
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;

    #[test]
    fn missing_recording_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        std::fs::write(
            &path,
            "[backend]\nkind = \"replay\"\nrecording = \"absent.jsonl\"\n",
        )
        .unwrap();
        let config = Config::load(&path).unwrap();
        let err = build_backend(&config).err().expect("must fail");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn http_requires_declared_capabilities() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        std::fs::write(
            &path,
            "[backend]\nkind = \"http\"\nendpoint = \"http://localhost:1/\"\n",
        )
        .unwrap();
        let config = Config::load(&path).unwrap();
        let err = build_backend(&config).err().expect("must fail");
        assert_eq!(err.exit_code(), 2);
    }
}
