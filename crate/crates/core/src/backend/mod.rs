//! The model abstraction: every model interaction goes through one
//! capability-declaring interface.
//!
//! Three implementations ship with the crate: [`HttpBackend`] for remote
//! logprob-serving endpoints, [`ReplayBackend`] for deterministic playback of
//! recorded runs, and [`SyntheticBackend`] for scripted tests. Any backend
//! can be wrapped in a [`RecordingBackend`] to capture its responses into the
//! replay format.
//!
//! Operations check the declared capabilities and fail before any request is
//! issued when a required capability is missing.

mod http;
mod replay;
mod synthetic;

pub use http::{HttpBackend, NativeAdapter, RetryPolicy, WireAdapter};
pub use replay::{RecordingBackend, ReplayBackend, ReplayEntry, ReplayLoadError};
pub use synthetic::{SyntheticBackend, SyntheticResponse, SyntheticRule, SyntheticScript};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datamodel::{clamp_logp, Modality, OptionDistribution, OptionKey};

/// What a backend declares it can serve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendCapabilities {
    pub supports_images: bool,
    pub supports_option_logprobs: bool,
    /// Full (untruncated) next-token distributions. Backends that only expose
    /// top-k logprobs must declare `false`; elicitation requires the full
    /// vocabulary.
    pub supports_full_next_token_logprobs: bool,
    /// Re-sampling with declared internal noise (e.g. dropout kept active at
    /// inference). The harness never toggles model internals itself.
    pub supports_stochastic_mode: bool,
}

impl BackendCapabilities {
    pub fn all() -> Self {
        BackendCapabilities {
            supports_images: true,
            supports_option_logprobs: true,
            supports_full_next_token_logprobs: true,
            supports_stochastic_mode: true,
        }
    }

    pub fn none() -> Self {
        BackendCapabilities {
            supports_images: false,
            supports_option_logprobs: false,
            supports_full_next_token_logprobs: false,
            supports_stochastic_mode: false,
        }
    }
}

impl Default for BackendCapabilities {
    fn default() -> Self {
        BackendCapabilities::all()
    }
}

/// What kind of payload a request asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestMode {
    OptionLogprobs,
    NextTokenLogprobs,
    FreeText,
}

/// Wire-level query for a model endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    pub mode: RequestMode,
    /// Candidate first-token surface forms per option key, e.g.
    /// `{"A", " A", "A."}`. Required for `OptionLogprobs` requests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_surface_forms: Option<BTreeMap<OptionKey, Vec<String>>>,
    #[serde(default)]
    pub stochastic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl BackendRequest {
    pub fn free_text(prompt: impl Into<String>, image_ref: Option<&str>) -> Self {
        BackendRequest {
            prompt: prompt.into(),
            image_ref: image_ref.map(str::to_string),
            mode: RequestMode::FreeText,
            option_surface_forms: None,
            stochastic: false,
            seed: None,
        }
    }

    pub fn option_logprobs(
        prompt: impl Into<String>,
        image_ref: Option<&str>,
        surface_forms: BTreeMap<OptionKey, Vec<String>>,
    ) -> Self {
        BackendRequest {
            prompt: prompt.into(),
            image_ref: image_ref.map(str::to_string),
            mode: RequestMode::OptionLogprobs,
            option_surface_forms: Some(surface_forms),
            stochastic: false,
            seed: None,
        }
    }

    pub fn next_token_logprobs(prompt: impl Into<String>, image_ref: Option<&str>) -> Self {
        BackendRequest {
            prompt: prompt.into(),
            image_ref: image_ref.map(str::to_string),
            mode: RequestMode::NextTokenLogprobs,
            option_surface_forms: None,
            stochastic: false,
            seed: None,
        }
    }

    pub fn with_stochastic(mut self, stochastic: bool, seed: Option<u64>) -> Self {
        self.stochastic = stochastic;
        self.seed = seed;
        self
    }

    /// Content hash used to key replay recordings. Field order is fixed by
    /// the struct definition and maps are ordered, so the hash is canonical.
    pub fn canonical_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serialization cannot fail");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Short human-readable summary for error messages.
    pub fn summary(&self) -> String {
        let prompt: String = self.prompt.chars().take(60).collect();
        format!(
            "{:?} image={} prompt={prompt:?}...",
            self.mode,
            self.image_ref.as_deref().unwrap_or("-")
        )
    }
}

/// Token usage metadata, when the backend reports it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
}

/// Wire-level reply. The field matching the request mode must be present;
/// `OptionLogprobs` requests may instead be answered with raw
/// `next_token_logps`, from which per-option values are derived via the
/// surface-form maximum.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_logps: Option<BTreeMap<OptionKey, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_token_logps: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default)]
    pub usage: Usage,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend does not support {capability}")]
    CapabilityMissing { capability: &'static str },
    #[error("transport failure: {message}")]
    Transport { message: String },
    #[error("malformed response: {message}")]
    MalformedResponse { message: String },
    #[error("invalid request: {message}")]
    InvalidRequest { message: String },
    #[error("no recorded response for request {request_hash} ({summary})")]
    ReplayMiss {
        request_hash: String,
        summary: String,
    },
}

/// A logprob-serving model endpoint. Implementations must accept concurrent
/// requests; each request is independent.
pub trait Backend: Send + Sync {
    fn capabilities(&self) -> BackendCapabilities;
    fn execute(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn capabilities(&self) -> BackendCapabilities {
        (**self).capabilities()
    }
    fn execute(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).execute(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn capabilities(&self) -> BackendCapabilities {
        (**self).capabilities()
    }
    fn execute(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).execute(request)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn capabilities(&self) -> BackendCapabilities {
        (**self).capabilities()
    }
    fn execute(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).execute(request)
    }
}

fn require(present: bool, capability: &'static str) -> Result<(), BackendError> {
    if present {
        Ok(())
    } else {
        Err(BackendError::CapabilityMissing { capability })
    }
}

fn gate_image(caps: &BackendCapabilities, image_ref: Option<&str>) -> Result<(), BackendError> {
    if image_ref.is_some() {
        require(caps.supports_images, "images")?;
    }
    Ok(())
}

/// Default candidate surface forms per key: the bare letter, a
/// leading-space variant, and a trailing-period variant. Tokenizers split
/// these differently; the per-key maximum is taken over all of them.
pub fn default_surface_forms() -> BTreeMap<OptionKey, Vec<String>> {
    OptionKey::ALL
        .iter()
        .map(|&k| {
            let letter = k.as_str();
            (
                k,
                vec![letter.to_string(), format!(" {letter}"), format!("{letter}.")],
            )
        })
        .collect()
}

/// Reduce a raw next-token distribution to per-key log-probabilities by
/// taking, for each key, the maximum over that key's candidate surface forms.
pub fn aggregate_surface_forms(
    next_token_logps: &BTreeMap<String, f64>,
    surface_forms: &BTreeMap<OptionKey, Vec<String>>,
) -> Result<BTreeMap<OptionKey, f64>, BackendError> {
    let mut out = BTreeMap::new();
    for key in OptionKey::ALL {
        let forms = surface_forms
            .get(&key)
            .ok_or_else(|| BackendError::InvalidRequest {
                message: format!("surface forms missing key {key}"),
            })?;
        let best = forms
            .iter()
            .filter_map(|form| next_token_logps.get(form).copied())
            .fold(f64::NEG_INFINITY, f64::max);
        if best == f64::NEG_INFINITY {
            return Err(BackendError::MalformedResponse {
                message: format!("no surface form of key {key} present in next-token logprobs"),
            });
        }
        out.insert(key, best);
    }
    Ok(out)
}

/// Query the log-probabilities of the four option labels at the first answer
/// token. Requires `supports_option_logprobs`; the returned distribution is
/// clamped per the shared probability floor and tagged with the query
/// modality (visual iff an image was attached).
pub fn mc_logits(
    backend: &dyn Backend,
    prompt: &str,
    image_ref: Option<&str>,
    surface_forms: &BTreeMap<OptionKey, Vec<String>>,
) -> Result<OptionDistribution, BackendError> {
    mc_logits_opts(backend, prompt, image_ref, surface_forms, false, None)
}

/// [`mc_logits`] with stochastic-mode control. `stochastic = true` requires
/// `supports_stochastic_mode` and passes the seed through to the backend.
pub fn mc_logits_opts(
    backend: &dyn Backend,
    prompt: &str,
    image_ref: Option<&str>,
    surface_forms: &BTreeMap<OptionKey, Vec<String>>,
    stochastic: bool,
    seed: Option<u64>,
) -> Result<OptionDistribution, BackendError> {
    let caps = backend.capabilities();
    require(caps.supports_option_logprobs, "option logprobs")?;
    gate_image(&caps, image_ref)?;
    if stochastic {
        require(caps.supports_stochastic_mode, "stochastic mode")?;
    }
    for key in OptionKey::ALL {
        if surface_forms.get(&key).map_or(true, Vec::is_empty) {
            return Err(BackendError::InvalidRequest {
                message: format!("surface forms must cover all four keys; {key} missing"),
            });
        }
    }

    let request = BackendRequest::option_logprobs(prompt, image_ref, surface_forms.clone())
        .with_stochastic(stochastic, seed);
    let response = backend.execute(&request)?;

    let raw = if let Some(map) = response.option_logps {
        map
    } else if let Some(tokens) = &response.next_token_logps {
        aggregate_surface_forms(tokens, surface_forms)?
    } else {
        return Err(BackendError::MalformedResponse {
            message: "response carried neither option nor next-token logprobs".to_string(),
        });
    };

    let modality = if image_ref.is_some() {
        Modality::Visual
    } else {
        Modality::Textual
    };
    Ok(OptionDistribution::from_logp_map(&raw, modality))
}

/// Query the full next-token distribution after a prefix. Requires
/// `supports_full_next_token_logprobs`. Values are clamped to `<= 0` and the
/// implied probability mass must not exceed 1.
pub fn next_token_logprobs(
    backend: &dyn Backend,
    prefix: &str,
    image_ref: Option<&str>,
) -> Result<BTreeMap<String, f64>, BackendError> {
    let caps = backend.capabilities();
    require(
        caps.supports_full_next_token_logprobs,
        "full next-token logprobs",
    )?;
    gate_image(&caps, image_ref)?;

    let request = BackendRequest::next_token_logprobs(prefix, image_ref);
    let response = backend.execute(&request)?;
    let raw = response
        .next_token_logps
        .ok_or_else(|| BackendError::MalformedResponse {
            message: "response carried no next-token logprobs".to_string(),
        })?;

    let clamped: BTreeMap<String, f64> = raw
        .into_iter()
        .map(|(token, logp)| (token, clamp_logp(logp)))
        .collect();
    let mass: f64 = clamped.values().map(|l| l.exp()).sum();
    if mass > 1.0 + 1e-6 {
        return Err(BackendError::MalformedResponse {
            message: format!("next-token probabilities sum to {mass:.6} > 1"),
        });
    }
    Ok(clamped)
}

/// Free-text generation. Always available; `stochastic = true` requires
/// `supports_stochastic_mode`.
pub fn generate(
    backend: &dyn Backend,
    prompt: &str,
    image_ref: Option<&str>,
    stochastic: bool,
    seed: Option<u64>,
) -> Result<String, BackendError> {
    let caps = backend.capabilities();
    gate_image(&caps, image_ref)?;
    if stochastic {
        require(caps.supports_stochastic_mode, "stochastic mode")?;
    }

    let request = BackendRequest::free_text(prompt, image_ref).with_stochastic(stochastic, seed);
    let response = backend.execute(&request)?;
    response.text.ok_or_else(|| BackendError::MalformedResponse {
        message: "response carried no text".to_string(),
    })
}
