//! Scripted backend for tests and fixtures.
//!
//! A synthetic backend is a list of rules evaluated in order; the first rule
//! whose matchers all hold produces the response. Scripts are serializable so
//! the CLI can load them from a file.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datamodel::{clamp_prob, OptionKey};

use super::{
    Backend, BackendCapabilities, BackendError, BackendRequest, BackendResponse, RequestMode,
};

/// What a matched rule replies with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticResponse {
    /// Per-key option probabilities, indexed by key ordinal.
    OptionProbs { probs: [f64; 4] },
    /// Like `OptionProbs`, but log-probabilities are perturbed with seeded
    /// Gaussian noise when the request asks for stochastic mode.
    NoisyOptionProbs { probs: [f64; 4], sigma: f64 },
    /// A next-token distribution over an explicit vocabulary.
    NextTokenProbs { probs: Vec<(String, f64)> },
    /// Free-form text.
    Text { text: String },
}

/// One scripted rule: all present matchers must hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<RequestMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub with_image: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_ends_with: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_contains: Option<String>,
    pub response: SyntheticResponse,
}

impl SyntheticRule {
    pub fn new(response: SyntheticResponse) -> Self {
        SyntheticRule {
            mode: None,
            with_image: None,
            prompt_contains: None,
            prompt_ends_with: None,
            image_contains: None,
            response,
        }
    }

    pub fn when_mode(mut self, mode: RequestMode) -> Self {
        self.mode = Some(mode);
        self
    }

    pub fn when_image(mut self, with_image: bool) -> Self {
        self.with_image = Some(with_image);
        self
    }

    pub fn when_prompt_contains(mut self, needle: impl Into<String>) -> Self {
        self.prompt_contains = Some(needle.into());
        self
    }

    pub fn when_prompt_ends_with(mut self, suffix: impl Into<String>) -> Self {
        self.prompt_ends_with = Some(suffix.into());
        self
    }

    pub fn when_image_contains(mut self, needle: impl Into<String>) -> Self {
        self.image_contains = Some(needle.into());
        self
    }

    fn matches(&self, request: &BackendRequest) -> bool {
        self.mode.map_or(true, |m| m == request.mode)
            && self
                .with_image
                .map_or(true, |w| w == request.image_ref.is_some())
            && self
                .prompt_contains
                .as_ref()
                .map_or(true, |s| request.prompt.contains(s))
            && self
                .prompt_ends_with
                .as_ref()
                .map_or(true, |s| request.prompt.ends_with(s))
            && self.image_contains.as_ref().map_or(true, |s| {
                request.image_ref.as_deref().is_some_and(|i| i.contains(s))
            })
    }
}

/// Serializable script: capabilities plus the rule list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScript {
    #[serde(default)]
    pub capabilities: BackendCapabilities,
    pub rules: Vec<SyntheticRule>,
}

pub struct SyntheticBackend {
    capabilities: BackendCapabilities,
    rules: Vec<SyntheticRule>,
}

impl SyntheticBackend {
    pub fn new(capabilities: BackendCapabilities) -> Self {
        SyntheticBackend {
            capabilities,
            rules: Vec::new(),
        }
    }

    pub fn from_script(script: SyntheticScript) -> Self {
        SyntheticBackend {
            capabilities: script.capabilities,
            rules: script.rules,
        }
    }

    pub fn load_script(path: &std::path::Path) -> Result<Self, std::io::Error> {
        let content = std::fs::read_to_string(path)?;
        let script: SyntheticScript = serde_json::from_str(&content)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(SyntheticBackend::from_script(script))
    }

    pub fn rule(mut self, rule: SyntheticRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn push_rule(&mut self, rule: SyntheticRule) {
        self.rules.push(rule);
    }

    /// Deterministic per-request RNG: the same request always draws the same
    /// noise, so recorded synthetic runs replay identically.
    fn rng_for(request: &BackendRequest) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(request.prompt.as_bytes());
        if let Some(image) = &request.image_ref {
            hasher.update(image.as_bytes());
        }
        let digest = hasher.finalize();
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        ChaCha8Rng::seed_from_u64(u64::from_le_bytes(word) ^ request.seed.unwrap_or(0))
    }

    fn render(
        &self,
        rule: &SyntheticRule,
        request: &BackendRequest,
    ) -> Result<BackendResponse, BackendError> {
        let mismatch = |wanted: &str| BackendError::MalformedResponse {
            message: format!(
                "synthetic rule produces {wanted} but request mode is {:?}",
                request.mode
            ),
        };
        match &rule.response {
            SyntheticResponse::OptionProbs { probs } => {
                if request.mode != RequestMode::OptionLogprobs {
                    return Err(mismatch("option logprobs"));
                }
                Ok(option_response(*probs))
            }
            SyntheticResponse::NoisyOptionProbs { probs, sigma } => {
                if request.mode != RequestMode::OptionLogprobs {
                    return Err(mismatch("option logprobs"));
                }
                if !request.stochastic || *sigma <= 0.0 {
                    return Ok(option_response(*probs));
                }
                let mut rng = Self::rng_for(request);
                let normal = Normal::new(0.0, *sigma).map_err(|e| {
                    BackendError::MalformedResponse {
                        message: format!("bad noise sigma: {e}"),
                    }
                })?;
                let mut noisy = *probs;
                for p in &mut noisy {
                    *p = clamp_prob(*p) * normal.sample(&mut rng).exp();
                }
                Ok(option_response(noisy))
            }
            SyntheticResponse::NextTokenProbs { probs } => {
                if request.mode != RequestMode::NextTokenLogprobs {
                    return Err(mismatch("next-token logprobs"));
                }
                let map: BTreeMap<String, f64> = probs
                    .iter()
                    .map(|(token, p)| (token.clone(), clamp_prob(*p).ln()))
                    .collect();
                Ok(BackendResponse {
                    next_token_logps: Some(map),
                    ..BackendResponse::default()
                })
            }
            SyntheticResponse::Text { text } => {
                if request.mode != RequestMode::FreeText {
                    return Err(mismatch("text"));
                }
                Ok(BackendResponse {
                    text: Some(text.clone()),
                    ..BackendResponse::default()
                })
            }
        }
    }
}

fn option_response(probs: [f64; 4]) -> BackendResponse {
    let map: BTreeMap<OptionKey, f64> = OptionKey::ALL
        .iter()
        .zip(probs.iter())
        .map(|(&k, &p)| (k, clamp_prob(p).ln()))
        .collect();
    BackendResponse {
        option_logps: Some(map),
        ..BackendResponse::default()
    }
}

impl Backend for SyntheticBackend {
    fn capabilities(&self) -> BackendCapabilities {
        self.capabilities
    }

    fn execute(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let rule = self
            .rules
            .iter()
            .find(|r| r.matches(request))
            .ok_or_else(|| BackendError::MalformedResponse {
                message: format!("no synthetic rule matches request: {}", request.summary()),
            })?;
        self.render(rule, request)
    }
}
