//! The contrastive log-ratio metric, its separation statistics, and
//! autoregressive visual-memory elicitation.
//!
//! The per-option contrast is `log p_visual - log p_textual`. When the two
//! modalities encode the same knowledge the contrast at the answer token is
//! zero; conflicting knowledge widens it, so its absolute value separates
//! conflicting samples from consistent ones. The same objective, applied
//! token by token, elicits what the visual components remember once textual
//! knowledge is subtracted out.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{next_token_logprobs, Backend, BackendError};
use crate::datamodel::{argmax_option, logp_floor, McqaItem, OptionDistribution, OptionKey};
use crate::detector::{build_textual_free_prompt, build_visual_free_prompt};

/// Per-option log-ratio between the modalities, and its absolute value at
/// the evaluation token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastScore {
    /// `log p_visual - log p_textual` per option key.
    pub per_option: BTreeMap<OptionKey, f64>,
    /// `|per_option[eval_token]|`.
    pub metric: f64,
    pub eval_token: OptionKey,
}

/// Which option anchors the metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTokenRule {
    /// The visual answer (default, following the visual-memory framing).
    #[default]
    VisualAnswer,
    /// The textual answer.
    TextualAnswer,
    /// The option with the largest absolute log-ratio.
    MaxAbsDifference,
}

impl EvalTokenRule {
    pub fn resolve(
        self,
        per_option: &BTreeMap<OptionKey, f64>,
        textual_answer: OptionKey,
        visual_answer: OptionKey,
    ) -> OptionKey {
        match self {
            EvalTokenRule::VisualAnswer => visual_answer,
            EvalTokenRule::TextualAnswer => textual_answer,
            EvalTokenRule::MaxAbsDifference => {
                argmax_option(|k| per_option.get(&k).copied().unwrap_or(0.0).abs())
            }
        }
    }
}

/// Compute the per-option contrast and the metric at `eval_token`.
pub fn contrast_score(
    visual: &OptionDistribution,
    textual: &OptionDistribution,
    eval_token: OptionKey,
) -> ContrastScore {
    let per_option: BTreeMap<OptionKey, f64> = OptionKey::ALL
        .iter()
        .map(|&k| (k, visual.logp(k) - textual.logp(k)))
        .collect();
    let metric = per_option[&eval_token].abs();
    ContrastScore {
        per_option,
        metric,
        eval_token,
    }
}

/// [`contrast_score`] with the evaluation token picked by rule.
pub fn contrast_score_with_rule(
    visual: &OptionDistribution,
    textual: &OptionDistribution,
    rule: EvalTokenRule,
    textual_answer: OptionKey,
    visual_answer: OptionKey,
) -> ContrastScore {
    let per_option: BTreeMap<OptionKey, f64> = OptionKey::ALL
        .iter()
        .map(|&k| (k, visual.logp(k) - textual.logp(k)))
        .collect();
    let eval_token = rule.resolve(&per_option, textual_answer, visual_answer);
    let metric = per_option[&eval_token].abs();
    ContrastScore {
        per_option,
        metric,
        eval_token,
    }
}

/// One histogram bin: lower edge and count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub count: usize,
}

/// Medians of the metric over all / consistent / conflicting samples, plus a
/// histogram over metric values. Subset medians are absent when the subset
/// is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationStats {
    pub median_all: f64,
    pub median_consistent: Option<f64>,
    pub median_conflicting: Option<f64>,
    pub histogram: Vec<HistogramBin>,
}

#[derive(Debug, Error)]
pub enum ContrastError {
    #[error("empty input")]
    EmptyInput,
    #[error("bin width must be positive, got {0}")]
    InvalidBinWidth(f64),
    #[error("elicitation diverged: chosen-token visual probability stayed below the floor for {steps} consecutive steps")]
    Diverged { steps: usize },
    #[error("no token above the plausibility floor at step {step}")]
    NoPlausibleToken { step: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("metric values are finite"));
    let n = sorted.len();
    if n % 2 == 1 {
        Some(sorted[n / 2])
    } else {
        Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0)
    }
}

/// Histogram range; metrics above it land in one overflow bin.
const HISTOGRAM_LIMIT: f64 = 5.0;

/// Default bin width, matching the granularity the metric is usually read at.
pub const DEFAULT_BIN_WIDTH: f64 = 0.2;

/// Medians and histogram over `(score, flipped)` pairs. `flipped` marks
/// modality-conflicting samples; the rest are consistent.
pub fn separation_stats(
    scores: &[(ContrastScore, bool)],
    bin_width: f64,
) -> Result<SeparationStats, ContrastError> {
    if scores.is_empty() {
        return Err(ContrastError::EmptyInput);
    }
    if !(bin_width > 0.0) {
        return Err(ContrastError::InvalidBinWidth(bin_width));
    }

    let all: Vec<f64> = scores.iter().map(|(s, _)| s.metric).collect();
    let consistent: Vec<f64> = scores
        .iter()
        .filter(|(_, flipped)| !flipped)
        .map(|(s, _)| s.metric)
        .collect();
    let conflicting: Vec<f64> = scores
        .iter()
        .filter(|(_, flipped)| *flipped)
        .map(|(s, _)| s.metric)
        .collect();

    let n_bins = (HISTOGRAM_LIMIT / bin_width).ceil() as usize;
    let mut histogram: Vec<HistogramBin> = (0..n_bins)
        .map(|i| HistogramBin {
            lower: i as f64 * bin_width,
            count: 0,
        })
        .collect();
    histogram.push(HistogramBin {
        lower: HISTOGRAM_LIMIT,
        count: 0,
    });
    for &metric in &all {
        let idx = ((metric / bin_width).floor() as usize).min(n_bins);
        histogram[idx].count += 1;
    }

    Ok(SeparationStats {
        median_all: median(&all).expect("nonempty by check above"),
        median_consistent: median(&consistent),
        median_conflicting: median(&conflicting),
        histogram,
    })
}

/// When elicitation stops besides the token budget.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    #[default]
    None,
    /// Stop after emitting this exact token.
    OnToken(String),
}

#[derive(Debug, Clone)]
pub struct ElicitConfig {
    pub max_tokens: usize,
    pub stop_rule: StopRule,
    /// Tokens with visual-context probability below this are excluded from
    /// the contrast argmax; raw contrastive decoding promotes garbage tokens
    /// without a plausibility constraint.
    pub plausibility_floor: f64,
    /// Divergence guard: abort when the chosen token's visual probability
    /// stays below this floor for `divergence_patience` consecutive steps.
    pub divergence_floor: f64,
    pub divergence_patience: usize,
}

impl Default for ElicitConfig {
    fn default() -> Self {
        ElicitConfig {
            max_tokens: 64,
            stop_rule: StopRule::None,
            plausibility_floor: 1e-6,
            divergence_floor: 1e-4,
            divergence_patience: 5,
        }
    }
}

/// An elicited visual memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElicitedMemory {
    pub text: String,
    pub tokens: Vec<String>,
    /// True when every step's winning contrast was exactly zero: the two
    /// contexts never disagreed and the output is the tie-rule artifact, not
    /// a memory.
    pub degenerate: bool,
}

/// Greedy decode maximizing the per-token visual/textual log-ratio.
///
/// Both contexts are queried on the same backend (token identifiers are only
/// comparable within one vocabulary — the signature makes cross-backend
/// elicitation unrepresentable), start from the free-form question variant of
/// the item, and extend with the same chosen token each step. Ties break
/// toward the lexicographically smallest token identifier.
pub fn elicit_visual_memory(
    item: &McqaItem,
    backend: &dyn Backend,
    config: &ElicitConfig,
) -> Result<ElicitedMemory, ContrastError> {
    let (visual_prompt, image_ref) = build_visual_free_prompt(item);
    let mut visual_prefix = visual_prompt;
    let mut textual_prefix = build_textual_free_prompt(item);

    let mut tokens: Vec<String> = Vec::new();
    let mut all_zero = true;
    let mut divergence_streak = 0usize;

    for step in 0..config.max_tokens {
        let visual = next_token_logprobs(backend, &visual_prefix, Some(&image_ref))?;
        let textual = next_token_logprobs(backend, &textual_prefix, None)?;

        let mut best: Option<(&str, f64, f64)> = None;
        for (token, &logp_v) in &visual {
            if logp_v.exp() < config.plausibility_floor {
                continue;
            }
            let logp_t = textual.get(token).copied().unwrap_or_else(logp_floor);
            let score = logp_v - logp_t;
            // Strict comparison keeps the first (lexicographically smallest)
            // token on ties; BTreeMap iterates in ascending key order.
            if best.map_or(true, |(_, s, _)| score > s) {
                best = Some((token, score, logp_v));
            }
        }
        let Some((token, score, logp_v)) = best else {
            return Err(ContrastError::NoPlausibleToken { step });
        };
        let token = token.to_string();

        if score != 0.0 {
            all_zero = false;
        }
        if logp_v.exp() < config.divergence_floor {
            divergence_streak += 1;
            if divergence_streak >= config.divergence_patience {
                return Err(ContrastError::Diverged {
                    steps: divergence_streak,
                });
            }
        } else {
            divergence_streak = 0;
        }

        visual_prefix.push_str(&token);
        textual_prefix.push_str(&token);
        tokens.push(token.clone());

        if let StopRule::OnToken(stop) = &config.stop_rule {
            if &token == stop {
                break;
            }
        }
    }

    Ok(ElicitedMemory {
        text: tokens.concat(),
        degenerate: all_zero && !tokens.is_empty(),
        tokens,
    })
}
