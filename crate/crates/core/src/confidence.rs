//! Option-confidence extraction and confidence-based answer selection.
//!
//! Confidence is the softmax over the four option-token log-probabilities,
//! which equals renormalizing the option probabilities by their sum. Three
//! selectors pick between the two modalities' answers: highest confidence,
//! largest confidence shift, and smallest confidence variance under
//! disturbance. These implement the strategies' definitional contracts; none
//! of them is claimed to recover correctness.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    default_surface_forms, generate, mc_logits_opts, Backend, BackendError,
};
use crate::datamodel::{argmax_option, Modality, OptionDistribution, OptionKey};
use crate::detector::{
    answer, build_textual_prompt_for_question, build_visual_prompt_for_question, PromptTemplates,
};
use crate::parallel::map_bounded;

/// Default instruction for generating prompt disturbances.
pub const REPHRASE_PROMPT: &str = "Rephrase the following question. Keep its meaning unchanged and output only the rephrased question.";

/// Renormalized option probabilities; values sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceVector {
    pub c: std::collections::BTreeMap<OptionKey, f64>,
}

impl ConfidenceVector {
    pub fn get(&self, key: OptionKey) -> f64 {
        self.c.get(&key).copied().unwrap_or(0.0)
    }

    pub fn argmax(&self) -> OptionKey {
        argmax_option(|k| self.get(k))
    }

    /// The confidence of the most confident option.
    pub fn max_value(&self) -> f64 {
        self.get(self.argmax())
    }
}

/// Softmax over the four option log-probabilities.
///
/// Since the logs are logs of probabilities, this equals dividing each
/// probability by the four-way sum; scaling all probabilities by a positive
/// constant leaves the result unchanged.
pub fn option_confidence(dist: &OptionDistribution) -> ConfidenceVector {
    let max = OptionKey::ALL
        .iter()
        .map(|&k| dist.logp(k))
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = OptionKey::ALL
        .iter()
        .map(|&k| (dist.logp(k) - max).exp())
        .collect();
    let sum: f64 = exps.iter().sum();
    ConfidenceVector {
        c: OptionKey::ALL
            .iter()
            .zip(exps.iter())
            .map(|(&k, &e)| (k, e / sum))
            .collect(),
    }
}

/// A selector's decision: the chosen answer and the modality it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub answer: OptionKey,
    pub modality: Modality,
}

/// Pick the answer whose own-modality confidence is highest; ties go to the
/// textual answer.
pub fn max_confidence_select(
    textual: &ConfidenceVector,
    visual: &ConfidenceVector,
    textual_answer: OptionKey,
    visual_answer: OptionKey,
) -> Selection {
    if textual.get(textual_answer) >= visual.get(visual_answer) {
        Selection {
            answer: textual_answer,
            modality: Modality::Textual,
        }
    } else {
        Selection {
            answer: visual_answer,
            modality: Modality::Visual,
        }
    }
}

/// Pick the answer of the modality with the larger confidence shift between
/// its own answer and the other modality's answer; ties go to textual.
pub fn max_confidence_shift_select(
    textual: &ConfidenceVector,
    visual: &ConfidenceVector,
    textual_answer: OptionKey,
    visual_answer: OptionKey,
) -> Selection {
    let shift_textual = textual.get(textual_answer) - textual.get(visual_answer);
    let shift_visual = visual.get(visual_answer) - visual.get(textual_answer);
    if shift_textual >= shift_visual {
        Selection {
            answer: textual_answer,
            modality: Modality::Textual,
        }
    } else {
        Selection {
            answer: visual_answer,
            modality: Modality::Visual,
        }
    }
}

/// How disturbance samples are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disturbance {
    /// Re-query with generator-rephrased questions.
    PromptRephrase,
    /// Re-query in the backend's stochastic mode (declared internal noise).
    Stochastic,
}

/// Confidence samples for one answer key under disturbance, with their
/// population variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub samples: Vec<f64>,
    pub variance: f64,
    pub disturbance: Disturbance,
}

impl VarianceEstimate {
    pub fn new(samples: Vec<f64>, disturbance: Disturbance) -> Self {
        let variance = population_variance(&samples);
        VarianceEstimate {
            samples,
            variance,
            disturbance,
        }
    }
}

/// Population (not sample) variance: the draw count is fixed by design, so
/// matching the definition matters more than unbiasedness. Identical samples
/// short-circuit to exactly zero so the constant case is not subject to
/// summation rounding.
pub fn population_variance(samples: &[f64]) -> f64 {
    if samples.is_empty() || samples.windows(2).all(|w| w[0] == w[1]) {
        return 0.0;
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / samples.len() as f64
}

#[derive(Debug, Clone)]
pub struct MinVarianceConfig {
    pub n_samples: usize,
    pub disturbance: Disturbance,
    pub seed: u64,
    /// Track the gold answer's confidence instead of each modality's own
    /// answer. Off by default: the selector contract is defined over the
    /// model's own answers.
    pub track_gold: bool,
    pub rephrase_prompt: String,
    pub parallelism: usize,
}

impl MinVarianceConfig {
    pub fn new(disturbance: Disturbance, seed: u64) -> Self {
        MinVarianceConfig {
            n_samples: 10,
            disturbance,
            seed,
            track_gold: false,
            rephrase_prompt: REPHRASE_PROMPT.to_string(),
            parallelism: 1,
        }
    }
}

/// Outcome of the min-variance selector for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinVarianceOutcome {
    pub answer: OptionKey,
    pub modality: Modality,
    pub textual_answer: OptionKey,
    pub visual_answer: OptionKey,
    pub textual_variance: VarianceEstimate,
    pub visual_variance: VarianceEstimate,
}

#[derive(Debug, Error)]
pub enum ConfidenceError {
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// One disturbed confidence sample of `tracked` in the given modality.
fn disturbed_confidence(
    item: &crate::datamodel::McqaItem,
    backend: &dyn Backend,
    templates: &PromptTemplates,
    config: &MinVarianceConfig,
    modality: Modality,
    tracked: OptionKey,
    sample_index: usize,
) -> Result<f64, BackendError> {
    let forms = default_surface_forms();
    let seed = config.seed.wrapping_add(sample_index as u64);
    let dist = match config.disturbance {
        Disturbance::Stochastic => {
            let (prompt, image_ref) = match modality {
                Modality::Textual => (
                    build_textual_prompt_for_question(item, &item.question, templates),
                    None,
                ),
                Modality::Visual => {
                    let (p, i) = build_visual_prompt_for_question(item, &item.question, templates);
                    (p, Some(i))
                }
            };
            mc_logits_opts(
                backend,
                &prompt,
                image_ref.as_deref(),
                &forms,
                true,
                Some(seed),
            )?
        }
        Disturbance::PromptRephrase => {
            let rephrased = generate(
                backend,
                &format!("{}\n{}", config.rephrase_prompt, item.question),
                None,
                false,
                Some(seed),
            )?;
            let rephrased = rephrased.trim();
            let (prompt, image_ref) = match modality {
                Modality::Textual => (
                    build_textual_prompt_for_question(item, rephrased, templates),
                    None,
                ),
                Modality::Visual => {
                    let (p, i) = build_visual_prompt_for_question(item, rephrased, templates);
                    (p, Some(i))
                }
            };
            mc_logits_opts(backend, &prompt, image_ref.as_deref(), &forms, false, None)?
        }
    };
    Ok(option_confidence(&dist).get(tracked))
}

/// The min-variance selector: collect disturbed confidence samples of each
/// modality's answer and return the answer of the modality whose confidence
/// varies least. Ties go to textual.
///
/// Stochastic disturbance requires `supports_stochastic_mode` and fails
/// before any query on incapable backends.
pub fn min_variance_select(
    item: &crate::datamodel::McqaItem,
    backend: &dyn Backend,
    templates: &PromptTemplates,
    config: &MinVarianceConfig,
) -> Result<MinVarianceOutcome, ConfidenceError> {
    if config.disturbance == Disturbance::Stochastic
        && !backend.capabilities().supports_stochastic_mode
    {
        return Err(BackendError::CapabilityMissing {
            capability: "stochastic mode",
        }
        .into());
    }

    let (textual_answer, _) = answer(item, backend, Modality::Textual, templates)?;
    let (visual_answer, _) = answer(item, backend, Modality::Visual, templates)?;
    let tracked_textual = if config.track_gold { item.gold } else { textual_answer };
    let tracked_visual = if config.track_gold { item.gold } else { visual_answer };

    let indices: Vec<usize> = (0..config.n_samples).collect();
    let collect = |modality: Modality, tracked: OptionKey| -> Result<Vec<f64>, BackendError> {
        map_bounded(config.parallelism, &indices, |&i| {
            disturbed_confidence(item, backend, templates, config, modality, tracked, i)
        })
        .into_iter()
        .collect()
    };

    let textual_variance = VarianceEstimate::new(
        collect(Modality::Textual, tracked_textual)?,
        config.disturbance,
    );
    let visual_variance = VarianceEstimate::new(
        collect(Modality::Visual, tracked_visual)?,
        config.disturbance,
    );

    let (answer, modality) = if textual_variance.variance <= visual_variance.variance {
        (textual_answer, Modality::Textual)
    } else {
        (visual_answer, Modality::Visual)
    };
    Ok(MinVarianceOutcome {
        answer,
        modality,
        textual_answer,
        visual_answer,
        textual_variance,
        visual_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{
        BackendCapabilities, RequestMode, SyntheticBackend, SyntheticResponse, SyntheticRule,
    };
    use crate::datamodel::{McqaItem, SourceDataset};
    use std::collections::BTreeMap;

    fn dist(probs: [f64; 4]) -> OptionDistribution {
        OptionDistribution::from_probabilities(probs, Modality::Textual)
    }

    #[test]
    fn uniform_probabilities_give_uniform_confidence() {
        let c = option_confidence(&dist([0.25; 4]));
        for key in OptionKey::ALL {
            assert!((c.get(key) - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn confidence_is_renormalization() {
        // Oracle: divide by the sum 0.4.
        let c = option_confidence(&dist([0.2, 0.1, 0.05, 0.05]));
        assert!((c.get(OptionKey::A) - 0.5).abs() < 1e-12);
        assert!((c.get(OptionKey::B) - 0.25).abs() < 1e-12);
        assert!((c.get(OptionKey::C) - 0.125).abs() < 1e-12);
        assert!((c.get(OptionKey::D) - 0.125).abs() < 1e-12);
        let sum: f64 = OptionKey::ALL.iter().map(|&k| c.get(k)).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn confidence_invariant_under_scaling() {
        let base = option_confidence(&dist([0.2, 0.1, 0.05, 0.05]));
        let scaled = option_confidence(&dist([0.6, 0.3, 0.15, 0.15]));
        for key in OptionKey::ALL {
            assert!((base.get(key) - scaled.get(key)).abs() < 1e-9);
        }
    }

    #[test]
    fn confidence_argmax_matches_raw_argmax() {
        let d = dist([0.1, 0.3, 0.25, 0.05]);
        assert_eq!(option_confidence(&d).argmax(), d.argmax());
    }

    #[test]
    fn max_confidence_selector_rules() {
        let high = option_confidence(&dist([0.9, 0.04, 0.03, 0.03]));
        let low = option_confidence(&dist([0.4, 0.3, 0.2, 0.1]));

        let s = max_confidence_select(&high, &low, OptionKey::A, OptionKey::B);
        assert_eq!(s.answer, OptionKey::A);
        assert_eq!(s.modality, Modality::Textual);

        let s = max_confidence_select(&low, &high, OptionKey::A, OptionKey::A);
        assert_eq!(s.modality, Modality::Visual);

        // Exact tie: textual wins.
        let s = max_confidence_select(&high, &high, OptionKey::A, OptionKey::A);
        assert_eq!(s.modality, Modality::Textual);
    }

    #[test]
    fn shift_selector_rules() {
        // Textual strongly separates its answer from the visual answer.
        let textual = option_confidence(&dist([0.8, 0.1, 0.05, 0.05]));
        let visual = option_confidence(&dist([0.3, 0.4, 0.2, 0.1]));
        let s = max_confidence_shift_select(&textual, &visual, OptionKey::A, OptionKey::B);
        // shift_t = 0.8 - 0.1 = 0.7; shift_v = 0.4 - 0.3 = 0.1.
        assert_eq!(s.answer, OptionKey::A);
        assert_eq!(s.modality, Modality::Textual);

        let s = max_confidence_shift_select(&visual, &textual, OptionKey::B, OptionKey::A);
        assert_eq!(s.modality, Modality::Visual);

        // Agreeing answers: both shifts are zero, textual wins the tie and
        // the common answer is returned.
        let s = max_confidence_shift_select(&textual, &visual, OptionKey::C, OptionKey::C);
        assert_eq!(s.answer, OptionKey::C);
        assert_eq!(s.modality, Modality::Textual);
    }

    #[test]
    fn population_variance_definition() {
        assert_eq!(population_variance(&[]), 0.0);
        assert_eq!(population_variance(&[0.3, 0.3, 0.3]), 0.0);
        // Oracle: mean 0.5, squared deviations 0.25 each -> 0.25.
        assert!((population_variance(&[0.0, 1.0]) - 0.25).abs() < 1e-15);
    }

    fn mcqa_item() -> McqaItem {
        let mut options = BTreeMap::new();
        options.insert(OptionKey::A, "Sydney".to_string());
        options.insert(OptionKey::B, "Melbourne".to_string());
        options.insert(OptionKey::C, "Brisbane".to_string());
        options.insert(OptionKey::D, "Perth".to_string());
        McqaItem {
            id: "v1".to_string(),
            question: "In which city is it located?".to_string(),
            entity_name: "Sydney Opera House".to_string(),
            image_ref: "img/opera.jpg".to_string(),
            options,
            gold: OptionKey::A,
            source_dataset: SourceDataset::Custom,
            gold_answer: None,
            aliases: Vec::new(),
        }
    }

    /// Noise only on the visual side: the textual answer must be selected.
    #[test]
    fn min_variance_prefers_the_stable_modality() {
        let backend = SyntheticBackend::new(BackendCapabilities::all())
            .rule(
                SyntheticRule::new(SyntheticResponse::NoisyOptionProbs {
                    probs: [0.2, 0.6, 0.1, 0.1],
                    sigma: 0.5,
                })
                .when_mode(RequestMode::OptionLogprobs)
                .when_image(true),
            )
            .rule(
                SyntheticRule::new(SyntheticResponse::OptionProbs {
                    probs: [0.7, 0.1, 0.1, 0.1],
                })
                .when_mode(RequestMode::OptionLogprobs)
                .when_image(false),
            );
        let config = MinVarianceConfig::new(Disturbance::Stochastic, 11);
        let out = min_variance_select(&mcqa_item(), &backend, &PromptTemplates::default(), &config)
            .unwrap();
        assert_eq!(out.modality, Modality::Textual);
        assert_eq!(out.answer, OptionKey::A);
        assert_eq!(out.textual_variance.variance, 0.0);
        assert!(out.visual_variance.variance > 0.0);
        assert_eq!(out.textual_variance.samples.len(), 10);
    }

    /// Constant confidences on both sides: variance 0 twice, textual wins.
    #[test]
    fn min_variance_tie_goes_textual() {
        let backend = SyntheticBackend::new(BackendCapabilities::all()).rule(
            SyntheticRule::new(SyntheticResponse::OptionProbs {
                probs: [0.4, 0.3, 0.2, 0.1],
            })
            .when_mode(RequestMode::OptionLogprobs),
        );
        let config = MinVarianceConfig::new(Disturbance::Stochastic, 0);
        let out = min_variance_select(&mcqa_item(), &backend, &PromptTemplates::default(), &config)
            .unwrap();
        assert_eq!(out.modality, Modality::Textual);
        assert_eq!(out.textual_variance.variance, 0.0);
        assert_eq!(out.visual_variance.variance, 0.0);
    }

    #[test]
    fn stochastic_disturbance_requires_capability() {
        let mut caps = BackendCapabilities::all();
        caps.supports_stochastic_mode = false;
        let backend = SyntheticBackend::new(caps);
        let config = MinVarianceConfig::new(Disturbance::Stochastic, 0);
        let err = min_variance_select(&mcqa_item(), &backend, &PromptTemplates::default(), &config)
            .unwrap_err();
        assert!(matches!(
            err,
            ConfidenceError::Backend(BackendError::CapabilityMissing { .. })
        ));
    }

    /// Rephrase disturbance rebuilds prompts around the rephrased question
    /// while keeping the option block.
    #[test]
    fn rephrase_disturbance_queries_rephrased_prompts() {
        let backend = SyntheticBackend::new(BackendCapabilities::all())
            .rule(
                SyntheticRule::new(SyntheticResponse::Text {
                    text: "Which city hosts it?".to_string(),
                })
                .when_mode(RequestMode::FreeText),
            )
            .rule(
                SyntheticRule::new(SyntheticResponse::OptionProbs {
                    probs: [0.7, 0.1, 0.1, 0.1],
                })
                .when_mode(RequestMode::OptionLogprobs)
                .when_prompt_contains("Which city hosts it?"),
            )
            .rule(
                SyntheticRule::new(SyntheticResponse::OptionProbs {
                    probs: [0.6, 0.2, 0.1, 0.1],
                })
                .when_mode(RequestMode::OptionLogprobs),
            );
        let config = MinVarianceConfig::new(Disturbance::PromptRephrase, 5);
        let out = min_variance_select(&mcqa_item(), &backend, &PromptTemplates::default(), &config)
            .unwrap();
        // Deterministic generator: identical rephrasings, zero variance both
        // sides, textual tie-win.
        assert_eq!(out.modality, Modality::Textual);
        assert!((out.textual_variance.samples[0] - 0.7).abs() < 1e-12);
    }
}
