//! The conflict-detection pipeline: recognition filter, paired
//! textual/visual querying, and the accuracy / flip-rate / conflict-rate
//! metric suite.
//!
//! The same question is asked twice per item. The visual query attaches the
//! image and never mentions the entity by name; the textual query replaces
//! the image with an indicator sentence naming the entity. Disagreement
//! between the two answers on recognized items is the flip signal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{default_surface_forms, generate, mc_logits, Backend, BackendError};
use crate::datamodel::{
    validate_item, ConflictReport, McqaItem, Modality, OptionDistribution, OptionKey,
    SampleRecord, SkippedItem,
};
use crate::parallel::map_bounded;

/// Recognition prompt. The harness needs a fixed wording for reproducibility;
/// this one asks for the bare name so the reply can be matched directly.
pub const RECOGNITION_PROMPT: &str =
    "What is the name of the main subject shown in this image? Answer with the name only.";

/// Instruction appended after the option block of every answer query.
pub const ANSWER_INSTRUCTION: &str =
    "Answer with the option's letter from the given choices directly.";

/// The indicator sentence that replaces the image in textual queries.
pub fn indicator_sentence(entity_name: &str) -> String {
    format!("This is an image of {entity_name}.")
}

/// Prompt wordings used by the pipeline. Defaults are the fixed constants
/// above; deployments can override them through config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub recognition: String,
    pub answer_instruction: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            recognition: RECOGNITION_PROMPT.to_string(),
            answer_instruction: ANSWER_INSTRUCTION.to_string(),
        }
    }
}

/// The labeled option block shared verbatim by both modalities' prompts.
pub fn option_block(item: &McqaItem) -> String {
    let mut block = String::new();
    for key in OptionKey::ALL {
        block.push_str(key.as_str());
        block.push_str(". ");
        block.push_str(item.option_text(key));
        block.push('\n');
    }
    block
}

fn mcqa_prompt(question: &str, item: &McqaItem, templates: &PromptTemplates) -> String {
    format!(
        "{question}\n{}{}",
        option_block(item),
        templates.answer_instruction
    )
}

/// Textual-modality prompt: indicator sentence, question, labeled options,
/// answer-letter instruction.
pub fn build_textual_prompt(item: &McqaItem, templates: &PromptTemplates) -> String {
    build_textual_prompt_for_question(item, &item.question, templates)
}

/// Textual prompt with a substitute question (used by prompt-disturbance
/// sampling, which rephrases the question but keeps the option block).
pub fn build_textual_prompt_for_question(
    item: &McqaItem,
    question: &str,
    templates: &PromptTemplates,
) -> String {
    let question = format!("{} {question}", indicator_sentence(&item.entity_name));
    mcqa_prompt(&question, item, templates)
}

/// Visual-modality prompt: question, labeled options, instruction — no
/// entity name anywhere in the text. The image reference rides alongside.
pub fn build_visual_prompt(item: &McqaItem, templates: &PromptTemplates) -> (String, String) {
    build_visual_prompt_for_question(item, &item.question, templates)
}

pub fn build_visual_prompt_for_question(
    item: &McqaItem,
    question: &str,
    templates: &PromptTemplates,
) -> (String, String) {
    (mcqa_prompt(question, item, templates), item.image_ref.clone())
}

/// Free-form visual context for elicitation: the bare question with the
/// image, no options.
pub fn build_visual_free_prompt(item: &McqaItem) -> (String, String) {
    (item.question.clone(), item.image_ref.clone())
}

/// Free-form textual context for elicitation: indicator sentence plus the
/// bare question.
pub fn build_textual_free_prompt(item: &McqaItem) -> String {
    format!("{} {}", indicator_sentence(&item.entity_name), item.question)
}

/// Which rule matched the recognition reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchRule {
    Exact,
    Normalized,
    Alias,
}

/// Outcome of the recognition filter for one item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecognitionResult {
    pub predicted_entity: String,
    pub matched: bool,
    /// Present iff matched; rules are tried in fixed order
    /// exact -> normalized -> alias.
    pub match_rule: Option<MatchRule>,
}

/// Matching normalization: lowercase, collapse whitespace, strip a leading
/// article and trailing sentence punctuation.
pub fn normalize_entity(s: &str) -> String {
    let collapsed = s
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    let trimmed = collapsed.trim_end_matches(['.', '!', '?', ',']);
    for article in ["the ", "a ", "an "] {
        if let Some(rest) = trimmed.strip_prefix(article) {
            return rest.to_string();
        }
    }
    trimmed.to_string()
}

/// Match a recognition reply against the entity name and optional aliases.
pub fn match_entity(reply: &str, entity_name: &str, aliases: &[String]) -> RecognitionResult {
    let rule = if reply == entity_name {
        Some(MatchRule::Exact)
    } else if normalize_entity(reply) == normalize_entity(entity_name) {
        Some(MatchRule::Normalized)
    } else if aliases
        .iter()
        .any(|alias| normalize_entity(reply) == normalize_entity(alias))
    {
        Some(MatchRule::Alias)
    } else {
        None
    };
    RecognitionResult {
        predicted_entity: reply.to_string(),
        matched: rule.is_some(),
        match_rule: rule,
    }
}

/// Ask the backend to name the entity in the item's image and match the
/// reply. Requires image support.
pub fn recognize(
    item: &McqaItem,
    backend: &dyn Backend,
    templates: &PromptTemplates,
) -> Result<RecognitionResult, BackendError> {
    let reply = generate(
        backend,
        &templates.recognition,
        Some(&item.image_ref),
        false,
        None,
    )?;
    Ok(match_entity(reply.trim(), &item.entity_name, &item.aliases))
}

/// Query one modality's answer: option logprobs at the first answer token,
/// argmax with lowest-ordinal tie-break.
pub fn answer(
    item: &McqaItem,
    backend: &dyn Backend,
    modality: Modality,
    templates: &PromptTemplates,
) -> Result<(OptionKey, OptionDistribution), BackendError> {
    let forms = default_surface_forms();
    let dist = match modality {
        Modality::Textual => {
            let prompt = build_textual_prompt(item, templates);
            mc_logits(backend, &prompt, None, &forms)?
        }
        Modality::Visual => {
            let (prompt, image_ref) = build_visual_prompt(item, templates);
            mc_logits(backend, &prompt, Some(&image_ref), &forms)?
        }
    };
    Ok((dist.argmax(), dist))
}

#[derive(Debug, Clone)]
pub struct DetectorConfig {
    pub parallelism: usize,
    /// Fail the run when more than this fraction of items had to be skipped
    /// due to backend failures; partial outages must not silently bias the
    /// flip rate.
    pub max_skip_fraction: f64,
    pub templates: PromptTemplates,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            parallelism: 1,
            max_skip_fraction: 0.1,
            templates: PromptTemplates::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid items: {}", details.join("; "))]
    InvalidItems { details: Vec<String> },
    #[error("{skipped} of {total} items skipped, above the configured maximum fraction {max_fraction}")]
    TooManySkipped {
        skipped: usize,
        total: usize,
        max_fraction: f64,
    },
}

fn process_item(
    item: &McqaItem,
    backend: &dyn Backend,
    templates: &PromptTemplates,
) -> Result<SampleRecord, SkippedItem> {
    let skip = |err: BackendError| SkippedItem {
        item_id: item.id.clone(),
        error: err.to_string(),
    };
    let recognition = recognize(item, backend, templates).map_err(&skip)?;
    let textual = answer(item, backend, Modality::Textual, templates).map_err(&skip)?;
    let visual = answer(item, backend, Modality::Visual, templates).map_err(&skip)?;
    Ok(SampleRecord::new(
        item,
        recognition.matched,
        recognition.predicted_entity,
        textual,
        visual,
    ))
}

/// Run the full pipeline: recognize, answer in both modalities, aggregate.
///
/// Per-item backend failures mark the record skipped and excluded from all
/// denominators; the run fails when the skipped fraction exceeds the
/// configured maximum.
pub fn detect(
    items: &[McqaItem],
    backend: &dyn Backend,
    config: &DetectorConfig,
) -> Result<ConflictReport, DetectError> {
    if items.is_empty() {
        return Err(DetectError::EmptyDataset);
    }
    let invalid: Vec<String> = items
        .iter()
        .filter_map(|item| {
            let violations = validate_item(item);
            if violations.is_empty() {
                None
            } else {
                Some(format!(
                    "{}: {}",
                    item.id,
                    violations
                        .iter()
                        .map(ToString::to_string)
                        .collect::<Vec<_>>()
                        .join(", ")
                ))
            }
        })
        .collect();
    if !invalid.is_empty() {
        return Err(DetectError::InvalidItems { details: invalid });
    }

    let results = map_bounded(config.parallelism, items, |item| {
        process_item(item, backend, &config.templates)
    });

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for result in results {
        match result {
            Ok(record) => records.push(record),
            Err(skip) => skipped.push(skip),
        }
    }

    if (skipped.len() as f64) > config.max_skip_fraction * items.len() as f64 {
        return Err(DetectError::TooManySkipped {
            skipped: skipped.len(),
            total: items.len(),
            max_fraction: config.max_skip_fraction,
        });
    }
    Ok(ConflictReport::from_records(records, skipped))
}
