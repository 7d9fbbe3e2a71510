//! Prompt-based conflict mitigation for backends that expose no logits:
//! re-query the visual input with a system prompt that either reminds the
//! model of potential cross-modality conflicts or presents both prior
//! answers, then score against the visual-answer baseline.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{default_surface_forms, mc_logits, Backend, BackendError};
use crate::datamodel::{
    ConflictReport, McqaItem, OptionDistribution, OptionKey, SkippedItem,
};
use crate::detector::{build_visual_prompt, PromptTemplates};
use crate::parallel::map_bounded;

/// System prompt reminding the model that its modalities may disagree.
pub const REMINDER_PROMPT: &str = "You are an expert at question answering. Given the question, please output the answer. No explanation and further question. Be aware that your visual memory might differ from your textual memory, causing a conflict in your knowledge.";

/// Leading part of the answer-conflict system prompt; the two memories are
/// appended by [`answer_conflict_system_prompt`].
pub const ANSWER_CONFLICT_PREAMBLE: &str = "You are an expert at question answering. Given the question, please output the answer. No explanation and further question. Be aware that your visual memory might differ from your text memory, causing a conflict in your knowledge.";

/// The full answer-conflict system prompt with both memories filled in.
/// Memories are the option texts, not bare letters — letters carry no
/// knowledge content.
pub fn answer_conflict_system_prompt(textual_memory: &str, visual_memory: &str) -> String {
    format!(
        "{ANSWER_CONFLICT_PREAMBLE} Your text memory is: {textual_memory} and your visual memory is: {visual_memory}."
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Reminder,
    AnswerConflict,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::Reminder => f.write_str("reminder"),
            Strategy::AnswerConflict => f.write_str("answer_conflict"),
        }
    }
}

#[derive(Debug, Error)]
pub enum MitigateError {
    #[error("prior report has no records")]
    EmptyReport,
    #[error("item {id} appears in the report but not in the dataset")]
    MissingItem { id: String },
    #[error("{skipped} of {total} re-queries failed, above the configured maximum fraction {max_fraction}")]
    TooManySkipped {
        skipped: usize,
        total: usize,
        max_fraction: f64,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Re-issue the visual query with the reminder system prompt prepended.
pub fn reminder_requery(
    item: &McqaItem,
    backend: &dyn Backend,
    templates: &PromptTemplates,
) -> Result<(OptionKey, OptionDistribution), BackendError> {
    let (visual_prompt, image_ref) = build_visual_prompt(item, templates);
    let prompt = format!("{REMINDER_PROMPT}\n{visual_prompt}");
    let dist = mc_logits(backend, &prompt, Some(&image_ref), &default_surface_forms())?;
    Ok((dist.argmax(), dist))
}

/// Re-issue the visual query presenting both prior answers. When the two
/// answers already agree there is no conflict to resolve; the agreed answer
/// is returned without a query.
pub fn answer_conflict_requery(
    item: &McqaItem,
    textual_answer: OptionKey,
    visual_answer: OptionKey,
    backend: &dyn Backend,
    templates: &PromptTemplates,
) -> Result<(OptionKey, Option<OptionDistribution>), BackendError> {
    if textual_answer == visual_answer {
        return Ok((textual_answer, None));
    }
    let system = answer_conflict_system_prompt(
        item.option_text(textual_answer),
        item.option_text(visual_answer),
    );
    let (visual_prompt, image_ref) = build_visual_prompt(item, templates);
    let prompt = format!("{system}\n{visual_prompt}");
    let dist = mc_logits(backend, &prompt, Some(&image_ref), &default_surface_forms())?;
    Ok((dist.argmax(), Some(dist)))
}

#[derive(Debug, Clone)]
pub struct MitigateConfig {
    pub parallelism: usize,
    pub max_skip_fraction: f64,
    /// Re-query every item instead of only flipped ones (ablation flag;
    /// strategies target detected conflicts by default).
    pub requery_all: bool,
    pub templates: PromptTemplates,
}

impl Default for MitigateConfig {
    fn default() -> Self {
        MitigateConfig {
            parallelism: 1,
            max_skip_fraction: 0.1,
            requery_all: false,
            templates: PromptTemplates::default(),
        }
    }
}

/// One item's answer under a mitigation strategy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyAnswer {
    pub item_id: String,
    pub answer: OptionKey,
    pub correct: bool,
    pub recognized: bool,
    /// False when the prior answer was carried over without a re-query.
    pub requeried: bool,
}

/// Strategy accuracies and signed deltas against the visual-answer baseline
/// of the prior report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: Strategy,
    pub n_total: usize,
    pub n_recognized: usize,
    pub n_skipped: usize,
    pub acc: f64,
    pub racc: f64,
    pub baseline_acc_visual: f64,
    pub baseline_racc_visual: f64,
    pub delta_acc: f64,
    pub delta_racc: f64,
    pub answers: Vec<StrategyAnswer>,
    pub skipped: Vec<SkippedItem>,
}

/// Evaluate a strategy against a prior detection run.
///
/// Non-flipped items keep their agreed answer (carried over, comparable with
/// the visual baseline); flipped items are re-queried. Items whose re-query
/// fails are skipped under the same budget policy as detection.
pub fn evaluate_strategy(
    items: &[McqaItem],
    prior: &ConflictReport,
    backend: &dyn Backend,
    strategy: Strategy,
    config: &MitigateConfig,
) -> Result<StrategyReport, MitigateError> {
    if prior.records.is_empty() {
        return Err(MitigateError::EmptyReport);
    }
    let by_id: HashMap<&str, &McqaItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    for record in &prior.records {
        if !by_id.contains_key(record.item_id.as_str()) {
            return Err(MitigateError::MissingItem {
                id: record.item_id.clone(),
            });
        }
    }

    let results = map_bounded(config.parallelism, &prior.records, |record| {
        let item = by_id[record.item_id.as_str()];
        let requery = record.flipped || config.requery_all;
        let answer = if !requery {
            Ok((record.visual_answer, false))
        } else {
            match strategy {
                Strategy::Reminder => {
                    reminder_requery(item, backend, &config.templates).map(|(k, _)| (k, true))
                }
                Strategy::AnswerConflict => answer_conflict_requery(
                    item,
                    record.textual_answer,
                    record.visual_answer,
                    backend,
                    &config.templates,
                )
                .map(|(k, dist)| (k, dist.is_some())),
            }
        };
        match answer {
            Ok((answer, requeried)) => Ok(StrategyAnswer {
                item_id: record.item_id.clone(),
                answer,
                correct: answer == record.gold,
                recognized: record.recognized,
                requeried,
            }),
            Err(err) => Err(SkippedItem {
                item_id: record.item_id.clone(),
                error: err.to_string(),
            }),
        }
    });

    let mut answers = Vec::new();
    let mut skipped = Vec::new();
    for result in results {
        match result {
            Ok(answer) => answers.push(answer),
            Err(skip) => skipped.push(skip),
        }
    }
    if (skipped.len() as f64) > config.max_skip_fraction * prior.records.len() as f64 {
        return Err(MitigateError::TooManySkipped {
            skipped: skipped.len(),
            total: prior.records.len(),
            max_fraction: config.max_skip_fraction,
        });
    }

    answers.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    skipped.sort_by(|a, b| a.item_id.cmp(&b.item_id));

    let n_total = answers.len();
    let correct = answers.iter().filter(|a| a.correct).count();
    let recognized: Vec<&StrategyAnswer> = answers.iter().filter(|a| a.recognized).collect();
    let n_recognized = recognized.len();
    let r_correct = recognized.iter().filter(|a| a.correct).count();

    let acc = if n_total == 0 { 0.0 } else { correct as f64 / n_total as f64 };
    let racc = if n_recognized == 0 {
        0.0
    } else {
        r_correct as f64 / n_recognized as f64
    };

    Ok(StrategyReport {
        strategy,
        n_total,
        n_recognized,
        n_skipped: skipped.len(),
        acc,
        racc,
        baseline_acc_visual: prior.acc_visual,
        baseline_racc_visual: prior.racc_visual,
        delta_acc: acc - prior.acc_visual,
        delta_racc: racc - prior.racc_visual,
        answers,
        skipped,
    })
}
