//! Dynamic contrastive decoding over option logits.
//!
//! Each modality's answer confidence scales its own log-probabilities; the
//! scaled logits of the less confident modality are subtracted from those of
//! the more confident one, and the answer is the argmax of the difference.
//! Confidence picks the branch, but the subtraction keeps the final choice
//! from relying on confidence alone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::confidence::option_confidence;
use crate::datamodel::{
    argmax_option, ConflictReport, McqaItem, OptionDistribution, OptionKey, SkippedItem,
};
use crate::detector::{detect, DetectError, DetectorConfig};

/// Which modality's scaled logits were kept (minuend of the subtraction).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    TextualDominant,
    VisualDominant,
}

/// Decoding outcome for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcdResult {
    pub answer: OptionKey,
    /// `TextualDominant` iff the textual confidence is strictly larger;
    /// equality takes the visual branch.
    pub branch: Branch,
    pub textual_confidence: f64,
    pub visual_confidence: f64,
    pub contrast_scores: BTreeMap<OptionKey, f64>,
}

/// Multiply each option log-probability by the answer confidence.
/// `confidence` lies in `(0, 1]` (a four-way softmax maximum is at least 0.25).
pub fn scaled_logits(confidence: f64, dist: &OptionDistribution) -> BTreeMap<OptionKey, f64> {
    debug_assert!(confidence > 0.0 && confidence <= 1.0);
    OptionKey::ALL
        .iter()
        .map(|&k| (k, confidence * dist.logp(k)))
        .collect()
}

/// Apply dynamic contrastive decoding to one item's pair of distributions.
pub fn dcd_select(textual: &OptionDistribution, visual: &OptionDistribution) -> DcdResult {
    let textual_confidence = option_confidence(textual).max_value();
    let visual_confidence = option_confidence(visual).max_value();

    let scaled_textual = scaled_logits(textual_confidence, textual);
    let scaled_visual = scaled_logits(visual_confidence, visual);

    let (branch, contrast_scores): (Branch, BTreeMap<OptionKey, f64>) =
        if textual_confidence > visual_confidence {
            (
                Branch::TextualDominant,
                OptionKey::ALL
                    .iter()
                    .map(|&k| (k, scaled_textual[&k] - scaled_visual[&k]))
                    .collect(),
            )
        } else {
            (
                Branch::VisualDominant,
                OptionKey::ALL
                    .iter()
                    .map(|&k| (k, scaled_visual[&k] - scaled_textual[&k]))
                    .collect(),
            )
        };

    DcdResult {
        answer: argmax_option(|k| contrast_scores[&k]),
        branch,
        textual_confidence,
        visual_confidence,
        contrast_scores,
    }
}

/// Decoding outcome and correctness for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcdOutcome {
    pub item_id: String,
    pub recognized: bool,
    pub correct: bool,
    pub result: DcdResult,
}

/// Accuracy of decoded answers over all items and over the recognized subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcdReport {
    pub n_total: usize,
    pub n_recognized: usize,
    pub n_skipped: usize,
    pub acc: f64,
    pub racc: f64,
    pub outcomes: Vec<DcdOutcome>,
    pub skipped: Vec<SkippedItem>,
}

/// Run decoding over the distributions already recorded in a conflict
/// report. No backend queries are made.
pub fn dcd_from_report(report: &ConflictReport) -> DcdReport {
    let outcomes: Vec<DcdOutcome> = report
        .records
        .iter()
        .map(|record| {
            let result = dcd_select(&record.textual_dist, &record.visual_dist);
            DcdOutcome {
                item_id: record.item_id.clone(),
                recognized: record.recognized,
                correct: result.answer == record.gold,
                result,
            }
        })
        .collect();

    let n_total = outcomes.len();
    let correct = outcomes.iter().filter(|o| o.correct).count();
    let recognized: Vec<&DcdOutcome> = outcomes.iter().filter(|o| o.recognized).collect();
    let n_recognized = recognized.len();
    let r_correct = recognized.iter().filter(|o| o.correct).count();

    DcdReport {
        n_total,
        n_recognized,
        n_skipped: report.n_skipped,
        acc: if n_total == 0 { 0.0 } else { correct as f64 / n_total as f64 },
        racc: if n_recognized == 0 {
            0.0
        } else {
            r_correct as f64 / n_recognized as f64
        },
        outcomes,
        skipped: report.skipped.clone(),
    }
}

/// Query fresh distributions for every item and decode. Runs the full
/// detection pipeline (including recognition, which the recognized-subset
/// accuracy needs), with the detector's skip policy.
pub fn dcd_run(
    items: &[McqaItem],
    backend: &dyn crate::backend::Backend,
    config: &DetectorConfig,
) -> Result<(ConflictReport, DcdReport), DetectError> {
    let report = detect(items, backend, config)?;
    let dcd_report = dcd_from_report(&report);
    Ok((report, dcd_report))
}
