//! Per-sample records and the aggregate conflict report.

use serde::{Deserialize, Serialize};

use super::{McqaItem, OptionDistribution, OptionKey};

/// Result of evaluating one item in both modalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub item_id: String,
    pub gold: OptionKey,
    /// Whether the model named the depicted entity correctly.
    pub recognized: bool,
    pub predicted_entity: String,
    pub textual_answer: OptionKey,
    pub visual_answer: OptionKey,
    pub textual_dist: OptionDistribution,
    pub visual_dist: OptionDistribution,
    pub textual_correct: bool,
    pub visual_correct: bool,
    /// True iff the two modalities disagree.
    pub flipped: bool,
}

impl SampleRecord {
    /// Build a record from query outcomes; correctness and the flip flag are
    /// derived here so their invariants hold by construction.
    pub fn new(
        item: &McqaItem,
        recognized: bool,
        predicted_entity: String,
        textual: (OptionKey, OptionDistribution),
        visual: (OptionKey, OptionDistribution),
    ) -> Self {
        let (textual_answer, textual_dist) = textual;
        let (visual_answer, visual_dist) = visual;
        SampleRecord {
            item_id: item.id.clone(),
            gold: item.gold,
            recognized,
            predicted_entity,
            textual_answer,
            visual_answer,
            textual_dist,
            visual_dist,
            textual_correct: textual_answer == item.gold,
            visual_correct: visual_answer == item.gold,
            flipped: textual_answer != visual_answer,
        }
    }
}

/// An item excluded from all denominators because its backend queries failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedItem {
    pub item_id: String,
    pub error: String,
}

/// The lower bound on the knowledge-conflict rate: the flip rate minus the
/// recognized-accuracy gap between modalities. Flips explained by the
/// performance gap are discounted; what remains must be genuine conflicts.
pub fn conflict_rate_lower_bound(racc_textual: f64, racc_visual: f64, flip_rate: f64) -> f64 {
    flip_rate - (racc_textual - racc_visual)
}

/// Aggregate metrics over a paired-query run plus the per-sample records.
///
/// Accuracies (`acc_*`) cover every evaluated item; recognized accuracies
/// (`racc_*`), the flip rate, and the conflict-rate bound cover only the
/// recognized subset. `conflict_rate_lb = flip_rate - delta_acc` holds
/// exactly for every constructed report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub n_total: usize,
    pub n_recognized: usize,
    pub n_skipped: usize,
    pub acc_textual: f64,
    pub acc_visual: f64,
    pub racc_textual: f64,
    pub racc_visual: f64,
    /// Fraction of recognized samples whose answers disagree across modalities.
    pub flip_rate: f64,
    /// `racc_textual - racc_visual`.
    pub delta_acc: f64,
    /// `flip_rate - delta_acc`.
    pub conflict_rate_lb: f64,
    pub records: Vec<SampleRecord>,
    pub skipped: Vec<SkippedItem>,
}

fn fraction(numerator: usize, denominator: usize) -> f64 {
    if denominator == 0 {
        0.0
    } else {
        numerator as f64 / denominator as f64
    }
}

impl ConflictReport {
    /// Fold records into a report. Records are ordered by item id so equal
    /// inputs produce byte-identical reports regardless of completion order.
    pub fn from_records(mut records: Vec<SampleRecord>, mut skipped: Vec<SkippedItem>) -> Self {
        records.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        skipped.sort_by(|a, b| a.item_id.cmp(&b.item_id));

        let n_total = records.len();
        let textual_correct = records.iter().filter(|r| r.textual_correct).count();
        let visual_correct = records.iter().filter(|r| r.visual_correct).count();

        let recognized: Vec<&SampleRecord> = records.iter().filter(|r| r.recognized).collect();
        let n_recognized = recognized.len();
        let r_textual_correct = recognized.iter().filter(|r| r.textual_correct).count();
        let r_visual_correct = recognized.iter().filter(|r| r.visual_correct).count();
        let flips = recognized.iter().filter(|r| r.flipped).count();

        let racc_textual = fraction(r_textual_correct, n_recognized);
        let racc_visual = fraction(r_visual_correct, n_recognized);
        let flip_rate = fraction(flips, n_recognized);
        let delta_acc = racc_textual - racc_visual;

        ConflictReport {
            n_total,
            n_recognized,
            n_skipped: skipped.len(),
            acc_textual: fraction(textual_correct, n_total),
            acc_visual: fraction(visual_correct, n_total),
            racc_textual,
            racc_visual,
            flip_rate,
            delta_acc,
            conflict_rate_lb: conflict_rate_lower_bound(racc_textual, racc_visual, flip_rate),
            records,
            skipped,
        }
    }
}
