//! Shared domain types and their validation.
//!
//! Everything downstream (detector, decoding strategies, reports) is built
//! from the types in this module. All of them are immutable value objects
//! after construction and safe to share across threads.

mod io;
mod report;
mod validate;

pub use io::{from_jsonl_str, read_jsonl, to_jsonl_string, write_jsonl, JsonlError};
pub use report::{conflict_rate_lower_bound, ConflictReport, SampleRecord, SkippedItem};
pub use validate::{normalize_option_text, validate_item, Violation};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Probabilities below this floor are clamped up before taking logs, so a
/// log-probability is always finite. Contrastive scoring and scaled-logit
/// decoding subtract and divide logs; `ln(0)` must never occur.
pub const PROB_FLOOR: f64 = 1e-12;

/// `ln(PROB_FLOOR)`, the lowest representable log-probability.
pub fn logp_floor() -> f64 {
    PROB_FLOOR.ln()
}

/// Clamp a raw probability into `[PROB_FLOOR, 1.0]`. NaN maps to the floor.
pub fn clamp_prob(p: f64) -> f64 {
    if p.is_nan() {
        PROB_FLOOR
    } else {
        p.clamp(PROB_FLOOR, 1.0)
    }
}

/// Clamp a raw log-probability into `[ln(PROB_FLOOR), 0.0]`. NaN maps to the floor.
pub fn clamp_logp(l: f64) -> f64 {
    if l.is_nan() {
        logp_floor()
    } else {
        l.clamp(logp_floor(), 0.0)
    }
}

/// One of the four answer labels of a multiple-choice item.
///
/// Exactly four values exist, totally ordered `A < B < C < D`. The ordinal
/// doubles as the deterministic tie-break rule everywhere an argmax is taken.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum OptionKey {
    A,
    B,
    C,
    D,
}

impl OptionKey {
    /// All keys in ordinal order.
    pub const ALL: [OptionKey; 4] = [OptionKey::A, OptionKey::B, OptionKey::C, OptionKey::D];

    pub fn ordinal(self) -> usize {
        match self {
            OptionKey::A => 0,
            OptionKey::B => 1,
            OptionKey::C => 2,
            OptionKey::D => 3,
        }
    }

    pub fn from_ordinal(ordinal: usize) -> Option<OptionKey> {
        OptionKey::ALL.get(ordinal).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OptionKey::A => "A",
            OptionKey::B => "B",
            OptionKey::C => "C",
            OptionKey::D => "D",
        }
    }
}

impl fmt::Display for OptionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptionKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(OptionKey::A),
            "B" | "b" => Ok(OptionKey::B),
            "C" | "c" => Ok(OptionKey::C),
            "D" | "d" => Ok(OptionKey::D),
            other => Err(format!("not an option key: {other:?}")),
        }
    }
}

/// Which modality a query presented the entity in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    /// Entity given as an indicator sentence in the prompt.
    Textual,
    /// Entity given as an image.
    Visual,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::Textual => f.write_str("textual"),
            Modality::Visual => f.write_str("visual"),
        }
    }
}

/// Provenance of a multiple-choice item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SourceDataset {
    #[serde(rename = "viquae")]
    ViQuAE,
    #[serde(rename = "infoseek")]
    InfoSeek,
    #[serde(rename = "custom")]
    Custom,
}

impl fmt::Display for SourceDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceDataset::ViQuAE => f.write_str("viquae"),
            SourceDataset::InfoSeek => f.write_str("infoseek"),
            SourceDataset::Custom => f.write_str("custom"),
        }
    }
}

/// One multiple-choice question about a named entity.
///
/// `image_ref` is an opaque reference (path or URL) passed through to
/// backends; this library never decodes pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqaItem {
    pub id: String,
    pub question: String,
    /// The named entity, used verbatim in the textual indicator sentence.
    pub entity_name: String,
    pub image_ref: String,
    pub options: BTreeMap<OptionKey, String>,
    pub gold: OptionKey,
    pub source_dataset: SourceDataset,
    /// Original free-form gold answer, kept so the verbatim-copy invariant
    /// stays checkable after synthesis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
    /// Optional alternative names accepted by the recognition filter.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

impl McqaItem {
    /// Option text for a key; empty string if the key is absent (an invalid
    /// item — see [`validate_item`]).
    pub fn option_text(&self, key: OptionKey) -> &str {
        self.options.get(&key).map(String::as_str).unwrap_or("")
    }
}

/// Log-probabilities over the four option labels at the first answer token.
///
/// Values are natural logs of clamped probabilities, so every entry is
/// finite and `<= 0`. The raw magnitudes matter: contrastive scoring
/// compares them across modalities without renormalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionDistribution {
    pub logp: BTreeMap<OptionKey, f64>,
    pub source_modality: Modality,
}

impl OptionDistribution {
    /// Build from raw probabilities indexed by key ordinal, clamping into
    /// `[PROB_FLOOR, 1.0]` before taking logs.
    pub fn from_probabilities(probs: [f64; 4], source_modality: Modality) -> Self {
        let logp = OptionKey::ALL
            .iter()
            .zip(probs.iter())
            .map(|(&k, &p)| (k, clamp_prob(p).ln()))
            .collect();
        OptionDistribution {
            logp,
            source_modality,
        }
    }

    /// Build from raw log-probabilities, clamping into `[ln(PROB_FLOOR), 0]`.
    /// Missing keys are filled with the floor.
    pub fn from_logp_map(raw: &BTreeMap<OptionKey, f64>, source_modality: Modality) -> Self {
        let logp = OptionKey::ALL
            .iter()
            .map(|&k| (k, clamp_logp(raw.get(&k).copied().unwrap_or(f64::NEG_INFINITY))))
            .collect();
        OptionDistribution {
            logp,
            source_modality,
        }
    }

    /// Log-probability for a key. Absent keys read as the clamp floor, which
    /// only happens on hand-edited input files.
    pub fn logp(&self, key: OptionKey) -> f64 {
        self.logp.get(&key).copied().unwrap_or_else(logp_floor)
    }

    /// Probability for a key (`exp` of the stored log).
    pub fn prob(&self, key: OptionKey) -> f64 {
        self.logp(key).exp()
    }

    /// The answer under this distribution: argmax with lowest-ordinal tie-break.
    pub fn argmax(&self) -> OptionKey {
        argmax_option(|k| self.logp(k))
    }
}

/// Argmax over the four option keys with the lowest-ordinal tie-break used
/// throughout the pipeline.
pub fn argmax_option<F: Fn(OptionKey) -> f64>(score: F) -> OptionKey {
    let mut best = OptionKey::A;
    let mut best_score = score(OptionKey::A);
    for key in [OptionKey::B, OptionKey::C, OptionKey::D] {
        let s = score(key);
        if s > best_score {
            best = key;
            best_score = s;
        }
    }
    best
}
