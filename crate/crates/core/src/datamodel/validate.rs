//! Item validation. Violations are data, not faults: every broken invariant
//! is reported, and an empty list means the item is valid.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{McqaItem, OptionKey};

/// A broken [`McqaItem`] invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Violation {
    MissingOption { key: OptionKey },
    EmptyOption { key: OptionKey },
    /// Two options are identical after normalization.
    DuplicateOptions { first: OptionKey, second: OptionKey },
    /// The gold option is not a verbatim copy of the original gold answer.
    GoldNotVerbatim,
    EmptyQuestion,
    EmptyEntityName,
    EmptyImageRef,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingOption { key } => write!(f, "missing option {key}"),
            Violation::EmptyOption { key } => write!(f, "option {key} is empty"),
            Violation::DuplicateOptions { first, second } => {
                write!(f, "options {first} and {second} are duplicates")
            }
            Violation::GoldNotVerbatim => {
                f.write_str("gold option is not a verbatim copy of the gold answer")
            }
            Violation::EmptyQuestion => f.write_str("question is empty"),
            Violation::EmptyEntityName => f.write_str("entity name is empty"),
            Violation::EmptyImageRef => f.write_str("image reference is empty"),
        }
    }
}

/// Normalization used for option distinctness: lowercase, trim, collapse
/// internal whitespace. Distractors are generator-written and
/// whitespace-noisy, so distinctness is judged on this form.
pub fn normalize_option_text(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Check every invariant of an item and return all violations found.
///
/// The verbatim-gold check runs only when the item carries its original
/// `gold_answer`; items loaded from files without provenance skip it.
pub fn validate_item(item: &McqaItem) -> Vec<Violation> {
    let mut violations = Vec::new();

    if item.question.trim().is_empty() {
        violations.push(Violation::EmptyQuestion);
    }
    if item.entity_name.trim().is_empty() {
        violations.push(Violation::EmptyEntityName);
    }
    if item.image_ref.trim().is_empty() {
        violations.push(Violation::EmptyImageRef);
    }

    for key in OptionKey::ALL {
        match item.options.get(&key) {
            None => violations.push(Violation::MissingOption { key }),
            Some(text) if text.trim().is_empty() => {
                violations.push(Violation::EmptyOption { key })
            }
            Some(_) => {}
        }
    }

    let normalized: Vec<(OptionKey, String)> = OptionKey::ALL
        .iter()
        .filter_map(|&k| {
            item.options
                .get(&k)
                .map(|t| (k, normalize_option_text(t)))
        })
        .collect();
    for i in 0..normalized.len() {
        for j in (i + 1)..normalized.len() {
            if !normalized[i].1.is_empty() && normalized[i].1 == normalized[j].1 {
                violations.push(Violation::DuplicateOptions {
                    first: normalized[i].0,
                    second: normalized[j].0,
                });
            }
        }
    }

    if let Some(gold_answer) = &item.gold_answer {
        if item.options.get(&item.gold).map(String::as_str) != Some(gold_answer.as_str()) {
            violations.push(Violation::GoldNotVerbatim);
        }
    }

    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::SourceDataset;
    use std::collections::BTreeMap;

    fn well_formed() -> McqaItem {
        let mut options = BTreeMap::new();
        options.insert(OptionKey::A, "Paris".to_string());
        options.insert(OptionKey::B, "Lyon".to_string());
        options.insert(OptionKey::C, "Nice".to_string());
        options.insert(OptionKey::D, "Marseille".to_string());
        McqaItem {
            id: "q1".to_string(),
            question: "In which city is the landmark located?".to_string(),
            entity_name: "Eiffel Tower".to_string(),
            image_ref: "img/tower.jpg".to_string(),
            options,
            gold: OptionKey::A,
            source_dataset: SourceDataset::Custom,
            gold_answer: Some("Paris".to_string()),
            aliases: Vec::new(),
        }
    }

    #[test]
    fn well_formed_item_has_no_violations() {
        assert!(validate_item(&well_formed()).is_empty());
    }

    #[test]
    fn duplicate_options_are_reported() {
        let mut item = well_formed();
        item.options.insert(OptionKey::C, "  paris ".to_string());
        let violations = validate_item(&item);
        assert_eq!(
            violations,
            vec![Violation::DuplicateOptions {
                first: OptionKey::A,
                second: OptionKey::C
            }]
        );
    }

    #[test]
    fn gold_not_verbatim_is_reported() {
        let mut item = well_formed();
        item.options.insert(OptionKey::A, "paris".to_string());
        let violations = validate_item(&item);
        assert!(violations.contains(&Violation::GoldNotVerbatim));
    }

    #[test]
    fn missing_option_and_empty_fields() {
        let mut item = well_formed();
        item.options.remove(&OptionKey::D);
        item.entity_name = "  ".to_string();
        item.image_ref = String::new();
        let violations = validate_item(&item);
        assert!(violations.contains(&Violation::MissingOption { key: OptionKey::D }));
        assert!(violations.contains(&Violation::EmptyEntityName));
        assert!(violations.contains(&Violation::EmptyImageRef));
    }

    #[test]
    fn gold_check_skipped_without_provenance() {
        let mut item = well_formed();
        item.gold_answer = None;
        item.options.insert(OptionKey::A, "paris".to_string());
        // Distinctness still applies, but verbatim-gold cannot be judged.
        let violations = validate_item(&item);
        assert!(!violations.contains(&Violation::GoldNotVerbatim));
    }

    #[test]
    fn normalization_collapses_whitespace_and_case() {
        assert_eq!(normalize_option_text("  The   Great\tWall "), "the great wall");
    }
}
