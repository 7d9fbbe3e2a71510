//! Generator for the bundled mini fixtures: a 50-item dataset, a synthetic
//! script modelling a conflicted model, and a replay recording captured by
//! running the pipeline against that script. Everything is deterministic, so
//! regenerating produces byte-identical files.

use std::collections::BTreeMap;
use std::path::Path;

use conflictkit::backend::{
    BackendCapabilities, RecordingBackend, RequestMode, SyntheticBackend, SyntheticResponse,
    SyntheticRule, SyntheticScript,
};
use conflictkit::datamodel::{write_jsonl, McqaItem, OptionKey, SourceDataset};
use conflictkit::detector::{detect, DetectorConfig};
use conflictkit::mitigate::{evaluate_strategy, MitigateConfig, Strategy};

use crate::CliError;

const ADJECTIVES: [&str; 10] = [
    "Amber", "Basalt", "Cedar", "Dusk", "Ember", "Fjord", "Gilded", "Harbor", "Iron", "Juniper",
];
const NOUNS: [&str; 5] = ["Arch", "Bridge", "Court", "Dome", "Gate"];
const CITIES: [&str; 8] = [
    "Arvale", "Brontis", "Corwick", "Dunmore", "Eastfall", "Farholt", "Grimsby", "Halvern",
];
const QUESTIONS: [&str; 5] = [
    "In which city is this landmark located?",
    "Which city is home to this landmark?",
    "In which city does this landmark stand?",
    "Which city hosts this landmark?",
    "In which city can this landmark be found?",
];

/// Option keys map to cities with these offsets into the city pool; the
/// offsets are pairwise distinct mod 8 so the four options never collide.
const CITY_OFFSETS: [usize; 4] = [0, 1, 3, 6];

fn entity_name(i: usize) -> String {
    format!("{} {}", ADJECTIVES[i % 10], NOUNS[i / 10])
}

/// Planted behavior per item.
struct Plan {
    recognized: bool,
    textual_answer: OptionKey,
    visual_answer: OptionKey,
    reminder_answer: OptionKey,
    answer_conflict_answer: OptionKey,
}

fn plan(i: usize, gold: OptionKey) -> Plan {
    let recognized = i % 10 != 7;
    let textual_answer = if i % 5 == 4 {
        OptionKey::from_ordinal((gold.ordinal() + 2) % 4).unwrap()
    } else {
        gold
    };
    let flipped = recognized && i % 3 == 0;
    let visual_answer = if flipped {
        OptionKey::from_ordinal((textual_answer.ordinal() + 1) % 4).unwrap()
    } else {
        textual_answer
    };
    // Mitigation re-queries recover gold on a deterministic subset.
    let reminder_answer = if i % 2 == 0 { gold } else { visual_answer };
    let answer_conflict_answer = if i % 4 != 2 { gold } else { visual_answer };
    Plan {
        recognized,
        textual_answer,
        visual_answer,
        reminder_answer,
        answer_conflict_answer,
    }
}

/// The bundled 50-item dataset.
pub fn mini_dataset() -> Vec<McqaItem> {
    (0..50)
        .map(|i| {
            let entity = entity_name(i);
            let mut options = BTreeMap::new();
            for (key, offset) in OptionKey::ALL.iter().zip(CITY_OFFSETS) {
                options.insert(*key, CITIES[(i + offset) % 8].to_string());
            }
            let gold = OptionKey::from_ordinal((i * 7 + 3) % 4).unwrap();
            let gold_answer = options[&gold].clone();
            let aliases = if i % 4 == 0 {
                vec![format!("The {entity}")]
            } else {
                Vec::new()
            };
            McqaItem {
                id: format!("mini-{i:03}"),
                question: QUESTIONS[i % 5].to_string(),
                entity_name: entity,
                image_ref: format!("images/mini-{i:03}.png"),
                options,
                gold,
                source_dataset: SourceDataset::Custom,
                gold_answer: Some(gold_answer),
                aliases,
            }
        })
        .collect()
}

/// Deterministic per-item, per-query option probabilities: the answer key
/// takes a peak in [0.5, 0.8] and the remainder spreads unevenly over the
/// rest. Peaks differ between the modalities of one item, so confidences
/// never tie exactly (real models do not tie either; an exact tie would pin
/// the decoder to its degenerate equal-confidence branch).
fn planted_probs(i: usize, salt: usize, key: OptionKey) -> [f64; 4] {
    let peak = 0.5 + 0.05 * ((3 * i + 5 * salt) % 7) as f64;
    let rest = 1.0 - peak;
    let weights = [0.5, 0.3, 0.2];
    let rotation = (i + salt) % 3;
    let mut probs = [0.0; 4];
    probs[key.ordinal()] = peak;
    let mut slot = 0;
    for ordinal in 0..4 {
        if ordinal != key.ordinal() {
            probs[ordinal] = rest * weights[(slot + rotation) % 3];
            slot += 1;
        }
    }
    probs
}

/// Synthetic script realizing the planted behavior. Items are told apart by
/// their image reference (visual-side requests) or the entity in the
/// indicator sentence (textual-side requests); mitigation re-queries carry
/// their system-prompt markers and take precedence over plain visual rules.
pub fn mini_script(items: &[McqaItem]) -> SyntheticScript {
    let mut rules = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let plan = plan(i, item.gold);
        let reply = if plan.recognized {
            item.entity_name.clone()
        } else {
            "an unlabeled structure".to_string()
        };
        rules.push(
            SyntheticRule::new(SyntheticResponse::Text { text: reply })
                .when_mode(RequestMode::FreeText)
                .when_image_contains(item.image_ref.clone()),
        );
        rules.push(
            SyntheticRule::new(SyntheticResponse::OptionProbs {
                probs: planted_probs(i, 3, plan.reminder_answer),
            })
            .when_mode(RequestMode::OptionLogprobs)
            .when_image_contains(item.image_ref.clone())
            .when_prompt_contains("differ from your textual memory"),
        );
        rules.push(
            SyntheticRule::new(SyntheticResponse::OptionProbs {
                probs: planted_probs(i, 4, plan.answer_conflict_answer),
            })
            .when_mode(RequestMode::OptionLogprobs)
            .when_image_contains(item.image_ref.clone())
            .when_prompt_contains("Your text memory is: "),
        );
        rules.push(
            SyntheticRule::new(SyntheticResponse::OptionProbs {
                probs: planted_probs(i, 1, plan.textual_answer),
            })
            .when_mode(RequestMode::OptionLogprobs)
            .when_image(false)
            .when_prompt_contains(format!("This is an image of {}.", item.entity_name)),
        );
        rules.push(
            SyntheticRule::new(SyntheticResponse::OptionProbs {
                probs: planted_probs(i, 2, plan.visual_answer),
            })
            .when_mode(RequestMode::OptionLogprobs)
            .when_image_contains(item.image_ref.clone()),
        );
    }
    SyntheticScript {
        capabilities: BackendCapabilities {
            supports_images: true,
            supports_option_logprobs: true,
            supports_full_next_token_logprobs: false,
            supports_stochastic_mode: false,
        },
        rules,
    }
}

const MINI_CONFIG: &str = "\
seed = 42
parallelism = 1

[backend]
kind = \"replay\"
recording = \"recording.jsonl\"

[thresholds]
max_skip_fraction = 0.1
retry_limit = 3
";

/// Write dataset.jsonl, recording.jsonl, and config.toml into `dir`.
///
/// The recording is captured by running detection plus both mitigation
/// strategies against the synthetic script, so replaying covers the full
/// detect / dcd / mitigate / contrast / analyze-confidence (max, shift)
/// command set.
pub fn write_mini_fixtures(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::pipeline(format!("{}: {e}", dir.display())))?;
    let items = mini_dataset();
    write_jsonl(&dir.join("dataset.jsonl"), &items)
        .map_err(|e| CliError::pipeline(format!("writing dataset: {e}")))?;

    let script = mini_script(&items);
    let recorder = RecordingBackend::new(Box::new(SyntheticBackend::from_script(script)));

    let detector_config = DetectorConfig::default();
    let report = detect(&items, &recorder, &detector_config)
        .map_err(|e| CliError::pipeline(format!("fixture detection: {e}")))?;
    for strategy in [Strategy::Reminder, Strategy::AnswerConflict] {
        evaluate_strategy(&items, &report, &recorder, strategy, &MitigateConfig::default())
            .map_err(|e| CliError::pipeline(format!("fixture mitigation: {e}")))?;
    }

    recorder
        .save(&dir.join("recording.jsonl"))
        .map_err(|e| CliError::pipeline(format!("saving recording: {e}")))?;
    std::fs::write(dir.join("config.toml"), MINI_CONFIG)
        .map_err(|e| CliError::pipeline(format!("writing config: {e}")))?;
    Ok(())
}

/// Free-form QA items for the dataset-builder demo.
const RAW_QA: [(&str, &str, &str, &str); 5] = [
    (
        "syn-raw-01",
        "In which country is this mountain located?",
        "Switzerland",
        "Matterhorn",
    ),
    (
        "syn-raw-02",
        "In which city does this amphitheatre stand?",
        "Rome",
        "Colosseum",
    ),
    (
        "syn-raw-03",
        "Which river does this dam hold back?",
        "The Nile",
        "Aswan High Dam",
    ),
    (
        "syn-raw-04",
        "In which museum is this painting displayed?",
        "The Louvre",
        "Mona Lisa",
    ),
    (
        "syn-raw-05",
        "In which city was this opera house built?",
        "Sydney",
        "Sydney Opera House",
    ),
];

/// Scripted distractor replies, gold rotated across keys.
const DISTRACTOR_REPLIES: [&str; 5] = [
    r#"{"A": "Switzerland", "B": "Austria", "C": "France", "D": "Italy"}"#,
    r#"{"A": "Athens", "B": "Rome", "C": "Naples", "D": "Verona"}"#,
    r#"{"A": "The Danube", "B": "The Amazon", "C": "The Nile", "D": "The Rhine"}"#,
    r#"{"A": "The Prado", "B": "The Uffizi", "C": "The Hermitage", "D": "The Louvre"}"#,
    r#"{"A": "Sydney", "B": "Melbourne", "C": "Vienna", "D": "Milan"}"#,
];

const ELICIT_QUESTION: &str = "Describe where this landmark stands.";
const ELICIT_VOCAB: [&str; 5] = ["Brontis", " harbor", " district", ".", " Arvale"];
/// Greedy visual path: "Brontis harbor district." Entries are the cumulative
/// generated prefix and the index of the next token to peak.
const ELICIT_STEPS: [(&str, usize); 4] = [
    ("", 0),
    ("Brontis", 1),
    ("Brontis harbor", 2),
    ("Brontis harbor district", 3),
];

fn elicit_item() -> McqaItem {
    let mut options = BTreeMap::new();
    for (key, offset) in OptionKey::ALL.iter().zip(CITY_OFFSETS) {
        options.insert(*key, CITIES[offset].to_string());
    }
    McqaItem {
        id: "syn-elicit-01".to_string(),
        question: ELICIT_QUESTION.to_string(),
        entity_name: "Harbor Gate".to_string(),
        image_ref: "images/harbor-gate.png".to_string(),
        options: options.clone(),
        gold: OptionKey::B,
        source_dataset: SourceDataset::Custom,
        gold_answer: Some(options[&OptionKey::B].clone()),
        aliases: Vec::new(),
    }
}

/// Script serving both demo flows: distractor generation for the raw QA
/// items, and a scripted elicitation for `syn-elicit-01`.
pub fn synthetic_demo_script() -> SyntheticScript {
    let mut rules = Vec::new();
    for ((_, question, _, _), reply) in RAW_QA.iter().zip(DISTRACTOR_REPLIES) {
        rules.push(
            SyntheticRule::new(SyntheticResponse::Text { text: reply.to_string() })
                .when_mode(RequestMode::FreeText)
                .when_prompt_contains(format!("Question: {question}")),
        );
    }

    // Visual next-token distributions, chained by generated prefix; each
    // step peaks at the next token of the scripted memory.
    for (generated, next_index) in ELICIT_STEPS {
        let probs: Vec<(String, f64)> = ELICIT_VOCAB
            .iter()
            .enumerate()
            .map(|(i, token)| {
                let p = if i == next_index { 0.6 } else { 0.1 };
                (token.to_string(), p)
            })
            .collect();
        rules.push(
            SyntheticRule::new(SyntheticResponse::NextTokenProbs { probs })
                .when_mode(RequestMode::NextTokenLogprobs)
                .when_image(true)
                .when_prompt_ends_with(format!("{ELICIT_QUESTION}{generated}")),
        );
    }
    // Uniform textual context: elicitation reduces to the visual greedy path.
    let uniform: Vec<(String, f64)> = ELICIT_VOCAB
        .iter()
        .map(|token| (token.to_string(), 0.2))
        .collect();
    rules.push(
        SyntheticRule::new(SyntheticResponse::NextTokenProbs { probs: uniform })
            .when_mode(RequestMode::NextTokenLogprobs)
            .when_image(false),
    );

    SyntheticScript {
        capabilities: BackendCapabilities::all(),
        rules,
    }
}

const SYNTHETIC_CONFIG: &str = "\
seed = 7
parallelism = 1

[backend]
kind = \"synthetic\"
script = \"script.json\"
";

/// Write the synthetic demo: raw_qa.jsonl, elicit_dataset.jsonl, script.json,
/// and config.toml.
pub fn write_synthetic_demo(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::pipeline(format!("{}: {e}", dir.display())))?;

    let raws: Vec<conflictkit::dataset_builder::RawQaItem> = RAW_QA
        .iter()
        .map(|(id, question, gold, entity)| conflictkit::dataset_builder::RawQaItem {
            id: id.to_string(),
            question: question.to_string(),
            gold_answer: gold.to_string(),
            entity_name: entity.to_string(),
            image_ref: format!("images/{id}.png"),
            aliases: Vec::new(),
        })
        .collect();
    write_jsonl(&dir.join("raw_qa.jsonl"), &raws)
        .map_err(|e| CliError::pipeline(format!("writing raw qa: {e}")))?;
    write_jsonl(&dir.join("elicit_dataset.jsonl"), &[elicit_item()])
        .map_err(|e| CliError::pipeline(format!("writing elicit dataset: {e}")))?;

    let script = synthetic_demo_script();
    let mut script_json = serde_json::to_string_pretty(&script)
        .map_err(|e| CliError::pipeline(format!("serializing script: {e}")))?;
    script_json.push('\n');
    std::fs::write(dir.join("script.json"), script_json)
        .map_err(|e| CliError::pipeline(format!("writing script: {e}")))?;
    std::fs::write(dir.join("config.toml"), SYNTHETIC_CONFIG)
        .map_err(|e| CliError::pipeline(format!("writing config: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use conflictkit::datamodel::validate_item;

    #[test]
    fn mini_dataset_is_valid_and_sized() {
        let items = mini_dataset();
        assert_eq!(items.len(), 50);
        for item in &items {
            assert!(
                validate_item(item).is_empty(),
                "item {} invalid: {:?}",
                item.id,
                validate_item(item)
            );
        }
        // Entities are unique.
        let mut names: Vec<&str> = items.iter().map(|i| i.entity_name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), 50);
    }

    #[test]
    fn planted_counts_come_out_of_detection() {
        let items = mini_dataset();
        let backend = SyntheticBackend::from_script(mini_script(&items));
        let report = detect(&items, &backend, &DetectorConfig::default()).unwrap();
        assert_eq!(report.n_total, 50);
        // i % 10 == 7 unrecognized: 5 items.
        assert_eq!(report.n_recognized, 45);
        // Recognized flips: i % 3 == 0 and i % 10 != 7.
        let expected_flips = (0..50).filter(|i| i % 10 != 7 && i % 3 == 0).count();
        let flips = report
            .records
            .iter()
            .filter(|r| r.recognized && r.flipped)
            .count();
        assert_eq!(flips, expected_flips);
        assert_eq!(
            report.flip_rate,
            expected_flips as f64 / report.n_recognized as f64
        );
    }

    #[test]
    fn fixture_generation_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_mini_fixtures(a.path()).unwrap();
        write_mini_fixtures(b.path()).unwrap();
        for file in ["dataset.jsonl", "recording.jsonl", "config.toml"] {
            let left = std::fs::read(a.path().join(file)).unwrap();
            let right = std::fs::read(b.path().join(file)).unwrap();
            assert_eq!(left, right, "{file} differs between runs");
        }
    }

    #[test]
    fn synthetic_demo_builds_and_elicits() {
        use conflictkit::contrastive::{elicit_visual_memory, ElicitConfig, StopRule};
        use conflictkit::dataset_builder::{synthesize_options, RawQaItem};

        let backend = SyntheticBackend::from_script(synthetic_demo_script());
        let raw = RawQaItem {
            id: "syn-raw-05".to_string(),
            question: "In which city was this opera house built?".to_string(),
            gold_answer: "Sydney".to_string(),
            entity_name: "Sydney Opera House".to_string(),
            image_ref: "images/syn-raw-05.png".to_string(),
            aliases: Vec::new(),
        };
        let out = synthesize_options(&raw, &backend, 0, 3, SourceDataset::Custom).unwrap();
        assert_eq!(out.item.gold, OptionKey::A);
        assert!(validate_item(&out.item).is_empty());

        let memory = elicit_visual_memory(
            &elicit_item(),
            &backend,
            &ElicitConfig {
                max_tokens: 8,
                stop_rule: StopRule::OnToken(".".to_string()),
                ..ElicitConfig::default()
            },
        )
        .unwrap();
        assert_eq!(memory.text, "Brontis harbor district.");
        assert!(!memory.degenerate);
    }
}
