//! Converts free-form QA items into validated multiple-choice items by
//! synthesizing distractors through a generator backend, plus down-sampling
//! and dataset statistics.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{generate, Backend, BackendError};
use crate::datamodel::{
    normalize_option_text, validate_item, McqaItem, OptionKey, SourceDataset,
};
use crate::parallel::map_bounded;

/// The instruction sent to the generator, verbatim. The question and gold
/// answer are appended below it.
pub const DISTRACTOR_PROMPT: &str = "Given the question and its gold answer, please generate a multiple choice version of this question. Note that the wrong choices should be relevant to the question and the gold answer should be exactly copied from what is given. You can randomly put the gold answer wherever you want. Please output as a json format: {\"A\": Answer A, \"B\": Answer B, \"C\": Answer C, \"D\": Answer D}. No further explanation or note.";

/// A free-form QA item before distractor synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawQaItem {
    pub id: String,
    pub question: String,
    pub gold_answer: String,
    pub entity_name: String,
    pub image_ref: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("generation failed after {attempts} attempts: {last_failure}")]
    GenerationFailed { attempts: usize, last_failure: String },
    #[error("could not parse generator reply ({reason}); raw reply: {raw}")]
    Parse { reason: String, raw: String },
    #[error("cannot sample {requested} items from {available}")]
    Size { requested: usize, available: usize },
    #[error("raw item invalid: {reason}")]
    InvalidRaw { reason: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// How the gold answer was located among the generated options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldMatch {
    /// Exact string equality, as the prompt demands.
    Verbatim,
    /// Matched only after whitespace/case normalization; accepted with a
    /// warning since generators drift on whitespace.
    Normalized,
}

/// A synthesized item plus how its gold option was matched.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesized {
    pub item: McqaItem,
    pub gold_match: GoldMatch,
}

/// Build the full distractor-generation prompt for one raw item.
pub fn distractor_prompt(question: &str, gold_answer: &str) -> String {
    format!("{DISTRACTOR_PROMPT}\nQuestion: {question}\nGold answer: {gold_answer}")
}

/// Pull the four options out of a generator reply. The reply may wrap the
/// JSON object in prose or code fences; the outermost braces are taken.
fn parse_options(reply: &str) -> Result<BTreeMap<OptionKey, String>, String> {
    let start = reply.find('{').ok_or("no JSON object in reply")?;
    let end = reply.rfind('}').ok_or("no closing brace in reply")?;
    if end < start {
        return Err("braces out of order".to_string());
    }
    let value: serde_json::Value =
        serde_json::from_str(&reply[start..=end]).map_err(|e| format!("invalid JSON: {e}"))?;
    let object = value.as_object().ok_or("reply is not a JSON object")?;

    let mut options = BTreeMap::new();
    for key in OptionKey::ALL {
        let raw = object
            .get(key.as_str())
            .ok_or_else(|| format!("missing key {key}"))?;
        let text = raw
            .as_str()
            .ok_or_else(|| format!("value for {key} is not a string"))?;
        options.insert(key, text.to_string());
    }
    Ok(options)
}

fn find_gold(
    options: &BTreeMap<OptionKey, String>,
    gold_answer: &str,
) -> Option<(OptionKey, GoldMatch)> {
    for key in OptionKey::ALL {
        if options.get(&key).map(String::as_str) == Some(gold_answer) {
            return Some((key, GoldMatch::Verbatim));
        }
    }
    let normalized_gold = normalize_option_text(gold_answer);
    for key in OptionKey::ALL {
        if options
            .get(&key)
            .is_some_and(|t| normalize_option_text(t) == normalized_gold)
        {
            return Some((key, GoldMatch::Normalized));
        }
    }
    None
}

/// Synthesize the multiple-choice version of one raw item.
///
/// Issues the distractor-generation prompt, parses the structured reply,
/// verifies the gold answer appears among the four options, and retries up to
/// `retry_limit` times on parse or verification failure. Each attempt carries
/// a distinct seed so stochastic generators (and replay recordings) can vary
/// across retries.
pub fn synthesize_options(
    raw: &RawQaItem,
    generator: &dyn Backend,
    seed: u64,
    retry_limit: usize,
    source_dataset: SourceDataset,
) -> Result<Synthesized, BuildError> {
    if raw.question.trim().is_empty() || raw.gold_answer.trim().is_empty() {
        return Err(BuildError::InvalidRaw {
            reason: "question and gold_answer must be nonempty".to_string(),
        });
    }

    let prompt = distractor_prompt(&raw.question, &raw.gold_answer);
    let attempts = retry_limit.max(1);
    let mut last_failure = String::new();
    let mut last_parse_failure: Option<(String, String)> = None;

    for attempt in 0..attempts {
        let reply = generate(generator, &prompt, None, false, Some(seed.wrapping_add(attempt as u64)))?;

        let options = match parse_options(&reply) {
            Ok(options) => options,
            Err(reason) => {
                last_failure = format!("parse failure: {reason}");
                last_parse_failure = Some((reason, reply));
                continue;
            }
        };

        let Some((gold, gold_match)) = find_gold(&options, &raw.gold_answer) else {
            last_failure = "no option equals the gold answer".to_string();
            last_parse_failure = None;
            continue;
        };

        let item = McqaItem {
            id: raw.id.clone(),
            question: raw.question.clone(),
            entity_name: raw.entity_name.clone(),
            image_ref: raw.image_ref.clone(),
            // The gold option is kept verbatim from the source; only the
            // normalized-match case rewrites it back to the true answer.
            options: {
                let mut options = options;
                if gold_match == GoldMatch::Normalized {
                    options.insert(gold, raw.gold_answer.clone());
                }
                options
            },
            gold,
            source_dataset,
            gold_answer: Some(raw.gold_answer.clone()),
            aliases: raw.aliases.clone(),
        };

        let violations = validate_item(&item);
        if !violations.is_empty() {
            last_failure = format!(
                "generated item invalid: {}",
                violations
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("; ")
            );
            last_parse_failure = None;
            continue;
        }

        if gold_match == GoldMatch::Normalized {
            log::warn!(
                "item {}: gold answer matched only after normalization",
                raw.id
            );
        }
        return Ok(Synthesized { item, gold_match });
    }

    // Surface the raw reply when the final failure was a parse failure; it is
    // the piece needed for debugging generator drift.
    if let Some((reason, raw_reply)) = last_parse_failure {
        return Err(BuildError::Parse {
            reason,
            raw: raw_reply,
        });
    }
    Err(BuildError::GenerationFailed {
        attempts,
        last_failure,
    })
}

/// Batch-build configuration.
#[derive(Debug, Clone)]
pub struct BuilderConfig {
    pub seed: u64,
    pub retry_limit: usize,
    pub parallelism: usize,
    pub source_dataset: SourceDataset,
}

impl Default for BuilderConfig {
    fn default() -> Self {
        BuilderConfig {
            seed: 0,
            retry_limit: 3,
            parallelism: 1,
            source_dataset: SourceDataset::Custom,
        }
    }
}

/// Outcome counts for a batch build. Items whose synthesis exhausted retries
/// are skipped and listed here rather than failing the batch.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildStats {
    pub n_input: usize,
    pub n_built: usize,
    pub n_skipped: usize,
    pub n_normalized_gold: usize,
    pub failures: Vec<(String, String)>,
}

fn item_seed(base: u64, id: &str) -> u64 {
    let digest = Sha256::digest(format!("{base}:{id}").as_bytes());
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

/// Synthesize a whole batch, skipping (and logging) items that fail after
/// retries. Synthesis runs concurrently up to `parallelism`.
pub fn build_dataset(
    raws: &[RawQaItem],
    generator: &dyn Backend,
    config: &BuilderConfig,
) -> (Vec<McqaItem>, BuildStats) {
    let results = map_bounded(config.parallelism, raws, |raw| {
        synthesize_options(
            raw,
            generator,
            item_seed(config.seed, &raw.id),
            config.retry_limit,
            config.source_dataset,
        )
    });

    let mut stats = BuildStats {
        n_input: raws.len(),
        ..BuildStats::default()
    };
    let mut items = Vec::new();
    for (raw, result) in raws.iter().zip(results) {
        match result {
            Ok(synthesized) => {
                if synthesized.gold_match == GoldMatch::Normalized {
                    stats.n_normalized_gold += 1;
                }
                items.push(synthesized.item);
                stats.n_built += 1;
            }
            Err(err) => {
                log::warn!("skipping item {}: {err}", raw.id);
                stats.n_skipped += 1;
                stats.failures.push((raw.id.clone(), err.to_string()));
            }
        }
    }
    (items, stats)
}

/// Uniform sample of `n` items without replacement, deterministic under the
/// seed (partial Fisher-Yates over indices).
pub fn downsample<T: Clone>(items: &[T], n: usize, seed: u64) -> Result<Vec<T>, BuildError> {
    if n > items.len() {
        return Err(BuildError::Size {
            requested: n,
            available: items.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..items.len()).collect();
    for i in 0..n {
        let j = rng.random_range(i..indices.len());
        indices.swap(i, j);
    }
    Ok(indices[..n].iter().map(|&i| items[i].clone()).collect())
}

/// Exact counts over a dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub count: usize,
    pub per_source: BTreeMap<String, usize>,
    pub gold_distribution: BTreeMap<OptionKey, usize>,
}

impl DatasetStats {
    /// The key holding the largest share of golds, with that share.
    pub fn dominant_gold_share(&self) -> Option<(OptionKey, f64)> {
        if self.count == 0 {
            return None;
        }
        self.gold_distribution
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(&k, &c)| (k, c as f64 / self.count as f64))
    }

    /// True when one key holds more than 90% of golds over at least 200
    /// items. Placement is generator-controlled, so this warns, never fails.
    pub fn gold_skewed(&self) -> bool {
        self.count >= 200
            && self
                .dominant_gold_share()
                .is_some_and(|(_, share)| share > 0.9)
    }
}

pub fn stats(items: &[McqaItem]) -> DatasetStats {
    let mut out = DatasetStats {
        count: items.len(),
        ..DatasetStats::default()
    };
    for item in items {
        *out.per_source.entry(item.source_dataset.to_string()).or_insert(0) += 1;
        *out.gold_distribution.entry(item.gold).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{
        BackendCapabilities, SyntheticBackend, SyntheticResponse, SyntheticRule,
    };

    fn raw(id: &str) -> RawQaItem {
        RawQaItem {
            id: id.to_string(),
            question: "In which city is the landmark located?".to_string(),
            gold_answer: "Paris".to_string(),
            entity_name: "Eiffel Tower".to_string(),
            image_ref: "img/tower.jpg".to_string(),
            aliases: Vec::new(),
        }
    }

    fn generator_with_reply(reply: &str) -> SyntheticBackend {
        SyntheticBackend::new(BackendCapabilities::all()).rule(SyntheticRule::new(
            SyntheticResponse::Text {
                text: reply.to_string(),
            },
        ))
    }

    #[test]
    fn direct_parse_places_gold() {
        let generator = generator_with_reply(
            r#"{"A": "Paris", "B": "Lyon", "C": "Nice", "D": "Marseille"}"#,
        );
        let out = synthesize_options(&raw("q1"), &generator, 0, 3, SourceDataset::Custom).unwrap();
        assert_eq!(out.item.gold, OptionKey::A);
        assert_eq!(out.gold_match, GoldMatch::Verbatim);
        assert_eq!(out.item.option_text(OptionKey::A), "Paris");
        assert!(validate_item(&out.item).is_empty());
    }

    #[test]
    fn gold_can_land_on_any_key() {
        let generator = generator_with_reply(
            r#"{"A": "Lyon", "B": "Nice", "C": "Marseille", "D": "Paris"}"#,
        );
        let out = synthesize_options(&raw("q1"), &generator, 0, 3, SourceDataset::Custom).unwrap();
        assert_eq!(out.item.gold, OptionKey::D);
    }

    #[test]
    fn missing_key_is_a_parse_error_with_raw_reply() {
        let generator = generator_with_reply(r#"{"A": "Paris", "B": "Lyon", "C": "Nice"}"#);
        let err =
            synthesize_options(&raw("q1"), &generator, 0, 3, SourceDataset::Custom).unwrap_err();
        match err {
            BuildError::Parse { reason, raw } => {
                assert!(reason.contains("missing key D"), "reason: {reason}");
                assert!(raw.contains("Paris"));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn missing_gold_exhausts_retries() {
        let generator = generator_with_reply(
            r#"{"A": "Lyon", "B": "Nice", "C": "Marseille", "D": "Toulouse"}"#,
        );
        let err =
            synthesize_options(&raw("q1"), &generator, 0, 3, SourceDataset::Custom).unwrap_err();
        match err {
            BuildError::GenerationFailed { attempts, last_failure } => {
                assert_eq!(attempts, 3);
                assert!(last_failure.contains("gold answer"));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn normalized_gold_is_accepted_and_rewritten() {
        let generator = generator_with_reply(
            r#"{"A": "  paris ", "B": "Lyon", "C": "Nice", "D": "Marseille"}"#,
        );
        let out = synthesize_options(&raw("q1"), &generator, 0, 3, SourceDataset::Custom).unwrap();
        assert_eq!(out.gold_match, GoldMatch::Normalized);
        // Rewritten so the verbatim-copy invariant holds on the final item.
        assert_eq!(out.item.option_text(out.item.gold), "Paris");
        assert!(validate_item(&out.item).is_empty());
    }

    #[test]
    fn json_wrapped_in_prose_still_parses() {
        let generator = generator_with_reply(
            "Sure! Here you go:\n{\"A\": \"Paris\", \"B\": \"Lyon\", \"C\": \"Nice\", \"D\": \"Marseille\"}\nEnjoy.",
        );
        let out = synthesize_options(&raw("q1"), &generator, 0, 3, SourceDataset::Custom).unwrap();
        assert_eq!(out.item.gold, OptionKey::A);
    }

    #[test]
    fn duplicate_options_fail_validation_and_retry() {
        let generator = generator_with_reply(
            r#"{"A": "Paris", "B": "Paris", "C": "Nice", "D": "Marseille"}"#,
        );
        let err =
            synthesize_options(&raw("q1"), &generator, 0, 2, SourceDataset::Custom).unwrap_err();
        match err {
            BuildError::GenerationFailed { attempts, last_failure } => {
                assert_eq!(attempts, 2);
                assert!(last_failure.contains("duplicates"));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn downsample_is_deterministic_and_sized() {
        let items: Vec<u32> = (0..1000).collect();
        let a = downsample(&items, 100, 7).unwrap();
        let b = downsample(&items, 100, 7).unwrap();
        let c = downsample(&items, 100, 8).unwrap();
        assert_eq!(a.len(), 100);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn downsample_full_size_is_a_permutation() {
        let items: Vec<u32> = (0..50).collect();
        let mut sampled = downsample(&items, 50, 3).unwrap();
        sampled.sort_unstable();
        assert_eq!(sampled, items);
    }

    #[test]
    fn downsample_oversize_is_an_error() {
        let items = vec![1, 2, 3];
        let err = downsample(&items, 4, 0).unwrap_err();
        assert!(matches!(err, BuildError::Size { requested: 4, available: 3 }));
    }

    #[test]
    fn paper_scale_downsample() {
        let items: Vec<u32> = (0..73_620).collect();
        let sampled = downsample(&items, 3_000, 42).unwrap();
        assert_eq!(sampled.len(), 3_000);
    }

    #[test]
    fn stats_count_by_source_and_gold() {
        let generator = generator_with_reply(
            r#"{"A": "Paris", "B": "Lyon", "C": "Nice", "D": "Marseille"}"#,
        );
        let items: Vec<McqaItem> = (0..100)
            .map(|i| {
                synthesize_options(&raw(&format!("q{i}")), &generator, 0, 3, SourceDataset::ViQuAE)
                    .unwrap()
                    .item
            })
            .collect();
        let s = stats(&items);
        assert_eq!(s.count, 100);
        assert_eq!(s.per_source.get("viquae"), Some(&100));
        assert_eq!(s.gold_distribution.get(&OptionKey::A), Some(&100));
        // 100 < 200 items: skew detection does not engage.
        assert!(!s.gold_skewed());
    }

    #[test]
    fn stats_on_empty_list_are_zero() {
        let s = stats(&[]);
        assert_eq!(s.count, 0);
        assert!(s.per_source.is_empty());
        assert!(s.gold_distribution.is_empty());
        assert_eq!(s.dominant_gold_share(), None);
    }

    #[test]
    fn skew_warning_engages_at_scale() {
        let mut s = DatasetStats {
            count: 250,
            ..DatasetStats::default()
        };
        s.gold_distribution.insert(OptionKey::A, 240);
        s.gold_distribution.insert(OptionKey::B, 10);
        assert!(s.gold_skewed());
        s.gold_distribution.insert(OptionKey::A, 120);
        s.gold_distribution.insert(OptionKey::B, 130);
        assert!(!s.gold_skewed());
    }

    #[test]
    fn batch_build_skips_failures() {
        let generator = SyntheticBackend::new(BackendCapabilities::all())
            .rule(
                SyntheticRule::new(SyntheticResponse::Text {
                    text: "garbage".to_string(),
                })
                .when_prompt_contains("Question: broken"),
            )
            .rule(SyntheticRule::new(SyntheticResponse::Text {
                text: r#"{"A": "Paris", "B": "Lyon", "C": "Nice", "D": "Marseille"}"#.to_string(),
            }));
        let mut bad = raw("q-bad");
        bad.question = "broken".to_string();
        let raws = vec![raw("q1"), bad, raw("q2")];
        let (items, stats) = build_dataset(&raws, &generator, &BuilderConfig::default());
        assert_eq!(items.len(), 2);
        assert_eq!(stats.n_built, 2);
        assert_eq!(stats.n_skipped, 1);
        assert_eq!(stats.failures[0].0, "q-bad");
        for item in &items {
            assert!(validate_item(item).is_empty());
        }
    }
}
