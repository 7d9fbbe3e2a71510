//! End-to-end pipeline tests over synthetic, recording, and replay backends.

use std::collections::BTreeMap;

use conflictkit::backend::{
    mc_logits, next_token_logprobs, BackendCapabilities, BackendRequest, BackendResponse,
    RecordingBackend, ReplayBackend, ReplayEntry, RequestMode, SyntheticBackend,
    SyntheticResponse, SyntheticRule, default_surface_forms,
};
use conflictkit::datamodel::{McqaItem, OptionKey, SourceDataset};
use conflictkit::dcd::dcd_from_report;
use conflictkit::detector::{detect, DetectorConfig};
use conflictkit::mitigate::{evaluate_strategy, MitigateConfig, Strategy};

fn item(i: usize) -> McqaItem {
    let cities = ["Arvale", "Brontis", "Corwick", "Dunmore"];
    let mut options = BTreeMap::new();
    for (k, city) in OptionKey::ALL.iter().zip(cities) {
        options.insert(*k, city.to_string());
    }
    McqaItem {
        id: format!("it-{i:02}"),
        question: format!("In which city is Landmark {i:02} located?"),
        entity_name: format!("Landmark {i:02}"),
        image_ref: format!("images/l{i:02}.png"),
        options,
        gold: OptionKey::from_ordinal(i % 4).unwrap(),
        source_dataset: SourceDataset::Custom,
        gold_answer: None,
        aliases: Vec::new(),
    }
}

/// Scripted model: item i is recognized unless i % 5 == 4; the visual answer
/// flips away from the textual one when i % 3 == 0.
fn scripted_backend(items: &[McqaItem]) -> SyntheticBackend {
    let mut backend = SyntheticBackend::new(BackendCapabilities::all());
    for (i, item) in items.iter().enumerate() {
        let recognized = i % 5 != 4;
        let reply = if recognized {
            item.entity_name.clone()
        } else {
            "a nondescript facade".to_string()
        };
        backend.push_rule(
            SyntheticRule::new(SyntheticResponse::Text { text: reply })
                .when_mode(RequestMode::FreeText)
                .when_image_contains(item.image_ref.clone()),
        );

        let textual_key = item.gold;
        let visual_key = if i % 3 == 0 {
            OptionKey::from_ordinal((item.gold.ordinal() + 1) % 4).unwrap()
        } else {
            textual_key
        };
        let mut textual_probs = [0.05; 4];
        textual_probs[textual_key.ordinal()] = 0.85;
        let mut visual_probs = [0.05; 4];
        visual_probs[visual_key.ordinal()] = 0.85;

        // Mitigation re-queries carry a system prompt; route them to gold.
        let mut mitigated = [0.05; 4];
        mitigated[item.gold.ordinal()] = 0.85;
        backend.push_rule(
            SyntheticRule::new(SyntheticResponse::OptionProbs { probs: mitigated })
                .when_mode(RequestMode::OptionLogprobs)
                .when_prompt_contains("You are an expert at question answering.")
                .when_prompt_contains(item.question.clone()),
        );
        backend.push_rule(
            SyntheticRule::new(SyntheticResponse::OptionProbs { probs: textual_probs })
                .when_mode(RequestMode::OptionLogprobs)
                .when_image(false)
                .when_prompt_contains(item.question.clone()),
        );
        backend.push_rule(
            SyntheticRule::new(SyntheticResponse::OptionProbs { probs: visual_probs })
                .when_mode(RequestMode::OptionLogprobs)
                .when_image(true)
                .when_prompt_contains(item.question.clone()),
        );
    }
    backend
}

#[test]
fn recorded_run_replays_to_identical_results() {
    let items: Vec<McqaItem> = (0..15).map(item).collect();
    let recorder = RecordingBackend::new(Box::new(scripted_backend(&items)));
    let config = DetectorConfig::default();

    let live_report = detect(&items, &recorder, &config).unwrap();
    let live_dcd = dcd_from_report(&live_report);
    let live_mitigated = evaluate_strategy(
        &items,
        &live_report,
        &recorder,
        Strategy::AnswerConflict,
        &MitigateConfig::default(),
    )
    .unwrap();

    let replay = ReplayBackend::from_entries(recorder.entries().unwrap()).unwrap();
    let replay_report = detect(&items, &replay, &config).unwrap();
    let replay_dcd = dcd_from_report(&replay_report);
    let replay_mitigated = evaluate_strategy(
        &items,
        &replay_report,
        &replay,
        Strategy::AnswerConflict,
        &MitigateConfig::default(),
    )
    .unwrap();

    assert_eq!(
        serde_json::to_string(&live_report).unwrap(),
        serde_json::to_string(&replay_report).unwrap()
    );
    assert_eq!(
        serde_json::to_string(&live_dcd).unwrap(),
        serde_json::to_string(&replay_dcd).unwrap()
    );
    assert_eq!(
        serde_json::to_string(&live_mitigated).unwrap(),
        serde_json::to_string(&replay_mitigated).unwrap()
    );
}

#[test]
fn replay_runs_are_byte_identical_across_repetitions() {
    let items: Vec<McqaItem> = (0..12).map(item).collect();
    let recorder = RecordingBackend::new(Box::new(scripted_backend(&items)));
    let config = DetectorConfig {
        parallelism: 4,
        ..DetectorConfig::default()
    };
    detect(&items, &recorder, &config).unwrap();
    let replay = ReplayBackend::from_entries(recorder.entries().unwrap()).unwrap();

    let bytes: Vec<String> = (0..3)
        .map(|_| serde_json::to_string(&detect(&items, &replay, &config).unwrap()).unwrap())
        .collect();
    assert_eq!(bytes[0], bytes[1]);
    assert_eq!(bytes[1], bytes[2]);
}

/// A replay fixture answering an option-logprob request with raw next-token
/// logprobs carrying two surface variants of key A: the maximum must win.
#[test]
fn replay_fixture_surface_form_maximum() {
    let forms = default_surface_forms();
    let request = BackendRequest::option_logprobs("pick one", None, forms.clone());

    let mut tokens = BTreeMap::new();
    tokens.insert("A".to_string(), (0.10f64).ln());
    tokens.insert(" A".to_string(), (0.40f64).ln());
    tokens.insert("B".to_string(), (0.20f64).ln());
    tokens.insert("C".to_string(), (0.15f64).ln());
    tokens.insert("D".to_string(), (0.15f64).ln());
    let response = BackendResponse {
        next_token_logps: Some(tokens),
        ..BackendResponse::default()
    };

    let replay = ReplayBackend::from_entries(vec![ReplayEntry {
        request_hash: request.canonical_hash(),
        request: request.clone(),
        response,
    }])
    .unwrap();

    let dist = mc_logits(&replay, "pick one", None, &forms).unwrap();
    assert!((dist.logp(OptionKey::A) - (0.40f64).ln()).abs() < 1e-12);
    assert_eq!(dist.argmax(), OptionKey::A);
}

/// Recorded next-token dumps replay exactly.
#[test]
fn replay_serves_recorded_next_token_distributions() {
    let backend = SyntheticBackend::new(BackendCapabilities::all()).rule(
        SyntheticRule::new(SyntheticResponse::NextTokenProbs {
            probs: vec![
                ("alpha".to_string(), 0.5),
                ("beta".to_string(), 0.3),
                ("gamma".to_string(), 0.2),
            ],
        })
        .when_mode(RequestMode::NextTokenLogprobs),
    );
    let recorder = RecordingBackend::new(Box::new(backend));
    let live = next_token_logprobs(&recorder, "prefix", None).unwrap();

    let replay = ReplayBackend::from_entries(recorder.entries().unwrap()).unwrap();
    let replayed = next_token_logprobs(&replay, "prefix", None).unwrap();
    assert_eq!(live, replayed);
    assert!((replayed["alpha"] - (0.5f64).ln()).abs() < 1e-12);
}

/// Concurrent playback is order-independent: the same report comes out of a
/// parallel run and a serial run.
#[test]
fn parallel_replay_matches_serial_replay() {
    let items: Vec<McqaItem> = (0..20).map(item).collect();
    let recorder = RecordingBackend::new(Box::new(scripted_backend(&items)));
    detect(&items, &recorder, &DetectorConfig::default()).unwrap();
    let replay = ReplayBackend::from_entries(recorder.entries().unwrap()).unwrap();

    let serial = detect(&items, &replay, &DetectorConfig::default()).unwrap();
    let parallel = detect(
        &items,
        &replay,
        &DetectorConfig {
            parallelism: 8,
            ..DetectorConfig::default()
        },
    )
    .unwrap();
    assert_eq!(
        serde_json::to_string(&serial).unwrap(),
        serde_json::to_string(&parallel).unwrap()
    );
}
