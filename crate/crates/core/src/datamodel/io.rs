//! Line-oriented JSON file handling: one record per line.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("serialization failed: {0}")]
    Serialize(#[source] serde_json::Error),
}

/// Parse records from a JSON-lines string. Blank lines are ignored.
pub fn from_jsonl_str<T: DeserializeOwned>(content: &str) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record =
            serde_json::from_str(line).map_err(|source| JsonlError::Parse { line: idx + 1, source })?;
        out.push(record);
    }
    Ok(out)
}

/// Render records as a JSON-lines string, one compact object per line.
pub fn to_jsonl_string<T: Serialize>(records: &[T]) -> Result<String, JsonlError> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).map_err(JsonlError::Serialize)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let content = fs::read_to_string(path)?;
    from_jsonl_str(&content)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), JsonlError> {
    let content = to_jsonl_string(records)?;
    let mut file = fs::File::create(path)?;
    file.write_all(content.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{McqaItem, OptionKey, SourceDataset};
    use std::collections::BTreeMap;

    fn sample_item() -> McqaItem {
        let mut options = BTreeMap::new();
        options.insert(OptionKey::A, "Paris".to_string());
        options.insert(OptionKey::B, "Lyon".to_string());
        options.insert(OptionKey::C, "Nice".to_string());
        options.insert(OptionKey::D, "Marseille".to_string());
        McqaItem {
            id: "q1".to_string(),
            question: "Where?".to_string(),
            entity_name: "Eiffel Tower".to_string(),
            image_ref: "img/t.jpg".to_string(),
            options,
            gold: OptionKey::A,
            source_dataset: SourceDataset::ViQuAE,
            gold_answer: Some("Paris".to_string()),
            aliases: vec!["La Tour Eiffel".to_string()],
        }
    }

    #[test]
    fn round_trip_is_identical() {
        let items = vec![sample_item()];
        let text = to_jsonl_string(&items).unwrap();
        let parsed: Vec<McqaItem> = from_jsonl_str(&text).unwrap();
        assert_eq!(parsed, items);
        // A second serialization is byte-identical.
        assert_eq!(to_jsonl_string(&parsed).unwrap(), text);
    }

    #[test]
    fn blank_lines_are_skipped() {
        let items = vec![sample_item()];
        let mut text = to_jsonl_string(&items).unwrap();
        text.push_str("\n\n");
        let parsed: Vec<McqaItem> = from_jsonl_str(&text).unwrap();
        assert_eq!(parsed.len(), 1);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "{\"id\": 1}\nnot json\n";
        let err = from_jsonl_str::<McqaItem>(text).unwrap_err();
        match err {
            JsonlError::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("items.jsonl");
        let items = vec![sample_item(), sample_item()];
        write_jsonl(&path, &items).unwrap();
        let parsed: Vec<McqaItem> = read_jsonl(&path).unwrap();
        assert_eq!(parsed, items);
    }
}
