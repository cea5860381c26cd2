//! Labeled text datasets and the JSONL ingestion format.
//!
//! A dataset file holds one JSON object per line:
//!
//! ```text
//! {"id": "e1", "text": "good movie", "label": 1}
//! {"id": "e2", "tokens": ["Bad", "plot"], "label": 0}
//! ```
//!
//! The class count lives in a sidecar manifest next to the data file
//! (`train.jsonl` -> `train.manifest.json`):
//!
//! ```text
//! {"num_classes": 2, "labels": ["negative", "positive"]}
//! ```

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{normalize_token, tokenize, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    IdEval,
    OodEval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub num_classes: usize,
    #[serde(default)]
    pub labels: Vec<String>,
}

impl Manifest {
    pub fn binary() -> Self {
        Self {
            num_classes: 2,
            labels: vec!["0".into(), "1".into()],
        }
    }
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
    pub label: usize,
}

impl Record {
    /// Explicit `tokens` pass through verbatim; `text` is whitespace split
    /// and lowercased.
    pub fn raw_tokens(&self) -> Vec<String> {
        match (&self.tokens, &self.text) {
            (Some(tokens), _) => tokens.clone(),
            (None, Some(text)) => tokenize(text),
            (None, None) => Vec::new(),
        }
    }
}

/// Records plus manifest, before vocabulary encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub records: Vec<Record>,
    pub manifest: Manifest,
}

impl RawDataset {
    pub fn token_streams(&self) -> impl Iterator<Item = Vec<String>> + '_ {
        self.records.iter().map(Record::raw_tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub token_ids: Vec<usize>,
    pub raw_tokens: Vec<String>,
    pub label: usize,
}

impl Example {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Positions whose token matches `word` (exact lowercase match).
    pub fn positions_of(&self, word: &str) -> Vec<usize> {
        let word = normalize_token(word);
        self.raw_tokens
            .iter()
            .enumerate()
            .filter(|(_, token)| normalize_token(token) == word)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn contains_word(&self, word: &str) -> bool {
        let word = normalize_token(word);
        self.raw_tokens.iter().any(|t| normalize_token(t) == word)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    num_classes: usize,
    split: Split,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, num_classes: usize, split: Split) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Validation("num_classes must be positive".into()));
        }
        let mut index = HashMap::with_capacity(examples.len());
        for (i, ex) in examples.iter().enumerate() {
            if ex.token_ids.is_empty() {
                return Err(Error::Validation(format!("example {:?} has no tokens", ex.id)));
            }
            if ex.token_ids.len() != ex.raw_tokens.len() {
                return Err(Error::Validation(format!(
                    "example {:?}: {} token ids but {} raw tokens",
                    ex.id,
                    ex.token_ids.len(),
                    ex.raw_tokens.len()
                )));
            }
            if ex.label >= num_classes {
                return Err(Error::Validation(format!(
                    "example {:?}: label {} outside [0, {num_classes})",
                    ex.id, ex.label
                )));
            }
            if index.insert(ex.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate example id {:?}", ex.id)));
            }
        }
        Ok(Self {
            examples,
            num_classes,
            split,
            index,
        })
    }

    /// Encodes raw records against `vocab`; unseen tokens map to the unknown id.
    pub fn encode(raw: &RawDataset, vocab: &Vocabulary, split: Split) -> Result<Self> {
        let examples = raw
            .records
            .iter()
            .map(|record| {
                let raw_tokens = record.raw_tokens();
                Example {
                    id: record.id.clone(),
                    token_ids: raw_tokens.iter().map(|t| vocab.encode(t)).collect(),
                    raw_tokens,
                    label: record.label,
                }
            })
            .collect();
        Self::new(examples, raw.manifest.num_classes, split)
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.index.get(id).map(|&i| &self.examples[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Back to the file representation, keeping raw tokens verbatim.
    pub fn to_records(&self) -> Vec<Record> {
        self.examples
            .iter()
            .map(|ex| Record {
                id: ex.id.clone(),
                text: None,
                tokens: Some(ex.raw_tokens.clone()),
                label: ex.label,
            })
            .collect()
    }
}

/// `data/train.jsonl` -> `data/train.manifest.json`.
pub fn manifest_path_for(dataset: &Path) -> PathBuf {
    let stem = dataset
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    dataset.with_file_name(format!("{stem}.manifest.json"))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Validation(format!("manifest {}: {e}", path.display())))?;
    if manifest.num_classes == 0 {
        return Err(Error::Validation("manifest declares zero classes".into()));
    }
    if !manifest.labels.is_empty() && manifest.labels.len() != manifest.num_classes {
        return Err(Error::Validation(format!(
            "manifest lists {} labels for {} classes",
            manifest.labels.len(),
            manifest.num_classes
        )));
    }
    Ok(manifest)
}

/// Parses dataset lines. Line numbers in errors are 1-based.
pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let file = File::open(path).map_err(|e| Error::io_at(path, e))?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if record.text.is_none() && record.tokens.is_none() {
            return Err(Error::Parse {
                line: line_no,
                message: "either \"text\" or \"tokens\" is required".into(),
            });
        }
        if record.raw_tokens().is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "example has no tokens".into(),
            });
        }
        if !seen.insert(record.id.clone()) {
            return Err(Error::Validation(format!(
                "line {line_no}: duplicate example id {:?}",
                record.id
            )));
        }
        records.push(record);
    }
    Ok(records)
}

/// Reads a dataset file and its sidecar manifest, validating labels.
pub fn load_raw(path: &Path) -> Result<RawDataset> {
    load_raw_with_manifest(path, &manifest_path_for(path))
}

pub fn load_raw_with_manifest(path: &Path, manifest_path: &Path) -> Result<RawDataset> {
    let manifest = read_manifest(manifest_path)?;
    let records = read_records(path)?;
    if let Some(bad) = records.iter().find(|r| r.label >= manifest.num_classes) {
        return Err(Error::Validation(format!(
            "example {:?}: label {} outside [0, {})",
            bad.id, bad.label, manifest.num_classes
        )));
    }
    Ok(RawDataset { records, manifest })
}

/// Loads a dataset file. Without a vocabulary, one is built from the file
/// itself with `min_count`.
pub fn load_dataset(
    path: &Path,
    vocab: Option<&Vocabulary>,
    min_count: usize,
    split: Split,
) -> Result<(Dataset, Vocabulary)> {
    let raw = load_raw(path)?;
    let vocab = match vocab {
        Some(v) => v.clone(),
        None => Vocabulary::build(raw.token_streams(), min_count)?,
    };
    let dataset = Dataset::encode(&raw, &vocab, split)?;
    Ok((dataset, vocab))
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io_at(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `dataset` and its sidecar manifest.
pub fn write_dataset(path: &Path, dataset: &Dataset, labels: &[String]) -> Result<()> {
    write_records(path, &dataset.to_records())?;
    let manifest = Manifest {
        num_classes: dataset.num_classes(),
        labels: labels.to_vec(),
    };
    let manifest_path = manifest_path_for(path);
    std::fs::write(
        &manifest_path,
        serde_json::to_vec(&manifest).map_err(std::io::Error::from)?,
    )
    .map_err(|e| Error::io_at(&manifest_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(lines: &str, num_classes: usize) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        std::fs::write(&path, lines).unwrap();
        std::fs::write(
            manifest_path_for(&path),
            format!("{{\"num_classes\": {num_classes}, \"labels\": []}}"),
        )
        .unwrap();
        (dir, path)
    }

    #[test]
    fn text_line_maps_to_example() {
        let (_dir, path) = fixture("{\"id\":\"e1\",\"text\":\"good movie\",\"label\":1}\n", 2);
        let (data, vocab) = load_dataset(&path, None, 1, Split::Train).unwrap();
        let ex = &data.examples()[0];
        assert_eq!(ex.len(), 2);
        assert_eq!(ex.label, 1);
        assert_eq!(ex.raw_tokens, ["good", "movie"]);
        assert_eq!(ex.token_ids[0], vocab.get("good").unwrap());
    }

    #[test]
    fn tokens_array_passes_through() {
        let (_dir, path) = fixture(
            "{\"id\":\"e1\",\"tokens\":[\"a\",\"b\",\"c\"],\"label\":0}\n",
            2,
        );
        let (data, _) = load_dataset(&path, None, 1, Split::Train).unwrap();
        assert_eq!(data.examples()[0].raw_tokens, ["a", "b", "c"]);
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let (_dir, path) = fixture(
            "{\"id\":\"e1\",\"text\":\"a\",\"label\":0}\n{\"id\":\"e1\",\"text\":\"b\",\"label\":1}\n",
            2,
        );
        assert!(matches!(
            load_dataset(&path, None, 1, Split::Train),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn malformed_line_names_line_number() {
        let (_dir, path) = fixture(
            "{\"id\":\"e1\",\"text\":\"a\",\"label\":0}\n{\"id\": oops}\n",
            2,
        );
        match load_dataset(&path, None, 1, Split::Train) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn label_outside_manifest_is_rejected() {
        let (_dir, path) = fixture("{\"id\":\"e1\",\"text\":\"a\",\"label\":2}\n", 2);
        assert!(matches!(
            load_dataset(&path, None, 1, Split::Train),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn write_then_load_preserves_examples() {
        let (_dir, path) = fixture(
            "{\"id\":\"a\",\"text\":\"x y\",\"label\":0}\n{\"id\":\"b\",\"tokens\":[\"Y\",\"z\"],\"label\":1}\n",
            2,
        );
        let (data, vocab) = load_dataset(&path, None, 1, Split::Train).unwrap();
        let out = path.with_file_name("copy.jsonl");
        write_dataset(&out, &data, &[]).unwrap();
        let (again, _) = load_dataset(&out, Some(&vocab), 1, Split::Train).unwrap();
        assert_eq!(again.examples(), data.examples());
    }

    #[test]
    fn positions_match_lowercase() {
        let ex = Example {
            id: "e".into(),
            token_ids: vec![2, 3, 2],
            raw_tokens: vec!["Muslims".into(), "are".into(), "muslims".into()],
            label: 0,
        };
        assert_eq!(ex.positions_of("muslims"), [0, 2]);
    }
}
