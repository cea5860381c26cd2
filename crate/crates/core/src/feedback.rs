//! Human feedback on explanations and the regularization targets derived
//! from it.
//!
//! A feedback log is an append-only list of [`FeedbackOp`]s. Replaying it
//! resolves to a set of live operations, one per `(scope, word, example)`
//! key: the last write wins and `reset` removes the key. The live set, the
//! current predictions and a [`RegularizationPolicy`] together determine a
//! [`TargetMap`]: `0.0` for every position of a removed word, `1.0` for an
//! added one.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Prediction;
use crate::vocab::{normalize_token, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Instance,
    Task,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Add,
    Remove,
    Reset,
}

impl OpKind {
    /// Target value an op asks for; `None` for reset.
    pub fn target(self) -> Option<f64> {
        match self {
            OpKind::Add => Some(1.0),
            OpKind::Remove => Some(0.0),
            OpKind::Reset => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackOp {
    pub scope: Scope,
    pub op: OpKind,
    pub word: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example_id: Option<String>,
    pub timestamp: u64,
}

impl FeedbackOp {
    pub fn instance(op: OpKind, word: &str, example_id: &str, timestamp: u64) -> Self {
        Self {
            scope: Scope::Instance,
            op,
            word: word.to_string(),
            example_id: Some(example_id.to_string()),
            timestamp,
        }
    }

    pub fn task(op: OpKind, word: &str, timestamp: u64) -> Self {
        Self {
            scope: Scope::Task,
            op,
            word: word.to_string(),
            example_id: None,
            timestamp,
        }
    }

    pub fn key(&self) -> FeedbackKey {
        FeedbackKey {
            scope: self.scope,
            word: normalize_token(&self.word),
            example_id: self.example_id.clone(),
        }
    }

    /// Structural checks: instance ops carry an example id, task ops do not.
    pub fn validate(&self) -> Result<()> {
        if self.word.trim().is_empty() {
            return Err(Error::Validation("feedback word is empty".into()));
        }
        match (self.scope, &self.example_id) {
            (Scope::Instance, None) => Err(Error::Validation(
                "instance-scope feedback requires an example_id".into(),
            )),
            (Scope::Task, Some(_)) => Err(Error::Validation(
                "task-scope feedback must not carry an example_id".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Checks the op against a dataset and vocabulary: instance ops must
    /// reference an existing example containing the word, task ops an
    /// in-vocabulary word.
    pub fn validate_against(&self, data: &Dataset, vocab: &Vocabulary) -> Result<()> {
        self.validate()?;
        match self.scope {
            Scope::Instance => {
                let id = self.example_id.as_deref().unwrap_or_default();
                let example = data
                    .get(id)
                    .ok_or_else(|| Error::Validation(format!("unknown example {id:?}")))?;
                if !example.contains_word(&self.word) {
                    return Err(Error::Validation(format!(
                        "example {id:?} does not contain {:?}",
                        self.word
                    )));
                }
            }
            Scope::Task => {
                if !vocab.contains(&self.word) {
                    return Err(Error::Validation(format!(
                        "{:?} is not in the vocabulary",
                        self.word
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeedbackKey {
    pub scope: Scope,
    pub word: String,
    pub example_id: Option<String>,
}

/// Live feedback after reset resolution.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeedbackState {
    live: BTreeMap<FeedbackKey, FeedbackOp>,
}

impl FeedbackState {
    pub fn get(&self, key: &FeedbackKey) -> Option<&FeedbackOp> {
        self.live.get(key)
    }

    pub fn live(&self) -> impl Iterator<Item = &FeedbackOp> {
        self.live.values()
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    /// Folds one more op into the state.
    pub fn apply(&mut self, op: &FeedbackOp) {
        let key = op.key();
        match op.op {
            OpKind::Reset => {
                self.live.remove(&key);
            }
            OpKind::Add | OpKind::Remove => {
                self.live.insert(key, op.clone());
            }
        }
    }
}

/// Replays a timestamp-ordered log. Reset of a key with no live op is a
/// no-op.
pub fn apply_feedback(log: &[FeedbackOp]) -> Result<FeedbackState> {
    let mut state = FeedbackState::default();
    let mut last = None;
    for op in log {
        op.validate()?;
        if let Some(prev) = last {
            if op.timestamp < prev {
                return Err(Error::Argument(format!(
                    "feedback log out of order: timestamp {} after {prev}",
                    op.timestamp
                )));
            }
        }
        last = Some(op.timestamp);
        state.apply(op);
    }
    Ok(state)
}

/// Which examples receive regularization targets, by prediction
/// correctness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizationPolicy {
    #[default]
    CorrectOnly,
    IncorrectOnly,
    All,
}

impl RegularizationPolicy {
    pub const ALL: [RegularizationPolicy; 3] = [
        RegularizationPolicy::CorrectOnly,
        RegularizationPolicy::IncorrectOnly,
        RegularizationPolicy::All,
    ];

    pub fn admits(self, correct: bool) -> bool {
        match self {
            RegularizationPolicy::CorrectOnly => correct,
            RegularizationPolicy::IncorrectOnly => !correct,
            RegularizationPolicy::All => true,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RegularizationPolicy::CorrectOnly => "correct_only",
            RegularizationPolicy::IncorrectOnly => "incorrect_only",
            RegularizationPolicy::All => "all",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEntry {
    pub value: f64,
    pub source: FeedbackOp,
}

/// Sparse targets keyed by `(example_id, token position)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TargetMap {
    entries: BTreeMap<(String, usize), TargetEntry>,
}

impl TargetMap {
    /// Inserts the target implied by `source`. On a key collision the entry
    /// from the later op wins; ties keep the newer insert.
    pub fn insert_from(&mut self, example_id: &str, position: usize, source: &FeedbackOp) {
        let Some(value) = source.op.target() else {
            return;
        };
        self.insert_entry(
            (example_id.to_string(), position),
            TargetEntry {
                value,
                source: source.clone(),
            },
        );
    }

    fn insert_entry(&mut self, key: (String, usize), entry: TargetEntry) {
        assert!(
            entry.value == 0.0 || entry.value == 1.0,
            "target values are binary"
        );
        match self.entries.get(&key) {
            Some(existing) if existing.source.timestamp > entry.source.timestamp => {}
            _ => {
                self.entries.insert(key, entry);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, example_id: &str, position: usize) -> Option<&TargetEntry> {
        self.entries.get(&(example_id.to_string(), position))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, usize), &TargetEntry)> {
        self.entries.iter()
    }

    /// `(position, value)` pairs for one example, by position.
    pub fn for_example(&self, example_id: &str) -> Vec<(usize, f64)> {
        let lo = (example_id.to_string(), 0);
        let hi = (example_id.to_string(), usize::MAX);
        self.entries
            .range(lo..=hi)
            .map(|((_, pos), entry)| (*pos, entry.value))
            .collect()
    }

    pub fn example_ids(&self) -> impl Iterator<Item = &str> {
        let mut last: Option<&str> = None;
        self.entries.keys().filter_map(move |(id, _)| {
            if last == Some(id.as_str()) {
                None
            } else {
                last = Some(id.as_str());
                last
            }
        })
    }
}

/// Union of maps; conflicting keys resolve to the later-timestamped op.
pub fn merge_target_maps(maps: &[TargetMap]) -> TargetMap {
    let mut out = TargetMap::default();
    for map in maps {
        for (key, entry) in &map.entries {
            out.insert_entry(key.clone(), entry.clone());
        }
    }
    out
}

fn prediction_index(predictions: &[Prediction]) -> HashMap<&str, &Prediction> {
    predictions
        .iter()
        .map(|p| (p.example_id.as_str(), p))
        .collect()
}

/// Instance-scope targets. Only correctly predicted examples receive them.
pub fn build_targets_instance(
    state: &FeedbackState,
    predictions: &[Prediction],
    data: &Dataset,
) -> Result<TargetMap> {
    let preds = prediction_index(predictions);
    let mut map = TargetMap::default();
    for op in state.live().filter(|op| op.scope == Scope::Instance) {
        let id = op.example_id.as_deref().unwrap_or_default();
        let prediction = preds.get(id).ok_or_else(|| {
            Error::Consistency(format!("feedback references example {id:?} with no prediction"))
        })?;
        let example = data.get(id).ok_or_else(|| {
            Error::Consistency(format!("feedback references unknown example {id:?}"))
        })?;
        if !prediction.correct {
            continue;
        }
        for position in example.positions_of(&op.word) {
            map.insert_from(id, position, op);
        }
    }
    Ok(map)
}

/// Task-scope targets. A removed word gets `0.0` in every example the
/// policy admits; an added word gets `1.0` only where the prediction is
/// correct and the policy admits it.
pub fn build_targets_task(
    state: &FeedbackState,
    predictions: &[Prediction],
    data: &Dataset,
    policy: RegularizationPolicy,
) -> Result<TargetMap> {
    let preds = prediction_index(predictions);
    let mut map = TargetMap::default();
    let task_ops: Vec<&FeedbackOp> = state.live().filter(|op| op.scope == Scope::Task).collect();
    if task_ops.is_empty() {
        return Ok(map);
    }
    for example in data.examples() {
        let prediction = preds.get(example.id.as_str()).ok_or_else(|| {
            Error::Consistency(format!("no prediction for example {:?}", example.id))
        })?;
        for op in &task_ops {
            let eligible = match op.op {
                OpKind::Remove => policy.admits(prediction.correct),
                OpKind::Add => prediction.correct && policy.admits(true),
                OpKind::Reset => false,
            };
            if !eligible {
                continue;
            }
            for position in example.positions_of(&op.word) {
                map.insert_from(&example.id, position, op);
            }
        }
    }
    Ok(map)
}

/// Instance and task targets merged.
pub fn build_targets(
    state: &FeedbackState,
    predictions: &[Prediction],
    data: &Dataset,
    policy: RegularizationPolicy,
) -> Result<TargetMap> {
    let instance = build_targets_instance(state, predictions, data)?;
    let task = build_targets_task(state, predictions, data, policy)?;
    Ok(merge_target_maps(&[instance, task]))
}

/// One JSON op per line.
pub fn read_feedback_log(path: &Path) -> Result<Vec<FeedbackOp>> {
    let file = File::open(path).map_err(|e| Error::io_at(path, e))?;
    let mut log = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let op: FeedbackOp = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        log.push(op);
    }
    Ok(log)
}

pub fn write_feedback_log(path: &Path, log: &[FeedbackOp]) -> Result<()> {
    let mut file = File::create(path).map_err(|e| Error::io_at(path, e))?;
    for op in log {
        writeln!(file, "{}", serde_json::to_string(op).map_err(std::io::Error::from)?)?;
    }
    Ok(())
}

/// Appends one op and syncs it to disk.
pub fn append_feedback(path: &Path, op: &FeedbackOp) -> Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io_at(path, e))?;
    writeln!(file, "{}", serde_json::to_string(op).map_err(std::io::Error::from)?)?;
    file.sync_data()?;
    Ok(())
}

/// One lowercase word per line; blank lines ignored.
pub fn read_lexicon(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(normalize_token)
        .collect())
}
