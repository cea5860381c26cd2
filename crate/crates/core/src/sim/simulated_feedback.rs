//! Simulated annotators: instance feedback from rationale masks and task
//! feedback from a word lexicon.

use std::collections::{HashMap, HashSet};

use crate::attribution::Explanation;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::feedback::{FeedbackOp, OpKind};
use crate::sim::synthetic::RationaleAnnotation;
use crate::vocab::{normalize_token, Vocabulary};

/// Default salience threshold on normalized scores for simulated removals.
pub const DEFAULT_SALIENCE_THRESHOLD: f64 = 0.5;

/// Walks `rationales` in order and annotates up to `budget_instances`
/// correctly predicted examples. Mask-1 words get an `add`; mask-0 words get
/// a `remove` when their normalized score exceeds `threshold`. Each word is
/// emitted at most once per example, at its first qualifying position.
/// Timestamps count up from `first_timestamp`.
pub fn simulate_instance_feedback(
    rationales: &[RationaleAnnotation],
    data: &Dataset,
    explanations: &[Explanation],
    budget_instances: usize,
    threshold: f64,
    first_timestamp: u64,
) -> Result<Vec<FeedbackOp>> {
    let by_id: HashMap<&str, &Explanation> = explanations
        .iter()
        .map(|e| (e.prediction.example_id.as_str(), e))
        .collect();
    let mut log = Vec::new();
    let mut annotated = 0;
    let mut timestamp = first_timestamp;
    for rationale in rationales {
        if annotated >= budget_instances {
            break;
        }
        let id = rationale.example_id.as_str();
        let example = data
            .get(id)
            .ok_or_else(|| Error::Validation(format!("rationale for unknown example {id:?}")))?;
        if rationale.mask.len() != example.len() {
            return Err(Error::Validation(format!(
                "rationale for {id:?} has {} entries, example has {} tokens",
                rationale.mask.len(),
                example.len()
            )));
        }
        let explanation = by_id
            .get(id)
            .ok_or_else(|| Error::Consistency(format!("no explanation for example {id:?}")))?;
        if !explanation.prediction.correct {
            continue;
        }
        annotated += 1;
        let mut seen = HashSet::new();
        for (pos, token) in example.raw_tokens.iter().enumerate() {
            let word = normalize_token(token);
            if seen.contains(&word) {
                continue;
            }
            let op = if rationale.mask[pos] == 1 {
                OpKind::Add
            } else if explanation.attribution.scores[pos] > threshold {
                OpKind::Remove
            } else {
                continue;
            };
            seen.insert(word.clone());
            log.push(FeedbackOp::instance(op, &word, id, timestamp));
            timestamp += 1;
        }
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TaskFeedback {
    pub log: Vec<FeedbackOp>,
    /// Lexicon words absent from the vocabulary.
    pub skipped: Vec<String>,
}

/// One task-scope `remove` per lexicon word present in `vocab`.
pub fn simulate_task_feedback(
    lexicon: &[String],
    vocab: &Vocabulary,
    first_timestamp: u64,
) -> TaskFeedback {
    let mut out = TaskFeedback::default();
    let mut seen = HashSet::new();
    let mut timestamp = first_timestamp;
    for word in lexicon {
        let word = normalize_token(word.trim());
        if word.is_empty() || !seen.insert(word.clone()) {
            continue;
        }
        if vocab.contains(&word) {
            out.log.push(FeedbackOp::task(OpKind::Remove, &word, timestamp));
            timestamp += 1;
        } else {
            out.skipped.push(word);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::{Method, NormalizedAttribution, Normalization};
    use crate::data::{Example, Split};
    use crate::feedback::Scope;
    use crate::model::Prediction;
    use crate::vocab::tokenize;

    fn fixture() -> (Dataset, Vec<Explanation>) {
        let data = Dataset::new(
            vec![
                Example {
                    id: "a".into(),
                    token_ids: vec![2, 3, 4],
                    raw_tokens: vec!["good".into(), "decoy".into(), "x".into()],
                    label: 1,
                },
                Example {
                    id: "b".into(),
                    token_ids: vec![5, 3],
                    raw_tokens: vec!["bad".into(), "decoy".into()],
                    label: 0,
                },
            ],
            2,
            Split::Train,
        )
        .unwrap();
        let explanation = |id: &str, correct, scores: &[f64]| Explanation {
            prediction: Prediction {
                example_id: id.into(),
                logits: vec![0.0, 0.0],
                predicted: 0,
                correct,
            },
            attribution: NormalizedAttribution {
                example_id: id.into(),
                class: 0,
                method: Method::InputXGradient,
                steps: None,
                normalization: Normalization::AbsMax,
                scores: scores.to_vec(),
            },
        };
        let explanations = vec![
            explanation("a", true, &[0.3, 1.0, 0.6]),
            explanation("b", false, &[0.2, 1.0]),
        ];
        (data, explanations)
    }

    #[test]
    fn all_ones_mask_only_adds() {
        let (data, expl) = fixture();
        let r = [RationaleAnnotation {
            example_id: "a".into(),
            mask: vec![1, 1, 1],
        }];
        let log = simulate_instance_feedback(&r, &data, &expl, 5, 0.5, 0).unwrap();
        assert_eq!(log.len(), 3);
        assert!(log.iter().all(|op| op.op == OpKind::Add && op.scope == Scope::Instance));
    }

    #[test]
    fn zero_budget_is_empty() {
        let (data, expl) = fixture();
        let r = [RationaleAnnotation {
            example_id: "a".into(),
            mask: vec![1, 0, 0],
        }];
        assert!(simulate_instance_feedback(&r, &data, &expl, 0, 0.5, 0).unwrap().is_empty());
    }

    #[test]
    fn rule_on_mixed_mask() {
        let (data, expl) = fixture();
        let r = [
            RationaleAnnotation {
                example_id: "b".into(),
                mask: vec![1, 0],
            },
            RationaleAnnotation {
                example_id: "a".into(),
                mask: vec![1, 0, 0],
            },
        ];
        let log = simulate_instance_feedback(&r, &data, &expl, 5, 0.5, 10).unwrap();
        // "b" is mispredicted and skipped; in "a" both mask-0 tokens exceed 0.5.
        assert_eq!(
            log,
            [
                FeedbackOp::instance(OpKind::Add, "good", "a", 10),
                FeedbackOp::instance(OpKind::Remove, "decoy", "a", 11),
                FeedbackOp::instance(OpKind::Remove, "x", "a", 12),
            ]
        );
    }

    #[test]
    fn mask_length_mismatch_is_rejected() {
        let (data, expl) = fixture();
        let r = [RationaleAnnotation {
            example_id: "a".into(),
            mask: vec![1],
        }];
        assert!(simulate_instance_feedback(&r, &data, &expl, 5, 0.5, 0).is_err());
    }

    #[test]
    fn task_feedback_from_lexicon() {
        let vocab = Vocabulary::build([tokenize("decoy good bad")], 1).unwrap();
        let out = simulate_task_feedback(&["decoy".into()], &vocab, 0);
        assert_eq!(out.log, [FeedbackOp::task(OpKind::Remove, "decoy", 0)]);

        let out = simulate_task_feedback(&["missing".into(), "Good".into()], &vocab, 0);
        assert_eq!(out.skipped, ["missing"]);
        assert_eq!(out.log, [FeedbackOp::task(OpKind::Remove, "good", 0)]);

        assert_eq!(simulate_task_feedback(&[], &vocab, 0), TaskFeedback::default());
    }
}
