//! Replay a feedback log and show which token positions end up with targets
//! under each regularization policy.
//!
//! cargo run -p exdebug-core --example feedback_targets

use exdebug_core::data::Example;
use exdebug_core::model::Prediction;
use exdebug_core::prelude::*;

fn example(id: &str, words: &[&str]) -> Example {
    Example {
        id: id.into(),
        token_ids: (2..2 + words.len()).collect(),
        raw_tokens: words.iter().map(|w| w.to_string()).collect(),
        label: 0,
    }
}

fn main() -> exdebug_core::Result<()> {
    let data = Dataset::new(
        vec![
            example("a", &["great", "decoy", "film"]),
            example("b", &["dull", "decoy", "plot"]),
        ],
        2,
        Split::Train,
    )?;
    // "a" is classified correctly, "b" is not.
    let predictions = vec![
        Prediction { example_id: "a".into(), logits: vec![1.0, 0.0], predicted: 0, correct: true },
        Prediction { example_id: "b".into(), logits: vec![0.0, 1.0], predicted: 1, correct: false },
    ];
    let log = vec![
        FeedbackOp::task(OpKind::Remove, "Decoy", 0),
        FeedbackOp::instance(OpKind::Add, "great", "a", 1),
        FeedbackOp::instance(OpKind::Add, "film", "a", 2),
        FeedbackOp::instance(OpKind::Reset, "film", "a", 3),
    ];
    let state = apply_feedback(&log)?;
    println!("{} ops in the log, {} live", log.len(), state.len());
    for policy in RegularizationPolicy::ALL {
        let targets = build_targets(&state, &predictions, &data, policy)?;
        let shown: Vec<String> = targets
            .iter()
            .map(|((id, pos), t)| format!("{id}:{}={}", data.get(id).unwrap().raw_tokens[*pos], t.value))
            .collect();
        println!("{:<15} {}", policy.name(), shown.join("  "));
    }
    Ok(())
}
