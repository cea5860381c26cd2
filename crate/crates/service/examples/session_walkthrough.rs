//! One debugging round through the session API without HTTP: create a
//! session from a dataset, read the task explanation, remove the top word,
//! retrain and read it again. The HTTP routes call the same methods.
//!
//! cargo run --release -p exdebug-service --example session_walkthrough [data_dir]

use std::path::PathBuf;

use exdebug_core::data::write_dataset;
use exdebug_core::prelude::*;
use exdebug_service::session::{retrain_blocking, CreateSession, FeedbackRequest, RetrainRequest, TrainSpec};
use exdebug_service::AppState;

fn main() -> std::result::Result<(), Box<dyn std::error::Error>> {
    let data_dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("exdebug_walkthrough"));
    std::fs::create_dir_all(&data_dir)?;
    let bench = generate_synthetic(&SyntheticSpec::default())?;
    let dataset = data_dir.join("train.jsonl");
    write_dataset(&dataset, &bench.train, &["neg".into(), "pos".into()])?;

    let state = AppState::open(&data_dir)?;
    let session = state.create(CreateSession {
        dataset_path: dataset,
        manifest_path: None,
        model_path: None,
        train: Some(TrainSpec::default()),
        policy: Some(RegularizationPolicy::All),
        er: None,
        display_method: None,
    })?;
    println!("session {} at {}", session.id, session.dir().display());

    let before = session.task_explanation(3)?;
    for e in &before.entries {
        println!("round {}  {:<8} {:.3}", before.round, e.entry.word, e.entry.mean_importance);
    }
    let top = before.entries[0].entry.word.clone();
    let ack = session.post_feedback(FeedbackRequest {
        scope: Scope::Task,
        op: OpKind::Remove,
        word: top.clone(),
        example_id: None,
    })?;
    println!("logged {:?} {:?} '{}' at t={}", ack.op.scope, ack.op.op, ack.op.word, ack.op.timestamp);

    let status = retrain_blocking(&session, RetrainRequest::default())?;
    if let Some(report) = &status.report {
        println!(
            "retrained {} epochs: targeted score {:?} -> {:?}",
            report.epochs_run, report.pre_targeted.removed, report.post_targeted.removed
        );
    }
    let after = session.task_explanation(100_000)?;
    let entry = after.entries.iter().find(|e| e.entry.word == top).expect("word still in vocabulary");
    println!("round {}  {:<8} {:.3} ({:?})", after.round, top, entry.entry.mean_importance, entry.mark);
    Ok(())
}
