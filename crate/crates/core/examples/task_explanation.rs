//! Rank vocabulary words by their mean attribution across a dataset. On the
//! synthetic benchmark the decoy word sits at the top.
//!
//! cargo run --release -p exdebug-core --example task_explanation [top_k]

use exdebug_core::prelude::*;

fn main() -> exdebug_core::Result<()> {
    let top_k: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let bench = generate_synthetic(&SyntheticSpec::default())?;
    let init = TextClassifier::new(bench.vocab.len(), 2, &ModelConfig::default())?;
    let model = train_baseline(&init, &bench.train, &TrainConfig::default())?;
    let task = build_task_explanation(&model, &bench.train, AttributionMethod::InputXGradient, top_k)?;
    println!("{:<4} {:<10} {:>8} {:>8}", "rank", "word", "mean", "support");
    for (rank, e) in task.entries.iter().enumerate() {
        println!("{:<4} {:<10} {:>8.3} {:>8}", rank + 1, e.word, e.mean_importance, e.support.len());
    }
    Ok(())
}
