//! Compare input×gradient and integrated-gradients attributions on one
//! example of a trained model.
//!
//! cargo run --release -p exdebug-core --example explain_instance [example_index]

use exdebug_core::prelude::*;

fn main() -> exdebug_core::Result<()> {
    let index: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let bench = generate_synthetic(&SyntheticSpec::default())?;
    let init = TextClassifier::new(bench.vocab.len(), 2, &ModelConfig::default())?;
    let model = train_baseline(&init, &bench.train, &TrainConfig::default())?;
    let ex = &bench.train.examples()[index.min(bench.train.len() - 1)];

    let ixg = explain(&model, ex, AttributionMethod::InputXGradient, Normalization::AbsMax)?;
    let ig = explain(&model, ex, AttributionMethod::integrated_gradients(), Normalization::AbsMax)?;
    let p = &ixg.prediction;
    println!("{}  label {}  predicted {}  logits {:.3?}", ex.id, ex.label, p.predicted, p.logits);
    println!("{:<12} {:>8} {:>8}", "token", "ixg", "ig");
    for (i, tok) in ex.raw_tokens.iter().enumerate() {
        println!("{tok:<12} {:>8.3} {:>8.3}", ixg.attribution.scores[i], ig.attribution.scores[i]);
    }
    Ok(())
}
