//! Train a classifier on a JSONL dataset (or the synthetic benchmark when no
//! path is given) and report held-out accuracy.
//!
//! cargo run --release -p exdebug-core --example train_baseline [train.jsonl [eval.jsonl]]

use std::path::Path;

use exdebug_core::prelude::*;

fn main() -> exdebug_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (train, eval, vocab) = match args.as_slice() {
        [] => {
            let b = generate_synthetic(&SyntheticSpec::default())?;
            (b.train, b.id_eval, b.vocab)
        }
        [train, rest @ ..] => {
            let (train, vocab) = load_dataset(Path::new(train), None, 1, Split::Train)?;
            let eval = match rest.first() {
                Some(p) => load_dataset(Path::new(p), Some(&vocab), 1, Split::IdEval)?.0,
                None => train.clone(),
            };
            (train, eval, vocab)
        }
    };
    let init = TextClassifier::new(vocab.len(), train.num_classes(), &ModelConfig::default())?;
    println!("vocab {} | train {} | eval {}", vocab.len(), train.len(), eval.len());
    println!("before training  acc {:.3}", evaluate(&init, &eval)?);
    let model = train_baseline(&init, &train, &TrainConfig::default())?;
    println!("after training   acc {:.3}", evaluate(&model, &eval)?);
    Ok(())
}
