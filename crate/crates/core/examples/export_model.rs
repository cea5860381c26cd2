//! Save a trained model and its vocabulary to one archive, load it back and
//! check the predictions agree.
//!
//! cargo run --release -p exdebug-core --example export_model [out.bin]

use std::path::PathBuf;

use exdebug_core::prelude::*;

fn main() -> exdebug_core::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("exdebug_model.bin"));
    let bench = generate_synthetic(&SyntheticSpec::default())?;
    let init = TextClassifier::new(bench.vocab.len(), 2, &ModelConfig::default())?;
    let model = train_baseline(&init, &bench.train, &TrainConfig::default())?;
    export_model(&model, &bench.vocab, &path)?;

    let (loaded, vocab, manifest) = load_model(&path)?;
    println!("wrote {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());
    println!("manifest: {}", serde_json::to_string(&manifest).expect("manifest serializes"));
    assert_eq!(vocab.len(), bench.vocab.len());
    let mut same = true;
    for ex in bench.id_eval.examples() {
        same &= model.forward(ex)?.logits == loaded.forward(ex)?.logits;
    }
    println!("identical logits on {} examples: {same}", bench.id_eval.len());
    Ok(())
}
