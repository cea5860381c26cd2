//! Train on data with a spurious "decoy" word, tell the model at task scope
//! that the decoy should not matter, and retrain.
//!
//! cargo run --release -p exdebug-core --example debug_decoy [config.json]

use exdebug_core::sim::experiment::{run_decoy_experiment, DecoyExperiment};

fn main() -> exdebug_core::Result<()> {
    let cfg: DecoyExperiment = match std::env::args().nth(1) {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?).expect("bad config"),
        None => DecoyExperiment::default(),
    };
    let (_, out) = run_decoy_experiment(&cfg)?;
    println!("            id      ood     decoy φ");
    println!("baseline    {:.3}   {:.3}   {:.3}", out.baseline_id, out.baseline_ood, out.decoy_before);
    println!("debugged    {:.3}   {:.3}   {:.3}", out.debugged_id, out.debugged_ood, out.decoy_after);
    for r in &out.report.history {
        println!("epoch {:>2}  ce {:.4}  er {:.4}  targets {}", r.epoch, r.task_loss, r.er_loss, r.num_targets);
    }
    Ok(())
}
