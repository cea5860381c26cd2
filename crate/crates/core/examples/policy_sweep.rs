//! Run the policy × loss grid from a JSON plan and print the CSV table.
//!
//! cargo run --release -p exdebug-core --example policy_sweep [plan.json]

use std::path::{Path, PathBuf};

use exdebug_core::sim::experiment::SweepPlan;

fn main() -> exdebug_core::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/plans/sweep_synthetic.json"));
    let plan = SweepPlan::from_file(&path)?;
    let table = plan.run(path.parent().unwrap_or(Path::new(".")))?;
    table.write_csv(std::io::stdout())
}
