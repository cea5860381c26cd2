//! Convert annotation budgets into instance counts for each method and
//! measure OOD accuracy after the simulated instance feedback.
//!
//! cargo run --release -p exdebug-core --example budget_simulation [plan.json]

use exdebug_core::sim::budget::write_budget_csv;
use exdebug_core::sim::experiment::BudgetPlan;

fn main() -> exdebug_core::Result<()> {
    let plan: BudgetPlan = match std::env::args().nth(1) {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?).expect("bad plan"),
        None => BudgetPlan::default(),
    };
    let budgets = [0.0, 900.0, 1800.0, 3600.0];
    let points = plan.run(&budgets)?;
    write_budget_csv(&points, std::io::stdout())
}
