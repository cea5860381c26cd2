use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use exdebug_core::sim::budget::save_budget_csv;
use exdebug_core::sim::experiment::{BudgetPlan, SweepPlan};
use exdebug_service::{router, AppState, DATA_DIR_ENV};

#[derive(Parser)]
#[command(name = "exdebug", version, about = "Explanation-based debugging for text classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP debug service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = DATA_DIR_ENV, default_value = "exdebug-data")]
        data_dir: PathBuf,
    },
    /// Run a policy × loss sweep described by a JSON plan and write CSV.
    RunSweep {
        plan: PathBuf,
        /// Overrides the plan's `output`; stdout when neither is set.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Simulate annotation budgets (seconds) and write CSV.
    SimulateBudget {
        #[arg(long, value_delimiter = ',', required = true)]
        budgets: Vec<f64>,
        /// JSON plan; synthetic defaults when omitted.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        annotators: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Serve { port, host, data_dir } => serve(&host, port, data_dir),
        Command::RunSweep { plan, output } => {
            let base = plan.parent().map(PathBuf::from).unwrap_or_default();
            let plan = SweepPlan::from_file(&plan)?;
            let table = plan.run(&base)?;
            match output.or(plan.output.map(|p| base.join(p))) {
                Some(path) => table.save_csv(&path)?,
                None => table.write_csv(std::io::stdout())?,
            }
            Ok(())
        }
        Command::SimulateBudget {
            budgets,
            plan,
            annotators,
            output,
        } => {
            let mut plan: BudgetPlan = match plan {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => BudgetPlan::default(),
            };
            if let Some(n) = annotators {
                plan.annotators = n;
            }
            let points = plan.run(&budgets)?;
            match output {
                Some(path) => save_budget_csv(&points, &path)?,
                None => exdebug_core::sim::budget::write_budget_csv(&points, std::io::stdout())?,
            }
            Ok(())
        }
    }
}

#[tokio::main]
async fn serve(host: &str, port: u16, data_dir: PathBuf) -> Result<(), Box<dyn std::error::Error>> {
    let state = Arc::new(AppState::open(&data_dir)?);
    tracing::info!(data_dir = %data_dir.display(), sessions = state.list().len(), "recovered sessions");
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
