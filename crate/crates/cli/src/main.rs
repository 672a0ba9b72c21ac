//! `elicit`: fit, run, verify, plan, sensitivity and report.

mod commands;
mod config;
mod manifest;
mod session;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Output(String),
    #[error(transparent)]
    Core(#[from] group_elicit::Error),
}

#[derive(Debug, Parser)]
#[command(name = "elicit", version, about = "Adaptive group elicitation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the latent-class predictor and the graph network on a dataset.
    Fit(commands::FitArgs),
    /// Run the evaluation protocol and write per-round metrics.
    Run(commands::RunArgs),
    /// Check the greedy guarantees and the belief-update identities.
    Verify(commands::VerifyArgs),
    /// Interactive ASK/ANS/COMMIT session on stdin/stdout.
    Plan(session::PlanArgs),
    /// Per-member sensitivity scores and tiers.
    Sensitivity(commands::SensitivityArgs),
    /// Re-aggregate metric records into summary and plot tables.
    Report(commands::ReportArgs),
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("ELICIT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Input(format!(
            "ELICIT_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Input(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = init_threads().and_then(|()| match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Run(a) => commands::run(a),
        Command::Verify(a) => commands::verify(a),
        Command::Plan(a) => session::plan(a),
        Command::Sensitivity(a) => commands::sensitivity(a),
        Command::Report(a) => commands::report(a),
    });
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
