//! `paperq`: batch extraction, benchmarking and re-scoring.
//!
//! Exit codes: 0 success, 1 configuration, I/O or schema error, 2 finished
//! with per-record failures.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "paperq", version, about = "Extract concepts from papers with LLMs and benchmark the results")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "PAPERQ_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer the targets of a question set for one document.
    Extract(commands::ExtractArgs),
    /// Run every endpoint × shot mode over a gold-annotated corpus.
    Bench(commands::BenchArgs),
    /// Score stored extraction records against gold annotations.
    Score(commands::ScoreArgs),
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();
    let cli = Cli::parse();
    let outcome = commands::load_config(cli.config.as_deref()).and_then(|config| match cli.command {
        Command::Extract(args) => commands::extract(&config, args),
        Command::Bench(args) => commands::bench(&config, args),
        Command::Score(args) => commands::score(&config, args),
    });
    match outcome {
        Ok(commands::Outcome::Complete) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Partial(n)) => {
            eprintln!("finished with {n} failed record(s)");
            ExitCode::from(2)
        }
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}
