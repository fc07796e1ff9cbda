use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ramp_cli::config::Overrides;
use ramp_cli::error::{CliError, EXIT_OK};
use ramp_core::prompting::PromptMode;

#[derive(Parser)]
#[command(name = "ramp", version, about = "Retrieval-augmented attribute-controlled translation experiments")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true, default_value = "ramp.toml")]
    config: PathBuf,
    /// Completion endpoint; overrides RAMP_BACKEND_URL and the config file.
    #[arg(long, global = true)]
    backend_url: Option<String>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Concurrent generation requests.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Replaces the configured seed list with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the config and data without running anything.
    Validate,
    /// Parse the pools and print per-cell counts.
    Ingest,
    /// Embed the train pool and write the index snapshot.
    Index,
    /// Run the configured setting and write its reports.
    Run,
    /// Run a grid of k values and modes.
    Sweep {
        /// Comma-separated k values; defaults to the configured k.
        #[arg(long, value_delimiter = ',')]
        ks: Vec<usize>,
        /// Comma-separated modes; defaults to the configured mode.
        #[arg(long, value_delimiter = ',')]
        modes: Vec<PromptMode>,
    },
    /// Rewrite reports from stored judgments.
    Report,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        backend_url: cli.backend_url,
        cache_dir: cli.cache_dir,
        parallelism: cli.parallelism,
        seed: cli.seed,
    };
    let cfg = ramp_cli::load_config(&cli.config, &overrides)?;
    match cli.command {
        Command::Validate => {
            ramp_cli::cmd_validate(&cfg)?;
            println!("{}: ok", cli.config.display());
        }
        Command::Ingest => print!("{}", ramp_cli::cmd_ingest(&cfg)?),
        Command::Index => {
            let (n, dim) = ramp_cli::cmd_index(cfg)?;
            println!("indexed {n} examples (dim {dim})");
        }
        Command::Run => {
            let out = cfg.experiment.output_dir.clone();
            let outcome = ramp_cli::cmd_run(cfg)?;
            println!("{}", outcome.combined.to_markdown());
            println!("reports in {}", out.display());
        }
        Command::Sweep { ks, modes } => {
            let ks = if ks.is_empty() { vec![cfg.experiment.k] } else { ks };
            let modes = if modes.is_empty() { vec![cfg.experiment.mode] } else { modes };
            let out = cfg.experiment.output_dir.clone();
            let outcome = ramp_cli::cmd_sweep(cfg, &ks, &modes)?;
            println!("{}", ramp_cli::pipeline::sweep_markdown(&outcome.rows));
            println!("sweep report in {}", out.display());
            if !outcome.failed.is_empty() {
                for (name, e) in &outcome.failed {
                    eprintln!("{name}: {e}");
                }
                return Err(CliError::SweepCells(outcome.failed.len()));
            }
        }
        Command::Report => {
            let n = ramp_cli::cmd_report(&cfg)?;
            println!("wrote {n} report(s)");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
