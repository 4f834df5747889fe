use clap::{Parser, Subcommand};
use modcomb_cli::{run_experiment, CliError, ExperimentConfig, ExperimentId};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "modcomb", version, about = "Run combination-of-learners experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Overrides `seed` (and MODCOMB_SEED).
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `out` (and MODCOMB_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the available experiment ids.
    ListExperiments,
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
}

fn env(key: &str) -> Option<String> {
    std::env::var(key).ok().filter(|v| !v.is_empty())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.apply_overrides(seed, out, env)?;
            let art = run_experiment(&cfg)?;
            println!("{}: wrote {} files to {}", cfg.experiment.name(), art.files.len(), art.dir.display());
        }
        Command::ListExperiments => {
            for id in ExperimentId::ALL {
                println!("{:<20} {}", id.name(), id.description());
            }
        }
        Command::Validate { config } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.apply_overrides(None, None, env)?;
            println!("{}: ok ({})", config.display(), cfg.experiment.name());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("modcomb: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
