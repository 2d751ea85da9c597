use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use iml::experiment::{self, ExperimentError, Mode, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "iml", version, about = "Frequency-domain iterative machine learning studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a study and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        mode: Option<Mode>,
        /// Run this many consecutive seeds and aggregate them.
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Check a config and list every problem found.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Run { config, seed, out_dir, mode, repeats } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.apply(&Overrides { seed, output_dir: out_dir, mode });
            match repeats {
                Some(n) => experiment::execute_repeats(&cfg, n, &mut stdout).map(|_| ()),
                None => experiment::execute(&cfg, &mut stdout).map(|_| ()),
            }
        }
        Command::Validate { config } => {
            let cfg = RunConfig::load(&config)?;
            let diagnostics = experiment::validate_config(&cfg);
            if diagnostics.is_empty() {
                println!("{}: ok", config.display());
                Ok(())
            } else {
                Err(ExperimentError::Config(diagnostics.join("; ")))
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("iml: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
