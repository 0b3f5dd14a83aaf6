use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ppssl_cli::acceptance::{run_all, run_criterion, Scoreboard, CRITERIA};
use ppssl_cli::commands::{cmd_diagnose, cmd_gen_data, cmd_train, Which};
use ppssl_cli::records::write_json;
use ppssl_cli::{CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "ppssl", about = "Prediction-powered semi-supervised learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or split) datasets and write them as CSV with a manifest.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of seeds, counted from the configured base seed.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Train one method over several seeds.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seeds: Option<usize>,
        /// Worker threads; outputs do not depend on this.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Monte-Carlo audits and sweeps.
    Diagnose {
        which: Which,
        /// Optional; built-in defaults are used when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Run the acceptance suite and write `scoreboard.json`.
    Accept {
        #[arg(long, default_value = "acceptance-out")]
        out: PathBuf,
        /// Run only these criterion ids.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
    },
}

fn load(path: &Path, seeds: Option<usize>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply_overrides(seeds)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { config, out, seeds } => {
            let cfg = load(&config, seeds)?;
            for p in cmd_gen_data(&cfg, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Train { config, out, seeds, jobs } => {
            let cfg = load(&config, seeds)?;
            let records = cmd_train(&cfg, &out, jobs)?;
            println!("{} seeds completed; records in {}", records.len(), out.display());
        }
        Command::Diagnose { which, config, out, seeds } => {
            let cfg = match config {
                Some(p) => load(&p, seeds)?,
                None => {
                    let mut c = ExperimentConfig::g1_default();
                    c.apply_overrides(seeds)?;
                    c
                }
            };
            cmd_diagnose(&cfg, which, &out)?;
            println!("report written to {}", out.display());
        }
        Command::Accept { out, only } => {
            if let Some(bad) = only.iter().find(|id| !CRITERIA.iter().any(|c| c.0 == **id)) {
                return Err(CliError::Config(format!("--only: no criterion {bad}")));
            }
            let print = |r: &ppssl_cli::acceptance::CriterionResult| println!("{}", r.line());
            let board = if only.is_empty() {
                run_all(print)
            } else {
                Scoreboard::new(
                    only.iter()
                        .map(|&id| {
                            let r = run_criterion(id);
                            print(&r);
                            r
                        })
                        .collect(),
                )
            };
            write_json(&out.join("scoreboard.json"), &board)?;
            println!("{}/{} criteria passed", board.passed, board.criteria.len());
            if !board.failed.is_empty() {
                return Err(CliError::Failed(format!("criteria {:?}", board.failed)));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
