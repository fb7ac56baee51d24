use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scdp_sim::config::{parse_config, RunConfig, ScenarioName};
use scdp_sim::engine::SimTime;
use scdp_sim::runner;
use scdp_sim::topology::Topology;

/// Packet-level discrete-event simulator for receiver-driven data-centre
/// transports (SCDP with systematic rateless coding, NDP baselines).
#[derive(Parser)]
#[command(name = "scdp-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        /// Config file; omit for the all-defaults realistic scenario.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for CSVs, summary and config echo.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the config's seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's scenario.
        #[arg(long)]
        scenario: Option<String>,
        /// Print per-run progress.
        #[arg(short, long)]
        verbose: bool,
    },
    /// Print a FatTree topology summary.
    Topo {
        /// FatTree arity (even, >= 4).
        #[arg(long, default_value_t = 4)]
        k: u32,
    },
}

/// Exit codes: 0 ok, 1 validation error, 2 runtime error.
fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help/version are not errors
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(AppError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

enum AppError {
    Validation(String),
    Runtime(String),
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Topo { k } => {
            let topo = Topology::build_fattree(k, 1_000_000_000, SimTime::from_micros(10))
                .map_err(|e| AppError::Validation(e.to_string()))?;
            println!("{}", topo.summary());
            Ok(())
        }
        Command::Run {
            config,
            out,
            seed,
            scenario,
            verbose,
        } => {
            let text = match &config {
                Some(path) => std::fs::read_to_string(path).map_err(|e| {
                    AppError::Validation(format!("cannot read {}: {e}", path.display()))
                })?,
                None => String::new(),
            };
            let mut cfg: RunConfig =
                parse_config(&text).map_err(|e| AppError::Validation(e.to_string()))?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(name) = scenario {
                cfg.scenario = parse_scenario(&name)
                    .ok_or_else(|| AppError::Validation(format!("unknown scenario '{name}'")))?;
            }
            cfg.validate()
                .map_err(|e| AppError::Validation(e.to_string()))?;
            if verbose {
                eprintln!(
                    "running scenario {} on k={} with {} seed(s), protocols {:?}",
                    cfg.scenario,
                    cfg.k,
                    cfg.seeds.len(),
                    cfg.protocols
                        .iter()
                        .map(|p| p.to_string())
                        .collect::<Vec<_>>()
                );
            }
            let files =
                runner::run_experiment(&cfg, &out).map_err(|e| AppError::Runtime(e.to_string()))?;
            if verbose {
                for f in &files {
                    eprintln!("wrote {}", f.display());
                }
            }
            println!("{} file(s) written to {}", files.len(), out.display());
            Ok(())
        }
    }
}

fn parse_scenario(name: &str) -> Option<ScenarioName> {
    Some(match name {
        "realistic" => ScenarioName::Realistic,
        "incast" => ScenarioName::Incast,
        "outcast" => ScenarioName::Outcast,
        "convergence" => ScenarioName::Convergence,
        "window_sweep" => ScenarioName::WindowSweep,
        "storage_write" => ScenarioName::StorageWrite,
        "storage_read" => ScenarioName::StorageRead,
        _ => return None,
    })
}
