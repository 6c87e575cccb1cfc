use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedsim::commands::{self, RunArgs};
use fedsim::CliError;

#[derive(Parser)]
#[command(name = "fedsim", version, about = "Deterministic federated learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write report.json, rounds.csv and clusters.json.
    Run {
        /// Config file of `key = value` lines; defaults apply when omitted.
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        /// KEY=VALUE, applied after the config file. Repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory (overrides output_dir).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Rounds to train past fed.total_rounds at the final meta learning rate.
        #[arg(long, value_name = "N")]
        extra_rounds: Option<usize>,
        /// Training seed (fed.seed).
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
    },
    /// Plot several reports into compare.svg and print a final accuracy table.
    Compare {
        #[arg(required = true, value_name = "REPORT")]
        reports: Vec<PathBuf>,
        #[arg(long, value_name = "DIR", default_value = ".")]
        out: PathBuf,
    },
    /// Print cluster membership and merge heights of a clustered run.
    ClusterReport {
        #[arg(value_name = "REPORT")]
        report: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    commands::configure_threads()?;
    match cli.command {
        Command::Run {
            config,
            overrides,
            out,
            extra_rounds,
            seed,
        } => {
            let args = RunArgs {
                config,
                overrides,
                out,
                extra_rounds,
                seed,
            };
            let (report, line) = commands::run(&args)?;
            eprintln!("finished in {:.2}s", report.wall_time_seconds);
            println!("{line}");
        }
        Command::Compare { reports, out } => {
            print!("{}", commands::compare(&reports, &out)?);
        }
        Command::ClusterReport { report } => {
            print!("{}", commands::cluster_report(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fedsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
