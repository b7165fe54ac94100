use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use noether_lab::scenario::{bundled, run_scenario, RunOptions, Scenario, ScenarioError, BUNDLED, SCHEMA_DOC};

#[derive(Parser)]
#[command(name = "noether-lab", version, about = "Check variational symmetries, Noether charges and propagator identities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a bundled example by name.
    Run {
        scenario: String,
        /// Also write the JSON report to this path.
        #[arg(long, value_name = "PATH")]
        json: Option<PathBuf>,
        /// Write CSV artifacts and report.json into this directory.
        #[arg(long, value_name = "DIR")]
        dump: Option<PathBuf>,
        /// Override the scenario's sampling seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List the bundled example scenarios.
    ListExamples,
    /// Print the scenario file format.
    PrintSchema,
}

fn load(arg: &str) -> Result<Scenario, ScenarioError> {
    let path = Path::new(arg);
    if !path.exists() {
        if let Some(s) = bundled(arg) {
            return s;
        }
    }
    Scenario::load(path)
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::ListExamples => {
            for b in BUNDLED {
                let description = Scenario::parse(b.text, b.name).map(|s| s.description).unwrap_or_default();
                println!("{:<30} {description}", b.name);
            }
            ExitCode::SUCCESS
        }
        Command::PrintSchema => {
            print!("{SCHEMA_DOC}");
            ExitCode::SUCCESS
        }
        Command::Run { scenario, json, dump, seed } => {
            let scenario = match load(&scenario) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let report = match run_scenario(&scenario, &RunOptions { seed, dump }) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: writing artifacts: {e}");
                    return ExitCode::from(3);
                }
            };
            print!("{}", report.to_text());
            if let Some(path) = json {
                if let Err(e) = std::fs::write(&path, report.to_json()) {
                    eprintln!("error: writing {}: {e}", path.display());
                    return ExitCode::from(3);
                }
            }
            ExitCode::from(report.exit_code() as u8)
        }
    }
}
