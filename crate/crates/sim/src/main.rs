use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use epr_sim::{execute, FileConfig, Overrides, SimError};

/// Run a named scenario and write CSV tables plus a manifest.
#[derive(Debug, Parser)]
#[command(name = "epr-sim", version)]
struct Cli {
    /// ideal_steady_state, noisy_conditional, detuning_sweep, multilevel_fig3b,
    /// reconstruction_roundtrip, kappa_calibration or oracle_convergence.
    #[arg(long)]
    scenario: Option<String>,
    /// TOML config file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Parameter override `key=value`; `sweep.<key>=v1,v2,...` sets a sweep axis.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps and Monte Carlo ensembles.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_name = "DIR")]
    output_dir: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, SimError> {
    let file = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| SimError::config(format!("{}: {e}", path.display())))?;
            Some(FileConfig::parse(&text, &path.display().to_string())?)
        }
        None => None,
    };
    let overrides = Overrides { scenario: cli.scenario, seed: cli.seed, output_dir: cli.output_dir, set: cli.set };
    execute(file, &overrides, cli.jobs)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("epr-sim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
