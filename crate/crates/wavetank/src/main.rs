use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use wavetank::config::RunConfig;
use wavetank::harness::{
    converge_table_lines, report_lines, run_converge, run_selftest, run_simulate, run_verify,
    RunError, Vary,
};

/// Pseudo-spectral gravity water-wave tank with bulk-field verification.
#[derive(Parser)]
#[command(name = "wavetank", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VaryArg {
    Nz,
    Dt,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the surface system and write a snapshot stream.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Rebuild bulk fields from a snapshot stream and verify the Euler system.
    Verify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Convergence study: rerun simulate+verify over refined resolutions.
    Converge {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        levels: usize,
        #[arg(long, value_enum, default_value = "nz")]
        vary: VaryArg,
    },
    /// Run the built-in invariant suite.
    Selftest {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: &PathBuf) -> Result<RunConfig, RunError> {
    Ok(RunConfig::parse_file(path)?)
}

fn run(cli: Cli) -> Result<ExitCode, RunError> {
    match cli.command {
        Command::Simulate { config } => {
            let cfg = load_config(&config)?;
            let outcome = run_simulate(&cfg)?;
            if let Some(e) = outcome.aborted {
                eprintln!("aborted: {e}");
                eprintln!(
                    "wrote {} snapshots to {} before the abort record",
                    outcome.snapshots,
                    cfg.output_path.display()
                );
                return Ok(ExitCode::from(3));
            }
            println!(
                "simulate: {} steps, {} snapshots, wall {} ms, max |dH/H| {}, mass drift {}",
                outcome.steps,
                outcome.snapshots,
                outcome.wall_ms,
                outcome.max_hamiltonian_drift,
                outcome.mass_drift
            );
            println!("stream written to {}", cfg.output_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { input, config } => {
            let cfg = load_config(&config)?;
            let (outcome, report_path) = run_verify(&cfg, &input)?;
            print!("{}", report_lines(&outcome.report));
            println!("report written to {}", report_path.display());
            if outcome.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                for f in &outcome.failures {
                    eprintln!("check failed: {f}");
                }
                Ok(ExitCode::from(1))
            }
        }
        Command::Converge {
            config,
            levels,
            vary,
        } => {
            let cfg = load_config(&config)?;
            let table = run_converge(
                &cfg,
                levels,
                match vary {
                    VaryArg::Nz => Vary::Nz,
                    VaryArg::Dt => Vary::Dt,
                },
            )?;
            print!("{}", converge_table_lines(&table));
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest { config } => {
            let cfg = match config {
                Some(path) => load_config(&path)?,
                None => RunConfig::default(),
            };
            let report = run_selftest(&cfg)?;
            println!("{:<26} {:>14} {:>14} {:>6}", "check", "measured", "threshold", "pass");
            for c in &report.checks {
                println!(
                    "{:<26} {:>14.6e} {:>14.6e} {:>6}",
                    c.name,
                    c.measured,
                    c.threshold,
                    if c.pass { "ok" } else { "FAIL" }
                );
            }
            if report.pass() {
                println!("selftest: all {} checks passed", report.checks.len());
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("selftest: failures detected");
                Ok(ExitCode::from(1))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
