use std::path::PathBuf;
use std::process::ExitCode;

use chainsim_cli::{describe, load_config, run_experiment, seed_from_env, sweep_points, RunError};
use clap::{Parser, Subcommand};

/// Stateful function-chain simulator for edge networks.
#[derive(Parser)]
#[command(name = "chainsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario config; exits 1 and lists the problems if it is invalid.
    Validate { config: PathBuf },
    /// Run all replications of a scenario.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-point latency tables to plotdata.csv.
        #[arg(long)]
        emit_plotdata: bool,
    },
    /// Run a parameter sweep.
    Sweep {
        sweepfile: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        emit_plotdata: bool,
    },
    /// Print the route table and workflow summaries of a scenario.
    Describe { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("chainsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), RunError> {
    match cmd {
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            let violations = cfg.validate();
            if violations.is_empty() {
                println!("{}: ok", config.display());
                Ok(())
            } else {
                Err(RunError::Config(format!("{}:\n  {}", config.display(), violations.join("\n  "))))
            }
        }
        Command::Run { config, out, emit_plotdata } => {
            let cfg = load_config(&config)?;
            let seed = seed_from_env()?;
            let summary = run_experiment(&[("base".to_string(), cfg)], &out, seed, emit_plotdata)?;
            println!("{} run(s) written to {}", summary.len(), out.display());
            Ok(())
        }
        Command::Sweep { sweepfile, out, emit_plotdata } => {
            let points = sweep_points(&sweepfile)?;
            let seed = seed_from_env()?;
            let summary = run_experiment(&points, &out, seed, emit_plotdata)?;
            println!("{} point(s), {} run(s) written to {}", points.len(), summary.len(), out.display());
            Ok(())
        }
        Command::Describe { config } => {
            let cfg = load_config(&config)?;
            print!("{}", describe(&cfg)?);
            Ok(())
        }
    }
}
