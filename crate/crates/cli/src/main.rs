//! `wptwave` command-line driver.
//!
//! Exit codes: 0 success, 1 configuration error (including bad arguments),
//! 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wptwave_core::experiment::{run_sweep, ExperimentConfig, WORKERS_ENV};
use wptwave_core::Error;

const AFTER_HELP: &str = "\
Units: powers in dBW are 10·log10(P / 1 W); the SSPA saturation level a_s_db
is 20·log10(A_s / 1 V), so a_s_db = 10 means A_s² = 10 W. The link budget
(path_loss_db, rx_gain_dbi) scales every channel gain by
10^((rx_gain_dbi − path_loss_db)/20).

Exit codes: 0 ok, 1 configuration error, 2 runtime failure.";

#[derive(Parser)]
#[command(name = "wptwave", version, about = "Waveform design sweeps for multi-carrier wireless power transfer", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep and write the CSV plus its JSON sidecar.
    Run {
        config: PathBuf,
        /// Overrides the output path from the config.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Worker threads (default: available cores).
        #[arg(long, env = WORKERS_ENV)]
        workers: Option<usize>,
    },
    /// Print the sweep plan without computing anything.
    Describe { config: PathBuf },
    /// Parse and validate a config file.
    ValidateConfig { config: PathBuf },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, output, workers } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if let Some(o) = output {
                cfg.output = o;
            }
            let workers = match workers {
                Some(0) => return Err(Error::Config("--workers must be positive".into())),
                Some(n) => n,
                None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            };
            eprintln!("running {} evaluations on {workers} worker(s)", cfg.total_runs());
            let out = run_sweep(&cfg, workers)?;
            println!("wrote {} rows to {}", out.rows.len(), out.csv_path.display());
            println!("metadata: {}", out.sidecar_path.display());
            if out.failures > 0 {
                eprintln!("warning: {} row(s) carry status=error, see the message column", out.failures);
            }
        }
        Command::Describe { config } => {
            print!("{}", ExperimentConfig::from_path(&config)?.describe()?);
        }
        Command::ValidateConfig { config } => {
            ExperimentConfig::from_path(&config)?;
            println!("{}: ok", config.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
