use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use pointdn_cli::run::write_error_record;
use pointdn_cli::{run, Command, ExperimentConfig, CHECK_FAILED};

/// Semilinear DN-map experiments on the unit square.
#[derive(Debug, Parser)]
#[command(name = "pointdn", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,

    /// JSON experiment config; every key has a default.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set reconstruction.mode=fourier`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Exit with status 4 when an acceptance threshold is violated.
    #[arg(long)]
    check: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = match ExperimentConfig::load(args.config.as_deref(), &args.overrides) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(args.command, &cfg) {
        Ok(outcome) => {
            for c in &outcome.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("wrote {} artifacts to {}", outcome.artifacts.len(), cfg.output_dir.display());
            if args.check && !outcome.passed() {
                ExitCode::from(CHECK_FAILED as u8)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Err(w) = write_error_record(&cfg.output_dir, args.command, &e) {
                eprintln!("error: could not write error record: {w}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
