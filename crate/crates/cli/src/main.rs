use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crossq::harness::{load_config, plot_files, run_experiment, sweep, SweepAxis, Validated};
use crossq::Error;

/// Train and diagnose CrossQ agents on small control tasks.
#[derive(Parser)]
#[command(name = "crossq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a configuration, resuming finished work.
    Run { config: PathBuf },
    /// Repeat a configuration over the values of one axis.
    Sweep {
        config: PathBuf,
        /// `utd` or `variant`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Plot aggregate or per-seed metric files as SVG.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Check a configuration without running it.
    Validate { config: PathBuf },
}

const VALIDATION: u8 = 1;
const RUNTIME: u8 = 2;

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if matches!(e, Error::Config(_)) {
        VALIDATION
    } else {
        RUNTIME
    })
}

fn load(path: &Path) -> Result<Validated, ExitCode> {
    match load_config(path) {
        Ok(v) => {
            for w in &v.warnings {
                eprintln!("warning: {w}");
            }
            Ok(v)
        }
        Err(e @ Error::Io { .. }) => {
            eprintln!("error: {e}");
            Err(ExitCode::from(VALIDATION))
        }
        Err(e) => Err(fail(&e)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Validate { config } => match load(&config) {
            Ok(_) => {
                println!("{}: ok", config.display());
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
        Command::Run { config } => {
            let v = match load(&config) {
                Ok(v) => v,
                Err(code) => return code,
            };
            match run_experiment(&v.config) {
                Ok(out) => {
                    match out.aggregate {
                        Some(p) => println!("{}", p.display()),
                        None => println!("{}", out.dir.display()),
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Sweep { config, axis, values } => {
            let axis: SweepAxis = match axis.parse() {
                Ok(a) => a,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(VALIDATION);
                }
            };
            let v = match load(&config) {
                Ok(v) => v,
                Err(code) => return code,
            };
            match sweep(&v.config, axis, &values) {
                Ok(out) => {
                    for (_, run) in &out.runs {
                        if let Some(p) = &run.aggregate {
                            println!("{}", p.display());
                        }
                    }
                    if let Some(p) = out.comparison {
                        println!("{}", p.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Plot { csv, output } => match plot_files(&csv, &output) {
            Ok(()) => {
                println!("{}", output.display());
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
    }
}
