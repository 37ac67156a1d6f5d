use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod data;
mod error;

use config::RunConfig;
use data::write_atomic;
use error::CliError;

#[derive(Parser)]
#[command(name = "quadsep", version, about = "Minimax U-tests for quadratic functionals of a regression function")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output path; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads.
    #[arg(long, global = true, env = "QUADSEP_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Separation rate, sharp constant and tuned threshold.
    Rate,
    /// Optimal weights over the active set, as CSV.
    Weights,
    /// Runs the configured test on a CSV with columns t1..td,x.
    Test { data: PathBuf },
    /// Monte Carlo error rates; writes a summary JSON and a per-replication CSV.
    Simulate,
}

fn emit(path: Option<&PathBuf>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => write_atomic(p, bytes),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(bytes)
                .map_err(|e| CliError::Data(format!("cannot write to standard output: {e}")))
        }
    }
}

fn json_bytes(v: &serde_json::Value) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("JSON values serialize");
    b.push(b'\n');
    b
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli.config.ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let mut cfg = RunConfig::load(&path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.output = Some(o);
    }
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let out = cfg.output.clone();
    match cli.command {
        Command::Rate => emit(out.as_ref(), &json_bytes(&commands::cmd_rate(&cfg)?)),
        Command::Weights => emit(out.as_ref(), &commands::cmd_weights(&cfg)?),
        Command::Test { data } => emit(out.as_ref(), &json_bytes(&commands::cmd_test(&cfg, &data)?)),
        Command::Simulate => {
            let (summary, records) = commands::cmd_simulate(&cfg)?;
            if let Some(p) = cfg.records_path() {
                write_atomic(&p, &records)?;
            }
            emit(out.as_ref(), &json_bytes(&summary))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("quadsep: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
