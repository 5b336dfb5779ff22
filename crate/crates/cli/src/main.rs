//! `uqcast`: train, evaluate and compare traffic-flow forecasters.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O, 3 data validation, 4 numeric
//! failure, 5 verification failure.

mod commands;
mod config;
mod svg;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use uqcast_core::ErrorKind;

#[derive(Debug, Parser)]
#[command(name = "uqcast", version, about = "Traffic-flow forecasting with Monte-Carlo dropout uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic 5-minute flow series.
    Synth {
        /// Profile JSON file or the name of a bundled preset.
        #[arg(long)]
        profile: String,
        #[arg(long)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a `timestamp,flow` CSV.
    Train {
        /// Run configuration JSON; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo uncertainty, metrics and saliency on the test split.
    Uq {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 50)]
        passes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// First timestamp of the charted span (default: start of the test split).
        #[arg(long)]
        span_start: Option<i64>,
        #[arg(long, default_value_t = 48)]
        span_hours: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model on another station, optionally after retraining its
    /// dense layers.
    Transfer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        retrain: bool,
        #[arg(long, default_value_t = 0.2)]
        fraction: f64,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        /// Keep dense-side layer-norm gains and shifts frozen.
        #[arg(long)]
        freeze_dense_norm: bool,
        #[arg(long, default_value_t = 50)]
        passes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank candidate stations by how closely their daily flow distribution
    /// matches the training station.
    Similarity {
        #[arg(long)]
        train: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        candidates: Vec<PathBuf>,
        #[arg(long, default_value_t = 30)]
        days: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in correctness checks.
    Verify {
        #[arg(long)]
        fast: bool,
        /// Deliberately break one differentiation rule (e.g. `tanh`).
        #[arg(long)]
        corrupt_rule: Option<String>,
    },
}

/// Bad invocation detected after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug)]
pub struct VerificationFailed(pub Vec<String>);

impl fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "verification failed: {}", self.0.join(", "))
    }
}

impl std::error::Error for VerificationFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if cause.is::<VerificationFailed>() {
            return 5;
        }
        if let Some(e) = cause.downcast_ref::<uqcast_core::Error>() {
            return match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Io => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

/// The error chain joined with `: `, skipping causes already quoted by the
/// message above them.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if out.ends_with(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(value) = std::env::var("UQCAST_THREADS") {
        let n: usize = value
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| UsageError(format!("UQCAST_THREADS must be a positive integer, got `{value}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| UsageError(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth { profile, days, seed, out } => commands::synth(&profile, days, seed, &out),
        Command::Train { config, data, out } => commands::train(config.as_deref(), data, out),
        Command::Uq {
            model,
            data,
            passes,
            seed,
            span_start,
            span_hours,
            out,
        } => commands::uq(&commands::UqArgs {
            model,
            data,
            passes,
            seed,
            span_start,
            span_hours,
            out,
        }),
        Command::Transfer {
            model,
            target,
            retrain,
            fraction,
            epochs,
            batch_size,
            freeze_dense_norm,
            passes,
            seed,
            out,
        } => commands::transfer(&commands::TransferArgs {
            model,
            target,
            retrain,
            fraction,
            epochs,
            batch_size,
            freeze_dense_norm,
            passes,
            seed,
            out,
        }),
        Command::Similarity {
            train,
            candidates,
            days,
            out,
        } => commands::similarity(&train, &candidates, days, &out),
        Command::Verify { fast, corrupt_rule } => commands::verify(fast, corrupt_rule.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", describe(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}
