//! `scalecodec`: train, code and evaluate the two-layer image codec.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 when the command
//! fails at runtime. Errors print as one line on standard error, prefixed
//! with `usage:` or the library's error category.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "scalecodec", version, about = "Scalable human-machine image codec")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Clone, Default)]
pub struct Common {
    /// Experiment config (`key = value` lines); defaults apply otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train the frozen task proxy.
    TrainTask {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the base layer from a task-proxy checkpoint, or resume a
    /// base-layer checkpoint.
    TrainBase {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the enhancement layer on a frozen base.
    TrainEnh {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        base_checkpoint: PathBuf,
        /// Resume this enhancement checkpoint instead of starting afresh.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the parallel baseline from a task-proxy checkpoint, or resume
    /// a baseline checkpoint.
    TrainJoint {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode a PNG into a `.shmc` stream.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "base+enh")]
        layers: String,
        #[arg(long)]
        out: PathBuf,
        input: PathBuf,
    },
    /// Decode a `.shmc` stream: a JSON task report for `base`, a PNG for
    /// `base+enh`.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "base")]
        layers: String,
        /// Output file; the task report goes to standard output if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        input: PathBuf,
    },
    /// Rate-accuracy curve of base-layer checkpoints on the validation split.
    EvalTask {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        label: Option<String>,
        /// Use ideal code lengths instead of running the range coder.
        #[arg(long)]
        no_coder: bool,
    },
    /// Rate-PSNR curve of two-layer checkpoints on the validation split.
    EvalRecon {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        no_coder: bool,
    },
    /// Full experiment: λ sweeps for both codecs, curves, BD-Rate and
    /// break-even summary.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Task-proxy checkpoint; trained first if omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_coder: bool,
    },
    /// BD-Rate of a test curve against a reference curve, as JSON.
    Bdrate { reference: PathBuf, test: PathBuf },
    /// Break-even viewing fraction, as JSON.
    Breakeven {
        #[arg(long, allow_negative_numbers = true)]
        rb: f64,
        #[arg(long, allow_negative_numbers = true)]
        rt: f64,
    },
    /// Write the generated dataset as PNGs plus a manifest.
    MakeDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A request that is well-formed for the parser but unusable.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "usage: {}", self.0)
    }
}

impl std::error::Error for Usage {}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("usage: {}", one_line(first.trim_start_matches("error: ")));
            return ExitCode::from(1);
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<Usage>().is_some() => {
            eprintln!("{}", one_line(&e.to_string()));
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{}", one_line(&format!("{e:#}")));
            ExitCode::from(2)
        }
    }
}
