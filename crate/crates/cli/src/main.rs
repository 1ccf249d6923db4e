use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

mod commands;
mod validate;

#[derive(Parser, Debug)]
#[command(name = "mfattn", version, about = "Multi-head attention dynamics of tokens on the sphere")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Scenario file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Root seed; overrides `scenario.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Config override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads.
    #[arg(long, global = true, env = "MFATTN_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One trajectory: binary archive and energy-ledger CSV.
    Simulate {
        /// Monte Carlo index of the trajectory.
        #[arg(long, default_value_t = 0)]
        trajectory: u64,
        /// Head count; defaults to the first configured one.
        #[arg(long)]
        heads: Option<usize>,
    },
    /// Monte Carlo sweep over the configured head counts.
    Mc {
        /// Uniform clouds drawn for the clustering baseline.
        #[arg(long, default_value_t = 200)]
        baseline_samples: usize,
    },
    /// JKO scheme against the forward gradient flow for each `τ`.
    Jko,
    /// Power-law fit of one CSV column against another.
    Fit {
        #[arg(long, value_name = "CSV")]
        input: PathBuf,
        #[arg(long, default_value = "heads")]
        x: String,
        #[arg(long, default_value = "g2_time_mean")]
        y: String,
    },
    /// Initial-data robustness with the fitted Grönwall envelope.
    Gronwall {
        #[arg(long, default_value_t = 0)]
        trajectory: u64,
    },
    /// Distance of truncated-pool flows to the full-pool flow.
    Stability,
    /// Fast invariant checks; exits nonzero on any failure.
    Validate,
}

/// Errors reported as JSON on stderr.
#[derive(Debug)]
pub enum CliError {
    Core(mfattn_core::Error),
    Usage(String),
    Failed(String),
}

impl From<mfattn_core::Error> for CliError {
    fn from(e: mfattn_core::Error) -> Self {
        Self::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Core(e.into())
    }
}

impl CliError {
    fn to_json(&self) -> serde_json::Value {
        match self {
            Self::Core(e) => {
                let mut err = json!({"kind": e.kind(), "message": e.root().to_string()});
                if let Some((module, operation)) = e.origin() {
                    err["module"] = module.into();
                    err["operation"] = operation.into();
                }
                json!({ "error": err })
            }
            Self::Usage(m) => json!({"error": {"kind": "usage", "message": m}}),
            Self::Failed(m) => json!({"error": {"kind": "check_failed", "message": m}}),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    let c = &cli.common;
    match cli.command {
        Command::Simulate { trajectory, heads } => commands::simulate(c, trajectory, heads),
        Command::Mc { baseline_samples } => commands::mc(c, baseline_samples),
        Command::Jko => commands::jko(c),
        Command::Fit { input, x, y } => commands::fit(c, &input, &x, &y),
        Command::Gronwall { trajectory } => commands::gronwall(c, trajectory),
        Command::Stability => commands::stability(c),
        Command::Validate => validate::run(),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
