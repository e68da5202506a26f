//! `tart`: generate synthetic tasks, train the reasoner, evaluate it, and run
//! the embedding-composition diagnostics.
//!
//! Exit codes: 0 success, 1 usage error, 2 input or format error, 3 numerical
//! failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<tart_core::Error> for CliError {
    fn from(e: tart_core::Error) -> Self {
        let code = match e {
            tart_core::Error::NonFinite { .. } => 3,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::input(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "tart", version, about = "Synthetic in-context reasoning toolkit")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides TART_OUT and the config file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads. Every path is currently sequential, so values above 1
    /// are recorded but have no effect.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample evaluation problems to JSON.
    Gen(commands::GenArgs),
    /// Train the reasoner.
    Train(commands::TrainArgs),
    /// Paired prefix curves for a checkpoint and the logistic-regression oracle.
    EvalSyn(commands::EvalSynArgs),
    /// Deviation and accuracy across noise levels.
    SweepNoise(commands::SweepNoiseArgs),
    /// Linear probe on PCA-reduced embeddings.
    Probe(commands::ProbeArgs),
    /// Reasoner predictions on embedding files, by number of in-context examples.
    Compose(commands::ComposeArgs),
    /// Split a fine-tuning vs in-context accuracy gap into its two parts.
    Decompose(commands::DecomposeArgs),
    /// Sliced W1 between whitened embeddings and a standard Gaussian sample.
    W1(commands::W1Args),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.global.threads == 0 {
        return Err(CliError::usage("--threads must be at least 1"));
    }
    let cfg = config::RunConfig::load(cli.global.config.as_deref())?.resolve(cli.global.seed, cli.global.out.clone());
    let ctx = commands::Context::new(cfg, cli.global.threads)?;
    match cli.command {
        Command::Gen(a) => commands::gen(ctx, a),
        Command::Train(a) => commands::train(ctx, a),
        Command::EvalSyn(a) => commands::eval_syn(ctx, a),
        Command::SweepNoise(a) => commands::sweep_noise(ctx, a),
        Command::Probe(a) => commands::probe(ctx, a),
        Command::Compose(a) => commands::compose(ctx, a),
        Command::Decompose(a) => commands::decompose(ctx, a),
        Command::W1(a) => commands::w1(ctx, a),
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
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
