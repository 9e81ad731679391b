//! Thin CLI over the harness: gen-data, train, eval, check, ablate.
//!
//! Exit codes: 0 success, 1 validation error, 2 property failure, 3 I/O.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use prope::harness::properties::{cmd_check, Mutation};
use prope::harness::{cmd_ablate, cmd_eval, cmd_gen_data, cmd_train, Condition, RunConfig};

#[derive(Parser)]
#[command(name = "prope", version, about = "Camera conditioning for multiview transformers: datasets, training, evaluation, property checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MutateFlag {
    /// Corrupt a projective block so the invariance checks must fail.
    CorruptProj,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train and test datasets named by the config.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Train a model per the config; writes a loss log and a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the checkpoint output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split under a condition.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// standard | views=<n> | zoom=<f>
        #[arg(long, default_value = "standard")]
        condition: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Report CSV path (appends).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the executable property suite.
    Check {
        /// Testing the tester: deliberately corrupt an encoding block and
        /// expect the invariance property to fail.
        #[arg(long, value_enum)]
        mutate: Option<MutateFlag>,
    },
    /// Train the full/proj-only/rope-only channel-allocation variants with
    /// matched budgets and emit the aggregated comparison table.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> prope::Result<RunConfig> {
    let mut config = RunConfig::load(path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn run() -> prope::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { config, seed, workers } => {
            let config = load_config(&config, seed)?;
            cmd_gen_data(&config, workers)
        }
        Command::Train { config, seed, out } => {
            let mut config = load_config(&config, seed)?;
            if let Some(out) = out {
                config.paths.checkpoint = out;
            }
            cmd_train(&config)
        }
        Command::Eval {
            config,
            checkpoint,
            condition,
            seed,
            out,
        } => {
            let config = load_config(&config, seed)?;
            let condition = Condition::parse(&condition)?;
            cmd_eval(&config, checkpoint.as_deref(), condition, out.as_deref())?;
            Ok(())
        }
        Command::Check { mutate } => {
            let mutation = match mutate {
                Some(MutateFlag::CorruptProj) => Mutation::CorruptProj,
                None => Mutation::None,
            };
            cmd_check(mutation)?;
            Ok(())
        }
        Command::Ablate {
            config,
            seed,
            out,
            workers,
        } => {
            let config = load_config(&config, seed)?;
            cmd_ablate(&config, workers, out.as_deref())?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
