//! `occspot`: data generation, occupancy targets, pre-training, fine-tuning,
//! evaluation and theory checks for the occupancy pre-training toolkit.

mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "occspot", version, about = "Occupancy pre-training pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the pretrain, finetune and eval scene splits.
    GenScenes {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's root seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (must not exist); defaults to paths.data_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the BEV occupancy grid of one sequence.
    MakeOcc {
        #[arg(long)]
        config: PathBuf,
        sequence: PathBuf,
        out: PathBuf,
        /// Frame that receives the grid; the middle frame by default.
        #[arg(long)]
        keyframe: Option<usize>,
    },
    /// Keep a uniformly spaced subset of beams in every frame of a sequence.
    Resample {
        #[arg(long)]
        factor: f64,
        #[arg(long)]
        seed: u64,
        input: PathBuf,
        out: PathBuf,
    },
    /// Print per-class frame sampling weights for instance counts.
    BalanceWeights { stats: PathBuf },
    /// Pre-train on the occupancy task over the generated pretrain split.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint path; defaults to <out_dir>/pretrain.spck.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune on the first K labeled scenes, from a checkpoint or from scratch.
    Finetune {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        labels: usize,
        /// Checkpoint path; defaults to <out_dir>/finetune.spck.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// mIoU of a checkpoint on a split directory or a single sequence.
    EvalMiou { ckpt: PathBuf, dataset: PathBuf },
    /// Run the randomized bound, decomposition and risk-ordering checks.
    TheoryCheck {
        #[arg(long)]
        sweeps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("OCCSPOT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("OCCSPOT_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::GenScenes { config, seed, out } => commands::gen_scenes(config.as_deref(), seed, out.as_deref()),
        Command::MakeOcc {
            config,
            sequence,
            out,
            keyframe,
        } => commands::make_occ(&config, &sequence, &out, keyframe),
        Command::Resample {
            factor,
            seed,
            input,
            out,
        } => commands::resample(factor, seed, &input, &out),
        Command::BalanceWeights { stats } => commands::balance_weights(&stats),
        Command::Pretrain { config, out } => commands::pretrain(config.as_deref(), out.as_deref()),
        Command::Finetune {
            config,
            ckpt,
            labels,
            out,
        } => commands::finetune(config.as_deref(), ckpt.as_deref(), labels, out.as_deref()),
        Command::EvalMiou { ckpt, dataset } => commands::eval_miou(&ckpt, &dataset),
        Command::TheoryCheck { sweeps, seed } => commands::theory_check(sweeps, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("occspot: {e}");
            e.exit_code()
        }
    }
}
