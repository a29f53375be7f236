use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sv_cli::{cmd_evaluate, cmd_features, cmd_fuse, cmd_score, cmd_train, exit_code_for, Precision, ScoreArgs};

#[derive(Parser)]
#[command(
    name = "svpipe",
    about = "Speaker-verification pipeline: train, score, evaluate, fuse",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    Precision::parse(s).map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Train an embedding model from a config file
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config precision (f32 or f64)
        #[arg(long, value_parser = parse_precision)]
        precision: Option<Precision>,
    },
    /// Extract log-mel feature caches for every WAV in a directory tree
    Features {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score a trial list with 10x10 crop cosine similarity
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        wav_root: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads for embedding extraction (0 = default pool)
        #[arg(long, default_value_t = 0)]
        workers: usize,
        #[arg(long, value_parser = parse_precision, default_value = "f64")]
        precision: Precision,
    },
    /// Report EER and minDCF for a score file
    Evaluate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        trials: PathBuf,
    },
    /// Min-max normalize two score files and fuse them
    Fuse {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        w_a: f64,
        #[arg(long, default_value_t = 0.7)]
        w_b: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, seed, precision } => cmd_train(&config, seed, precision),
        Command::Features { dataset, out_dir } => cmd_features(&dataset, &out_dir),
        Command::Score { checkpoint, trials, wav_root, out, workers, precision } => {
            cmd_score(&ScoreArgs {
                checkpoint: &checkpoint,
                trials: &trials,
                wav_root: &wav_root,
                out: &out,
                workers,
                precision,
            })
        }
        Command::Evaluate { scores, trials } => match cmd_evaluate(&scores, &trials) {
            Ok(report) => {
                print!("{report}");
                Ok(())
            }
            Err(e) => Err(e),
        },
        Command::Fuse { a, b, trials, out, w_a, w_b } => cmd_fuse(&a, &b, &trials, &out, w_a, w_b),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
