//! `moodnet`: the music mood pipeline from tags and audio to R² reports.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Config;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "moodnet", version, about = "Valence/arousal regression from audio and lyrics")]
pub struct Cli {
    /// Global seed; falls back to MOODNET_SEED, then the config file.
    #[arg(long, global = true, env = "MOODNET_SEED")]
    pub seed: Option<u64>,
    /// Worker threads for per-track work (features, evaluation).
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// `key = value` configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the effective configuration in config-file syntax.
    Config,
    /// Generate a synthetic corpus (audio, lyrics, tags, lexicon, track list).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        tracks: usize,
        #[arg(long, default_value_t = 4.0)]
        seconds: f64,
        #[arg(long, default_value_t = 96)]
        lyric_words: usize,
    },
    /// Classical audio descriptors of every WAV file in a directory.
    Features {
        #[arg(long)]
        audio_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train word2vec on lyrics and write the embeddings as text.
    Embed {
        #[arg(long)]
        lyrics: PathBuf,
        /// Only use the lyrics of tracks listed in this label CSV.
        #[arg(long)]
        restrict: Option<PathBuf>,
        #[arg(long)]
        dims: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build labels from tags, split by artist and normalize.
    Dataset {
        #[arg(long)]
        tags: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        mood_tags: PathBuf,
        /// `msd_id,artist,title` list.
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        lyrics: Option<PathBuf>,
        /// Directory holding `<msd_id>.wav` files.
        #[arg(long)]
        audio_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a deep model or a classical baseline.
    Train {
        /// audio, lyrics or bimodal.
        #[arg(long)]
        mode: String,
        /// ConvNet, GRU, LSTM, biLSTM, 2LSTMs, ConvNet+LSTM, 2ConvNets+2LSTMs, SVM or CBOW.
        #[arg(long)]
        model: Option<String>,
        /// Dataset directory written by `dataset`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Feature cache from `features` (audio SVM).
        #[arg(long)]
        features: Option<PathBuf>,
        /// Word lexicon (lyrics SVM).
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        segment_seconds: Option<f64>,
        #[arg(long)]
        words: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track-level predictions of a trained model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated splits.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Late-fusion grid search over the weight of the first prediction set.
    Fuse {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Label CSV(s) holding the true values.
        #[arg(long, num_args = 1..)]
        truth: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// R² table over prediction sets given as `mode:model=path`.
    Report {
        #[arg(long, num_args = 1..)]
        inputs: Vec<String>,
        /// Normalization statistics (`norm.csv` of the dataset).
        #[arg(long)]
        norm: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.threads == 0 {
        return Err(CliError::usage("--threads must be positive"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| CliError::usage(e.to_string()))?;
    commands::dispatch(cli.command, cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.kind().as_str().unwrap_or("invalid arguments").to_string();
            let detail = e.to_string();
            let first = detail.lines().find(|l| !l.trim().is_empty()).unwrap_or(&msg);
            eprintln!("{}", CliError::usage(first.trim_start_matches("error: ").to_string()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
