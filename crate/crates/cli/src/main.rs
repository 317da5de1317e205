//! Command-line driver for the translation workbench: preprocessing,
//! splitting, statistics, phrase-based and neural training, tuning,
//! translation, semi-supervised pipelines, evaluation, and grid runs.

mod commands;
mod config;
mod io;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ConfigError, ExperimentConfig};

#[derive(Debug)]
pub enum CliError {
    /// Exit 2: configuration problems (unknown keys, bad values).
    Config(String),
    /// Exit 3: data problems (missing/ill-formed corpus files).
    Data(String),
    /// Exit 4: a required model artifact does not exist.
    MissingArtifact(String),
    /// Exit 1: everything else.
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::MissingArtifact(_) => 4,
            CliError::Other(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m)
            | CliError::Data(m)
            | CliError::MissingArtifact(m)
            | CliError::Other(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

pub fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

pub fn other_err(e: impl std::fmt::Display) -> CliError {
    CliError::Other(e.to_string())
}

#[derive(Parser)]
#[command(
    name = "lrmt",
    about = "Low-resource machine translation workbench",
    version
)]
struct Cli {
    /// Experiment configuration file (INI).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration value: section.key=value. Repeatable.
    #[arg(long = "set", global = true)]
    set: Vec<String>,

    /// Base directory for data paths and run outputs.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize, truecase, and learn/apply BPE over a split directory.
    Prep,
    /// Split a raw parallel corpus into train/dev/test/out-dev/out-test.
    Split,
    /// Corpus statistics (token counts, vocabulary, unseen percentages).
    Stats,
    /// Train the phrase table, language model, and default weights.
    TrainSmt,
    /// Train an n-gram language model and export it as ARPA.
    TrainLm,
    /// Tune log-linear weights by MERT on the dev split.
    TuneMert {
        /// Run directory holding phrase_table.txt / lm.arpa / weights.txt.
        #[arg(long)]
        model_dir: PathBuf,
    },
    /// Train a neural model and save its checkpoint.
    TrainNmt,
    /// Translate a tokenized file with a trained system.
    Translate {
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Also write a detokenized sibling (.detok).
        #[arg(long, default_value_t = false)]
        detok: bool,
        /// For the phrase-based backend: also write an n-best list of
        /// this size to a .nbest sibling.
        #[arg(long, default_value_t = 0)]
        nbest: usize,
    },
    /// Back-translate monolingual data into a synthetic parallel corpus.
    Bt {
        /// Target-to-source system used for the synthesis.
        #[arg(long)]
        model_dir: PathBuf,
    },
    /// Transfer learning: parent training, then continuation on the child.
    Transfer,
    /// Multilingual joint training with an auxiliary corpus.
    Multi,
    /// Corpus BLEU of a hypothesis file against a reference file.
    Bleu {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        r#ref: PathBuf,
    },
    /// BLEU with a paired bootstrap confidence interval.
    Ci {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        r#ref: PathBuf,
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Build a blind pairwise comparison sheet from two system outputs.
    HumanSheet {
        #[arg(long)]
        sys_a: PathBuf,
        #[arg(long)]
        sys_b: PathBuf,
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        r#ref: PathBuf,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Tally judgments against a sheet key.
    HumanTally {
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        judgments: PathBuf,
    },
    /// Expand list-valued config keys into one training run each.
    Grid {
        /// Which training command to run per combination.
        #[arg(long, default_value = "train-nmt")]
        target: String,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => {
            let resolved = if path.is_absolute() {
                path.clone()
            } else {
                cli.workdir.join(path)
            };
            ExperimentConfig::load(&resolved)?
        }
        None => ExperimentConfig::default(),
    };
    for assignment in &cli.set {
        config.set(assignment)?;
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match load_config(&cli) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("error: {}", e.message());
            return ExitCode::from(e.exit_code());
        }
    };
    let ctx = commands::Context {
        config,
        workdir: cli.workdir.clone(),
    };
    let result = match &cli.command {
        Command::Prep => commands::prep(&ctx),
        Command::Split => commands::split(&ctx),
        Command::Stats => commands::stats(&ctx),
        Command::TrainSmt => commands::train_smt(&ctx),
        Command::TrainLm => commands::train_lm(&ctx),
        Command::TuneMert { model_dir } => commands::tune_mert(&ctx, model_dir),
        Command::TrainNmt => commands::train_nmt(&ctx),
        Command::Translate {
            model_dir,
            input,
            output,
            detok,
            nbest,
        } => commands::translate(&ctx, model_dir, input, output, *detok, *nbest),
        Command::Bt { model_dir } => commands::back_translate(&ctx, model_dir),
        Command::Transfer => commands::transfer(&ctx),
        Command::Multi => commands::multi(&ctx),
        Command::Bleu { hyp, r#ref } => commands::bleu(&ctx, hyp, r#ref),
        Command::Ci {
            hyp,
            r#ref,
            resamples,
            level,
            seed,
        } => commands::ci(&ctx, hyp, r#ref, *resamples, *level, *seed),
        Command::HumanSheet {
            sys_a,
            sys_b,
            src,
            r#ref,
            n,
            seed,
        } => commands::human_sheet(&ctx, sys_a, sys_b, src, r#ref, *n, *seed),
        Command::HumanTally { key, judgments } => commands::human_tally(&ctx, key, judgments),
        Command::Grid { target, jobs } => commands::grid(&ctx, target, *jobs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
