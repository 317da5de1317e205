//! Neural machine translation: an LSTM encoder-decoder with bilinear
//! (general) attention and a pre-layer-norm Transformer, trained with
//! label smoothing, Adam, early stopping, and optional parameter
//! averaging; beam search with unknown-word replacement; and four ways
//! of fusing external contextual embeddings into the encoder/decoder.

mod beam;
mod checkpoint;
mod fusion;
pub mod model;
pub mod rnn;
mod train;
pub mod transformer;
mod vocab;

pub use beam::{beam_search, greedy_search, BeamConfig, LengthHandling, Translation};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Dtype};
pub use fusion::{
    load_embedding_matrix, load_provider_file, write_embedding_matrix, write_provider_file,
    FusionConfig, FusionMode, ProviderData,
};
pub use model::{BoundParams, ParamSet, Seq2SeqModel};
pub use train::{forward_loss, make_batches, token_accuracy, train, Batch, DataSet, TrainOutcome};
pub use vocab::{build_joint_vocab, build_vocab, Vocabulary, BOS_ID, EOS_ID, PAD_ID, UNK_ID};

use thiserror::Error;

use crate::numerics::LrSchedule;

#[derive(Debug, Error)]
pub enum NmtError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("fusion modes output-concat and output-attention cannot be combined")]
    ModeConflict,
    #[error("no provider vectors for sentence {id}")]
    ProviderMissing { id: usize },
    #[error("provider row count mismatch for sentence {id}: provider has {provider}, sentence has {tokens} tokens")]
    TokenCountMismatch {
        id: usize,
        provider: usize,
        tokens: usize,
    },
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint missing parameter {name:?}")]
    ParamMissing { name: String },
    #[error("malformed {what}: {reason}")]
    Malformed { what: &'static str, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Rnn,
    Transformer,
}

impl Arch {
    pub fn parse(s: &str) -> Option<Arch> {
        match s.to_ascii_lowercase().as_str() {
            "rnn" => Some(Arch::Rnn),
            "transformer" => Some(Arch::Transformer),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Arch::Rnn => "rnn",
            Arch::Transformer => "transformer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchType {
    /// Target-token budget per batch, end-of-sentence included.
    Tokens,
    Sents,
}

impl BatchType {
    pub fn parse(s: &str) -> Option<BatchType> {
        match s.to_ascii_lowercase().as_str() {
            "tokens" => Some(BatchType::Tokens),
            "sents" | "sentences" => Some(BatchType::Sents),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            BatchType::Tokens => "tokens",
            BatchType::Sents => "sents",
        }
    }
}

/// Everything that defines a sequence-to-sequence run.
#[derive(Debug, Clone, PartialEq)]
pub struct NmtConfig {
    pub arch: Arch,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub hidden: usize,
    pub embed: usize,
    pub heads: usize,
    /// Transformer feed-forward width; 0 means 4 * hidden.
    pub ffn: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub tied_decoder_embeddings: bool,
    pub bpe: bool,
    pub min_word_freq: usize,
    pub batch_type: BatchType,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: u64,
    pub rsqrt_decay: bool,
    pub average_decay: Option<f64>,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for NmtConfig {
    fn default() -> Self {
        NmtConfig {
            arch: Arch::Rnn,
            enc_layers: 2,
            dec_layers: 2,
            hidden: 512,
            embed: 512,
            heads: 8,
            ffn: 0,
            dropout: 0.3,
            label_smoothing: 0.1,
            tied_decoder_embeddings: true,
            bpe: false,
            min_word_freq: 0,
            batch_type: BatchType::Tokens,
            batch_size: 1000,
            lr: 5e-4,
            warmup: 4000,
            rsqrt_decay: false,
            average_decay: None,
            early_stop_patience: 10,
            max_epochs: 100,
            seed: 1,
        }
    }
}

impl NmtConfig {
    pub fn ffn_size(&self) -> usize {
        if self.ffn == 0 {
            4 * self.hidden
        } else {
            self.ffn
        }
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        if self.rsqrt_decay {
            LrSchedule::Rsqrt {
                warmup: self.warmup,
            }
        } else {
            LrSchedule::Constant
        }
    }

    pub fn validate(&self) -> Result<(), NmtError> {
        if self.hidden == 0 || self.embed == 0 {
            return Err(NmtError::InvalidConfig("zero hidden or embed size".into()));
        }
        if self.arch == Arch::Transformer {
            if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
                return Err(NmtError::InvalidConfig(format!(
                    "heads ({}) must divide hidden ({})",
                    self.heads, self.hidden
                )));
            }
            if self.embed != self.hidden {
                return Err(NmtError::InvalidConfig(
                    "transformer embeddings must match the hidden size".into(),
                ));
            }
        }
        if self.tied_decoder_embeddings && self.embed != self.hidden {
            return Err(NmtError::InvalidConfig(
                "tied decoder embeddings require embed == hidden".into(),
            ));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return Err(NmtError::InvalidConfig("zero layer count".into()));
        }
        Ok(())
    }

    /// Named presets mirroring the tuned systems; `key` is, e.g.,
    /// `chr-en-rnn-dev`.
    pub fn preset(key: &str) -> Option<NmtConfig> {
        let base = NmtConfig::default();
        let config = match key {
            "chr-en-rnn-dev" => NmtConfig {
                arch: Arch::Rnn,
                enc_layers: 2,
                dec_layers: 2,
                hidden: 1024,
                embed: 1024,
                dropout: 0.3,
                label_smoothing: 0.2,
                tied_decoder_embeddings: true,
                bpe: true,
                min_word_freq: 10,
                batch_type: BatchType::Tokens,
                batch_size: 1000,
                average_decay: Some(1e-4),
                ..base
            },
            "chr-en-rnn-outdev" => NmtConfig {
                arch: Arch::Rnn,
                enc_layers: 2,
                dec_layers: 2,
                hidden: 512,
                embed: 512,
                dropout: 0.3,
                label_smoothing: 0.2,
                tied_decoder_embeddings: true,
                bpe: false,
                min_word_freq: 0,
                batch_type: BatchType::Sents,
                batch_size: 32,
                average_decay: Some(1e-4),
                ..base
            },
            "chr-en-transformer-dev" => NmtConfig {
                arch: Arch::Transformer,
                enc_layers: 5,
                dec_layers: 5,
                hidden: 1024,
                embed: 1024,
                heads: 2,
                dropout: 0.1,
                label_smoothing: 0.1,
                tied_decoder_embeddings: false,
                bpe: true,
                min_word_freq: 10,
                batch_type: BatchType::Tokens,
                batch_size: 4000,
                rsqrt_decay: true,
                warmup: 4000,
                average_decay: None,
                ..base
            },
            "en-chr-rnn-dev" => NmtConfig {
                arch: Arch::Rnn,
                enc_layers: 2,
                dec_layers: 2,
                hidden: 1024,
                embed: 1024,
                dropout: 0.5,
                label_smoothing: 0.2,
                tied_decoder_embeddings: true,
                bpe: false,
                min_word_freq: 0,
                batch_type: BatchType::Tokens,
                batch_size: 1000,
                average_decay: Some(1e-4),
                ..base
            },
            "en-chr-transformer-dev" => NmtConfig {
                arch: Arch::Transformer,
                enc_layers: 5,
                dec_layers: 5,
                hidden: 1024,
                embed: 1024,
                heads: 2,
                dropout: 0.1,
                label_smoothing: 0.1,
                tied_decoder_embeddings: false,
                bpe: true,
                min_word_freq: 5,
                batch_type: BatchType::Tokens,
                batch_size: 4000,
                rsqrt_decay: true,
                warmup: 4000,
                average_decay: None,
                ..base
            },
            "toy-rnn" => NmtConfig {
                arch: Arch::Rnn,
                enc_layers: 1,
                dec_layers: 1,
                hidden: 64,
                embed: 64,
                dropout: 0.0,
                label_smoothing: 0.0,
                tied_decoder_embeddings: true,
                min_word_freq: 0,
                batch_type: BatchType::Sents,
                batch_size: 16,
                average_decay: None,
                max_epochs: 500,
                ..base
            },
            "toy-transformer" => NmtConfig {
                arch: Arch::Transformer,
                enc_layers: 2,
                dec_layers: 2,
                hidden: 32,
                embed: 32,
                heads: 2,
                dropout: 0.0,
                label_smoothing: 0.0,
                tied_decoder_embeddings: false,
                min_word_freq: 0,
                batch_type: BatchType::Sents,
                batch_size: 16,
                rsqrt_decay: true,
                warmup: 400,
                average_decay: None,
                ..base
            },
            _ => return None,
        };
        Some(config)
    }

    pub fn preset_names() -> &'static [&'static str] {
        &[
            "chr-en-rnn-dev",
            "chr-en-rnn-outdev",
            "chr-en-transformer-dev",
            "en-chr-rnn-dev",
            "en-chr-transformer-dev",
            "toy-rnn",
            "toy-transformer",
        ]
    }
}
