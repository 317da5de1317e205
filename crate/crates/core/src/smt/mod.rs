//! Phrase-based statistical machine translation: consistent phrase-pair
//! extraction, relative-frequency and lexical-weight scoring, a
//! log-linear stack decoder with distance-based distortion, and MERT
//! weight tuning over n-best pools.

mod decode;
mod extract;
mod mert;
mod table;

pub use decode::{decode, DecodeOutput, DecoderConfig, NBestEntry};
pub use extract::{extract_phrases, ExtractedPhrase};
pub use mert::{mert, mert_line_search, MertConfig, NBestPool, PoolEntry};
pub use table::build_phrase_table;

use crate::align::{
    ibm1_train, symmetrize, viterbi_align, AlignError, Symmetrization, TokenizedPair,
};
use crate::ngram_lm::{lm_train, lm_train_big, Discounting, LmError, NGramModel};

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SmtError {
    #[error("alignment failed: {0}")]
    Align(#[from] AlignError),
    #[error("language model failed: {0}")]
    Lm(#[from] LmError),
    #[error("source sentence has {len} words; the decoder coverage set is limited to 128")]
    SentenceTooLong { len: usize },
    #[error("phrase table and corpus disagree: {0}")]
    Inconsistent(String),
    #[error("malformed {what} at line {line}: {reason}")]
    Malformed {
        what: &'static str,
        line: usize,
        reason: String,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Log-linear feature order used by the decoder, n-best lists, and the
/// weights file.
pub const FEATURE_NAMES: [&str; 9] = [
    "phi_fe",
    "lex_fe",
    "phi_ef",
    "lex_ef",
    "phrase_penalty",
    "lm",
    "word_penalty",
    "distortion",
    "oov_penalty",
];

pub const N_FEATURES: usize = 9;

/// Weights over the nine decoder features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWeights {
    pub values: [f64; N_FEATURES],
}

impl Default for FeatureWeights {
    /// Conventional starting point: equal translation weights, mild
    /// language-model preference, length and jump penalties.
    fn default() -> Self {
        FeatureWeights {
            values: [0.2, 0.2, 0.2, 0.2, 0.2, 0.5, -0.3, 0.3, -1.0],
        }
    }
}

impl FeatureWeights {
    pub fn ones() -> Self {
        FeatureWeights {
            values: [1.0; N_FEATURES],
        }
    }

    pub fn dot(&self, features: &[f64; N_FEATURES]) -> f64 {
        self.values.iter().zip(features).map(|(w, f)| w * f).sum()
    }

    /// `name = value` lines.
    pub fn save(&self, path: &Path) -> Result<(), SmtError> {
        let mut out = fs::File::create(path)?;
        for (name, value) in FEATURE_NAMES.iter().zip(self.values) {
            writeln!(out, "{name} = {value}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<FeatureWeights, SmtError> {
        let text = fs::read_to_string(path)?;
        let mut weights = FeatureWeights::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, value) = line.split_once('=').ok_or(SmtError::Malformed {
                what: "weights file",
                line: i + 1,
                reason: "expected name = value".to_string(),
            })?;
            let idx = FEATURE_NAMES
                .iter()
                .position(|n| *n == name.trim())
                .ok_or_else(|| SmtError::Malformed {
                    what: "weights file",
                    line: i + 1,
                    reason: format!("unknown feature {:?}", name.trim()),
                })?;
            weights.values[idx] = value.trim().parse().map_err(|_| SmtError::Malformed {
                what: "weights file",
                line: i + 1,
                reason: format!("bad value {:?}", value.trim()),
            })?;
        }
        Ok(weights)
    }
}

/// One translation option: target phrase, the five raw probability
/// features, and the internal word alignment of the extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseOption {
    pub tgt: Vec<String>,
    /// phi(f|e), lex(f|e), phi(e|f), lex(e|f), phrase penalty (= e).
    pub features: [f64; 5],
    pub alignment: Vec<(usize, usize)>,
}

/// Source phrase to scored target options.
#[derive(Debug, Clone, Default)]
pub struct PhraseTable {
    entries: BTreeMap<Vec<String>, Vec<PhraseOption>>,
    max_phrase_len: usize,
}

impl PhraseTable {
    pub fn new(max_phrase_len: usize) -> PhraseTable {
        PhraseTable {
            entries: BTreeMap::new(),
            max_phrase_len,
        }
    }

    pub fn max_phrase_len(&self) -> usize {
        self.max_phrase_len
    }

    pub fn insert(&mut self, src: Vec<String>, option: PhraseOption) {
        self.entries.entry(src).or_default().push(option);
    }

    pub fn options(&self, src: &[String]) -> &[PhraseOption] {
        self.entries.get(src).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn source_phrases(&self) -> impl Iterator<Item = &Vec<String>> {
        self.entries.keys()
    }

    /// `src ||| tgt ||| f1 f2 f3 f4 f5 ||| i-j alignment`, sorted by
    /// source phrase.
    pub fn save(&self, path: &Path) -> Result<(), SmtError> {
        let mut out = fs::File::create(path)?;
        for (src, options) in &self.entries {
            for option in options {
                let feats = option
                    .features
                    .iter()
                    .map(|f| format!("{f}"))
                    .collect::<Vec<_>>()
                    .join(" ");
                let align = option
                    .alignment
                    .iter()
                    .map(|(i, j)| format!("{i}-{j}"))
                    .collect::<Vec<_>>()
                    .join(" ");
                writeln!(
                    out,
                    "{} ||| {} ||| {} ||| {}",
                    src.join(" "),
                    option.tgt.join(" "),
                    feats,
                    align
                )?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path, max_phrase_len: usize) -> Result<PhraseTable, SmtError> {
        let text = fs::read_to_string(path)?;
        let mut table = PhraseTable::new(max_phrase_len);
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(" ||| ").collect();
            if fields.len() != 4 {
                return Err(SmtError::Malformed {
                    what: "phrase table",
                    line: i + 1,
                    reason: format!("expected 4 ||| fields, got {}", fields.len()),
                });
            }
            let src: Vec<String> = fields[0].split_whitespace().map(str::to_string).collect();
            let tgt: Vec<String> = fields[1].split_whitespace().map(str::to_string).collect();
            let feat_vals: Vec<f64> = fields[2]
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| SmtError::Malformed {
                    what: "phrase table",
                    line: i + 1,
                    reason: "bad feature value".to_string(),
                })?;
            if feat_vals.len() != 5 {
                return Err(SmtError::Malformed {
                    what: "phrase table",
                    line: i + 1,
                    reason: format!("expected 5 features, got {}", feat_vals.len()),
                });
            }
            let mut alignment = Vec::new();
            for part in fields[3].split_whitespace() {
                let link = part
                    .split_once('-')
                    .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                    .ok_or_else(|| SmtError::Malformed {
                        what: "phrase table",
                        line: i + 1,
                        reason: format!("bad alignment link {part:?}"),
                    })?;
                alignment.push(link);
            }
            let mut features = [0.0; 5];
            features.copy_from_slice(&feat_vals);
            table.insert(
                src,
                PhraseOption {
                    tgt,
                    features,
                    alignment,
                },
            );
        }
        Ok(table)
    }
}

/// End-to-end settings for building a phrase-based system.
#[derive(Debug, Clone)]
pub struct SmtTrainConfig {
    pub ibm1_iterations: usize,
    pub lm_order: usize,
    pub symmetrization: Symmetrization,
    pub max_phrase_len: usize,
}

impl Default for SmtTrainConfig {
    fn default() -> Self {
        SmtTrainConfig {
            ibm1_iterations: 5,
            lm_order: 3,
            symmetrization: Symmetrization::GrowDiagFinalAnd,
            max_phrase_len: 7,
        }
    }
}

/// A trained phrase-based system: knowledge sources plus weights.
#[derive(Debug, Clone)]
pub struct SmtSystem {
    pub table: PhraseTable,
    pub lm: NGramModel,
    pub weights: FeatureWeights,
}

impl SmtSystem {
    pub fn translate(
        &self,
        src_tokens: &[String],
        config: &DecoderConfig,
    ) -> Result<DecodeOutput, SmtError> {
        decode(src_tokens, &self.table, &self.lm, &self.weights, config)
    }
}

/// Word-align both directions, symmetrize, extract and score phrases,
/// and train the target-side language model (over the parallel target
/// side plus any monolingual sentences). Weights start at the defaults;
/// tuning is a separate step.
pub fn train_smt(
    pairs: &[TokenizedPair],
    lm_mono: &[Vec<String>],
    config: &SmtTrainConfig,
) -> Result<SmtSystem, SmtError> {
    let swapped: Vec<TokenizedPair> = pairs
        .iter()
        .map(|(src, tgt)| (tgt.clone(), src.clone()))
        .collect();
    let fwd_table = ibm1_train(pairs, config.ibm1_iterations)?;
    let bwd_table = ibm1_train(&swapped, config.ibm1_iterations)?;
    let alignments: Vec<_> = pairs
        .iter()
        .zip(&swapped)
        .map(|(pair, swapped_pair)| {
            let fwd = viterbi_align(&fwd_table, pair);
            let bwd = viterbi_align(&bwd_table, swapped_pair).transposed();
            symmetrize(&fwd, &bwd, config.symmetrization)
        })
        .collect::<Result<_, _>>()?;
    let table = build_phrase_table(
        pairs,
        &alignments,
        &fwd_table,
        &bwd_table,
        config.max_phrase_len,
    )?;
    let target_side: Vec<Vec<String>> = pairs.iter().map(|(_, tgt)| tgt.clone()).collect();
    let lm = if lm_mono.is_empty() {
        lm_train(&target_side, config.lm_order, Discounting::ModifiedKn)?
    } else {
        lm_train_big(&target_side, lm_mono, config.lm_order)?
    };
    Ok(SmtSystem {
        table,
        lm,
        weights: FeatureWeights::default(),
    })
}

impl fmt::Display for FeatureWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = FEATURE_NAMES
            .iter()
            .zip(self.values)
            .map(|(n, v)| format!("{n}={v:.4}"))
            .collect();
        write!(f, "{}", parts.join(" "))
    }
}

/// Write an n-best list in the `sent_id ||| translation ||| name= value
/// ... ||| total` format.
pub fn write_nbest(path: &Path, lists: &[Vec<NBestEntry>]) -> Result<(), SmtError> {
    let mut out = fs::File::create(path)?;
    for (sent_id, list) in lists.iter().enumerate() {
        for entry in list {
            let feats = FEATURE_NAMES
                .iter()
                .zip(entry.features)
                .map(|(n, v)| format!("{n}= {v:.6}"))
                .collect::<Vec<_>>()
                .join(" ");
            writeln!(
                out,
                "{} ||| {} ||| {} ||| {:.6}",
                sent_id,
                entry.tokens.join(" "),
                feats,
                entry.score
            )?;
        }
    }
    Ok(())
}
