//! Data-leverage pipelines: back-translation of monolingual text,
//! transfer learning by continued training, and multilingual joint
//! training with target-language tags.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::nmt::{
    beam_search, build_joint_vocab, train, BeamConfig, DataSet, NmtConfig, NmtError, Seq2SeqModel,
    TrainOutcome,
};
use crate::rng::Rng;
use crate::smt::{train_smt, DecoderConfig, SmtError, SmtSystem, SmtTrainConfig};

#[derive(Debug, Error)]
pub enum SemisupError {
    #[error("one-to-many corpus {corpus} sentence {sentence} does not start with its tag {tag:?}")]
    MissingTag {
        corpus: usize,
        sentence: usize,
        tag: String,
    },
    #[error(transparent)]
    Nmt(#[from] NmtError),
    #[error(transparent)]
    Smt(#[from] SmtError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Gold,
    Synthetic,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Gold => "GOLD",
            Provenance::Synthetic => "SYNTHETIC",
        }
    }
}

/// A back-translated corpus: synthetic source sentences paired with the
/// monolingual target sentences that produced them.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub pairs: Vec<(Vec<String>, Vec<String>)>,
    pub generator_id: String,
    /// Monolingual sentences whose translation came back empty.
    pub dropped_empty: usize,
}

/// Anything that can translate a tokenized sentence; lets back-translation
/// run over either backend.
pub trait Translator: Sync {
    fn translate(&self, src_tokens: &[String]) -> Vec<String>;
}

pub struct SmtTranslator<'a> {
    pub system: &'a SmtSystem,
    pub config: DecoderConfig,
}

impl Translator for SmtTranslator<'_> {
    fn translate(&self, src_tokens: &[String]) -> Vec<String> {
        self.system
            .translate(src_tokens, &self.config)
            .map(|out| out.translation)
            .unwrap_or_default()
    }
}

pub struct NmtTranslator<'a> {
    pub model: &'a Seq2SeqModel,
    pub beam: BeamConfig,
}

impl Translator for NmtTranslator<'_> {
    fn translate(&self, src_tokens: &[String]) -> Vec<String> {
        beam_search(self.model, src_tokens, None, &self.beam)
            .map(|t| t.tokens)
            .unwrap_or_default()
    }
}

/// Translate target-language monolingual sentences back into the source
/// language with a target-to-source model. One synthetic pair per
/// sentence; empty translations are dropped and counted.
pub fn back_translate<T: Translator>(
    tgt2src: &T,
    mono_tgt: &[Vec<String>],
    generator_id: &str,
) -> SyntheticCorpus {
    let translations: Vec<Vec<String>> = mono_tgt
        .par_iter()
        .map(|sentence| tgt2src.translate(sentence))
        .collect();
    let mut pairs = Vec::with_capacity(mono_tgt.len());
    let mut dropped_empty = 0;
    for (tgt, src) in mono_tgt.iter().zip(translations) {
        if src.is_empty() {
            dropped_empty += 1;
            continue;
        }
        pairs.push((src, tgt.clone()));
    }
    SyntheticCorpus {
        pairs,
        generator_id: generator_id.to_string(),
        dropped_empty,
    }
}

/// Gold pairs first, then synthetic ones, each carrying its provenance.
pub fn mix(
    gold: &[(Vec<String>, Vec<String>)],
    synthetic: &SyntheticCorpus,
) -> Vec<(Vec<String>, Vec<String>, Provenance)> {
    let mut out = Vec::with_capacity(gold.len() + synthetic.pairs.len());
    for (src, tgt) in gold {
        out.push((src.clone(), tgt.clone(), Provenance::Gold));
    }
    for (src, tgt) in &synthetic.pairs {
        out.push((src.clone(), tgt.clone(), Provenance::Synthetic));
    }
    out
}

pub fn provenance_counts(mixed: &[(Vec<String>, Vec<String>, Provenance)]) -> (usize, usize) {
    let gold = mixed
        .iter()
        .filter(|(_, _, p)| *p == Provenance::Gold)
        .count();
    (gold, mixed.len() - gold)
}

/// Write a synthetic corpus in the standard parallel format plus a
/// `provenance.tsv` sidecar (`index<TAB>provenance<TAB>generator`).
pub fn write_synthetic(dir: &Path, corpus: &SyntheticCorpus) -> Result<(), SemisupError> {
    fs::create_dir_all(dir)?;
    let mut src = fs::File::create(dir.join("synthetic.src"))?;
    let mut tgt = fs::File::create(dir.join("synthetic.tgt"))?;
    let mut sidecar = fs::File::create(dir.join("provenance.tsv"))?;
    for (i, (s, t)) in corpus.pairs.iter().enumerate() {
        writeln!(src, "{}", s.join(" "))?;
        writeln!(tgt, "{}", t.join(" "))?;
        writeln!(
            sidecar,
            "{i}\t{}\t{}",
            Provenance::Synthetic.as_str(),
            corpus.generator_id
        )?;
    }
    Ok(())
}

/// Which system a retraining run produces.
pub enum RetrainBackend {
    Smt(SmtTrainConfig),
    Nmt(NmtConfig),
}

pub enum RetrainedSystem {
    Smt(Box<SmtSystem>),
    Nmt(Box<TrainOutcome>),
}

/// Concatenate gold and synthetic pairs (gold first), rebuild the
/// vocabulary over the union, and retrain the chosen backend from
/// scratch. The development set only matters for the neural backend.
pub fn mix_and_retrain(
    gold: &[(Vec<String>, Vec<String>)],
    synthetic: &SyntheticCorpus,
    backend: RetrainBackend,
    dev: &[(Vec<String>, Vec<String>)],
) -> Result<RetrainedSystem, SemisupError> {
    let mixed = mix(gold, synthetic);
    let pairs: Vec<(Vec<String>, Vec<String>)> = mixed
        .iter()
        .map(|(src, tgt, _)| (src.clone(), tgt.clone()))
        .collect();
    match backend {
        RetrainBackend::Smt(config) => {
            let system = train_smt(&pairs, &[], &config)?;
            Ok(RetrainedSystem::Smt(Box::new(system)))
        }
        RetrainBackend::Nmt(config) => {
            let src_sides: Vec<Vec<String>> = pairs.iter().map(|(s, _)| s.clone()).collect();
            let tgt_sides: Vec<Vec<String>> = pairs.iter().map(|(_, t)| t.clone()).collect();
            let src_vocab = build_joint_vocab(&[&src_sides], config.min_word_freq);
            let tgt_vocab = build_joint_vocab(&[&tgt_sides], config.min_word_freq);
            let model = Seq2SeqModel::new(
                config,
                crate::nmt::FusionConfig::none(),
                src_vocab.clone(),
                tgt_vocab.clone(),
            )?;
            let encode = |vocab: &crate::nmt::Vocabulary,
                          data: &[(Vec<String>, Vec<String>)],
                          side: usize| {
                data.iter()
                    .map(|(s, t)| vocab.encode(if side == 0 { s } else { t }))
                    .collect::<Vec<_>>()
            };
            let train_set = DataSet::new(
                encode(&src_vocab, &pairs, 0)
                    .into_iter()
                    .zip(encode(&tgt_vocab, &pairs, 1))
                    .collect(),
            );
            let dev_set = DataSet::new(
                encode(&src_vocab, dev, 0)
                    .into_iter()
                    .zip(encode(&tgt_vocab, dev, 1))
                    .collect(),
            );
            Ok(RetrainedSystem::Nmt(Box::new(train(
                model, &train_set, &dev_set,
            )?)))
        }
    }
}

/// Transfer learning outcome, keeping the handoff snapshot so callers
/// can verify the continuation started exactly from the parent's best
/// checkpoint.
pub struct TransferOutcome {
    pub parent: TrainOutcome,
    /// Child model parameters at the moment training continued.
    pub handoff_params: Vec<crate::numerics::Tensor>,
    pub child: TrainOutcome,
}

/// Train a parent model to its own early stop, then continue training
/// the same parameters on the child pair with fresh optimizer state and
/// schedule. The joint vocabulary over parent and child is built before
/// parent training so child tokens exist from the start.
pub fn transfer_train(
    parent_pairs: &[(Vec<String>, Vec<String>)],
    child_pairs: &[(Vec<String>, Vec<String>)],
    child_dev: &[(Vec<String>, Vec<String>)],
    parent_config: NmtConfig,
    child_config: NmtConfig,
) -> Result<TransferOutcome, SemisupError> {
    let src_sides: Vec<Vec<String>> = parent_pairs
        .iter()
        .chain(child_pairs)
        .map(|(s, _)| s.clone())
        .collect();
    let tgt_sides: Vec<Vec<String>> = parent_pairs
        .iter()
        .chain(child_pairs)
        .map(|(_, t)| t.clone())
        .collect();
    let src_vocab = build_joint_vocab(&[&src_sides], parent_config.min_word_freq);
    let tgt_vocab = build_joint_vocab(&[&tgt_sides], parent_config.min_word_freq);

    let encode = |data: &[(Vec<String>, Vec<String>)]| -> DataSet {
        DataSet::new(
            data.iter()
                .map(|(s, t)| (src_vocab.encode(s), tgt_vocab.encode(t)))
                .collect(),
        )
    };

    let parent_model = Seq2SeqModel::new(
        parent_config,
        crate::nmt::FusionConfig::none(),
        src_vocab.clone(),
        tgt_vocab.clone(),
    )?;
    let parent = train(parent_model, &encode(parent_pairs), &encode(child_dev))?;

    // Continuation starts bit-exactly from the parent's best checkpoint;
    // only the configuration (and implicitly optimizer state) changes.
    let mut child_model = parent.model.clone();
    child_model.config = child_config;
    let handoff_params = child_model.params.tensors.clone();
    let child = train(child_model, &encode(child_pairs), &encode(child_dev))?;
    Ok(TransferOutcome {
        parent,
        handoff_params,
        child,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiDirection {
    ManyToOne,
    OneToMany,
}

/// Tokenized sentence pairs: (source tokens, target tokens).
pub type TokenPairs = Vec<(Vec<String>, Vec<String>)>;

/// Several parallel corpora with language tags, plus the mixing
/// direction. In one-to-many training every source sentence starts with
/// the tag naming its target language.
pub struct MultiDataset {
    pub corpora: Vec<(TokenPairs, String)>,
    pub direction: MultiDirection,
}

pub fn tag_token(lang: &str) -> String {
    format!("<2{lang}>")
}

impl MultiDataset {
    /// Tagged concatenation: one-to-many prepends each corpus's tag to
    /// its source sentences.
    pub fn tagged_pairs(&self) -> Vec<(Vec<String>, Vec<String>)> {
        let mut out = Vec::new();
        for (pairs, lang) in &self.corpora {
            let tag = tag_token(lang);
            for (src, tgt) in pairs {
                match self.direction {
                    MultiDirection::ManyToOne => out.push((src.clone(), tgt.clone())),
                    MultiDirection::OneToMany => {
                        let mut tagged = Vec::with_capacity(src.len() + 1);
                        tagged.push(tag.clone());
                        tagged.extend(src.iter().cloned());
                        out.push((tagged, tgt.clone()));
                    }
                }
            }
        }
        out
    }

    /// Check the tag invariant on already-tagged data.
    pub fn validate_tagged(
        &self,
        tagged: &[(Vec<String>, Vec<String>)],
    ) -> Result<(), SemisupError> {
        if self.direction != MultiDirection::OneToMany {
            return Ok(());
        }
        let mut index = 0;
        for (corpus_idx, (pairs, lang)) in self.corpora.iter().enumerate() {
            let tag = tag_token(lang);
            for sentence_idx in 0..pairs.len() {
                let (src, _) = &tagged[index];
                if src.first() != Some(&tag) {
                    return Err(SemisupError::MissingTag {
                        corpus: corpus_idx,
                        sentence: sentence_idx,
                        tag,
                    });
                }
                index += 1;
            }
        }
        Ok(())
    }
}

pub struct MultilingualOutcome {
    pub outcome: TrainOutcome,
    pub tags: Vec<String>,
}

/// Joint training over the tagged concatenation, with a shared
/// vocabulary, tag tokens registered as specials, and the sentence order
/// shuffled once under the configured seed before batching (epoch order
/// then reshuffles per epoch inside the trainer).
pub fn multilingual_train(
    dataset: &MultiDataset,
    dev: &[(Vec<String>, Vec<String>)],
    config: NmtConfig,
) -> Result<MultilingualOutcome, SemisupError> {
    let tagged = dataset.tagged_pairs();
    dataset.validate_tagged(&tagged)?;

    let src_sides: Vec<Vec<String>> = tagged.iter().map(|(s, _)| s.clone()).collect();
    let tgt_sides: Vec<Vec<String>> = tagged.iter().map(|(_, t)| t.clone()).collect();
    let mut src_vocab = build_joint_vocab(&[&src_sides], config.min_word_freq);
    let tgt_vocab = build_joint_vocab(&[&tgt_sides], config.min_word_freq);
    let tags: Vec<String> = dataset
        .corpora
        .iter()
        .map(|(_, lang)| tag_token(lang))
        .collect();
    if dataset.direction == MultiDirection::OneToMany {
        src_vocab.add_tags(&tags);
    }

    let mut order: Vec<usize> = (0..tagged.len()).collect();
    Rng::new(config.seed ^ 0x3u64).shuffle(&mut order);
    let pairs: Vec<(Vec<u32>, Vec<u32>)> = order
        .iter()
        .map(|&i| {
            (
                src_vocab.encode(&tagged[i].0),
                tgt_vocab.encode(&tagged[i].1),
            )
        })
        .collect();
    let dev_set = DataSet::new(
        dev.iter()
            .map(|(s, t)| (src_vocab.encode(s), tgt_vocab.encode(t)))
            .collect(),
    );
    let model = Seq2SeqModel::new(
        config,
        crate::nmt::FusionConfig::none(),
        src_vocab,
        tgt_vocab,
    )?;
    let outcome = train(model, &DataSet::new(pairs), &dev_set)?;
    Ok(MultilingualOutcome { outcome, tags })
}
