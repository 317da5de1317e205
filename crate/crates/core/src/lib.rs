//! lrmt is a workbench for low-resource machine translation experiments.
//!
//! It bundles, behind one library, every stage of a classic small-corpus
//! translation study:
//!
//! * corpus loading, deduplication, seeded splitting and profiling ([`corpus`]);
//! * tokenization, truecasing and byte-pair encoding ([`textproc`]);
//! * IBM Model 1 word alignment with symmetrization heuristics ([`align`]);
//! * modified Kneser-Ney n-gram language models with ARPA I/O ([`ngram_lm`]);
//! * a phrase-based log-linear decoder with MERT weight tuning ([`smt`]);
//! * a dense-tensor reverse-mode autodiff substrate ([`numerics`]);
//! * RNN and pre-LN Transformer sequence-to-sequence models, beam search
//!   with unknown-word replacement, and contextual-embedding fusion ([`nmt`]);
//! * back-translation, transfer and multilingual training pipelines
//!   ([`semisup`]);
//! * corpus BLEU with a pinned tokenization/smoothing signature, paired
//!   bootstrap confidence intervals, and blind pairwise comparison sheets
//!   ([`eval`]).
//!
//! Everything is CPU-only, deterministic under a seed, and free of
//! external model dependencies.

// Index-style loops over small dense tensors read better than iterator
// chains in the numeric kernels and keep forward/backward code symmetric.
#![allow(clippy::needless_range_loop)]

pub mod align;
pub mod corpus;
pub mod eval;
pub mod ngram_lm;
pub mod nmt;
pub mod numerics;
pub mod rng;
pub mod semisup;
pub mod smt;
pub mod textproc;

pub use corpus::{MonoCorpus, ParallelCorpus, SentencePair, SplitResult};
pub use rng::Rng;
