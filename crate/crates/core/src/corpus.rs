//! Parallel and monolingual corpus handling: loading from line-aligned
//! text files, deduplication, seeded train/dev/test splitting with a
//! separate out-of-domain news pool, and corpus statistics.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::rng::Rng;
use crate::textproc::{tokenize, TokenizerMode};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line count mismatch: {src_lines} source lines vs {tgt_lines} target lines")]
    LineCountMismatch { src_lines: usize, tgt_lines: usize },
    #[error("invalid utf-8 in {path} at line {line}")]
    InvalidUtf8 { path: String, line: usize },
    #[error("empty sentence in {path} at line {line}")]
    EmptyLine { path: String, line: usize },
    #[error("malformed metadata at line {line}: {reason}")]
    MalformedMeta { line: usize, reason: String },
    #[error("too few pairs: in-domain pool has {available}, need {needed} for dev+test")]
    TooFewPairs { available: usize, needed: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum Dialect {
    Oklahoma,
    NorthCarolina,
    #[default]
    Unknown,
}

impl Dialect {
    pub fn parse(s: &str) -> Option<Dialect> {
        match s.trim().to_ascii_uppercase().as_str() {
            "OK" => Some(Dialect::Oklahoma),
            "NC" => Some(Dialect::NorthCarolina),
            "UNKNOWN" | "" => Some(Dialect::Unknown),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dialect::Oklahoma => "OK",
            Dialect::NorthCarolina => "NC",
            Dialect::Unknown => "UNKNOWN",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum TextType {
    Sacred,
    Novel,
    Childrens,
    News,
    Narrative,
    Poetry,
    Dialogue,
    #[default]
    Other,
}

impl TextType {
    pub fn parse(s: &str) -> Option<TextType> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SACRED" => Some(TextType::Sacred),
            "NOVEL" => Some(TextType::Novel),
            "CHILDRENS" => Some(TextType::Childrens),
            "NEWS" => Some(TextType::News),
            "NARRATIVE" => Some(TextType::Narrative),
            "POETRY" => Some(TextType::Poetry),
            "DIALOGUE" => Some(TextType::Dialogue),
            "OTHER" | "" => Some(TextType::Other),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TextType::Sacred => "SACRED",
            TextType::Novel => "NOVEL",
            TextType::Childrens => "CHILDRENS",
            TextType::News => "NEWS",
            TextType::Narrative => "NARRATIVE",
            TextType::Poetry => "POETRY",
            TextType::Dialogue => "DIALOGUE",
            TextType::Other => "OTHER",
        }
    }
}

impl fmt::Display for TextType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One aligned sentence pair with its document metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub src: String,
    pub tgt: String,
    pub doc_id: String,
    pub dialect: Dialect,
    pub text_type: TextType,
}

/// A list of sentence pairs in stable load order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub pairs: Vec<SentencePair>,
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<SentencePair>) -> ParallelCorpus {
        ParallelCorpus { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// The same corpus with source and target sides exchanged.
    pub fn swapped(&self) -> ParallelCorpus {
        ParallelCorpus {
            pairs: self
                .pairs
                .iter()
                .map(|p| SentencePair {
                    src: p.tgt.clone(),
                    tgt: p.src.clone(),
                    doc_id: p.doc_id.clone(),
                    dialect: p.dialect,
                    text_type: p.text_type,
                })
                .collect(),
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SentencePair> {
        self.pairs.iter()
    }
}

/// One-sided sentences with the same metadata as pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MonoSentence {
    pub text: String,
    pub doc_id: String,
    pub dialect: Dialect,
    pub text_type: TextType,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MonoCorpus {
    pub sentences: Vec<MonoSentence>,
}

impl MonoCorpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let bytes = fs::read(path)?;
    let mut lines: Vec<String> = Vec::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let line = std::str::from_utf8(raw).map_err(|_| CorpusError::InvalidUtf8 {
            path: path.display().to_string(),
            line: i + 1,
        })?;
        // NFC on load; no further normalization downstream.
        lines.push(line.nfc().collect());
    }
    // A trailing newline produces one empty final entry; drop it.
    if lines.last().map(|l| l.is_empty()).unwrap_or(false) {
        lines.pop();
    }
    Ok(lines)
}

fn parse_meta(path: &Path) -> Result<Vec<(String, Dialect, TextType)>, CorpusError> {
    let lines = read_lines(path)?;
    let mut meta = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(CorpusError::MalformedMeta {
                line: i + 1,
                reason: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let dialect = Dialect::parse(fields[1]).ok_or_else(|| CorpusError::MalformedMeta {
            line: i + 1,
            reason: format!("unknown dialect {:?}", fields[1]),
        })?;
        let text_type = TextType::parse(fields[2]).ok_or_else(|| CorpusError::MalformedMeta {
            line: i + 1,
            reason: format!("unknown text type {:?}", fields[2]),
        })?;
        meta.push((fields[0].to_string(), dialect, text_type));
    }
    Ok(meta)
}

/// Load a parallel corpus from two line-aligned UTF-8 files plus an
/// optional metadata TSV (`doc_id<TAB>dialect<TAB>text_type` per line).
/// Pair `i` is built from line `i` of each file; absent metadata leaves
/// dialect UNKNOWN and text type OTHER.
pub fn load_parallel(
    src_path: &Path,
    tgt_path: &Path,
    meta_path: Option<&Path>,
) -> Result<ParallelCorpus, CorpusError> {
    let src_lines = read_lines(src_path)?;
    let tgt_lines = read_lines(tgt_path)?;
    if src_lines.len() != tgt_lines.len() {
        return Err(CorpusError::LineCountMismatch {
            src_lines: src_lines.len(),
            tgt_lines: tgt_lines.len(),
        });
    }
    let meta = match meta_path {
        Some(path) => {
            let meta = parse_meta(path)?;
            if meta.len() != src_lines.len() {
                return Err(CorpusError::LineCountMismatch {
                    src_lines: src_lines.len(),
                    tgt_lines: meta.len(),
                });
            }
            Some(meta)
        }
        None => None,
    };

    let mut pairs = Vec::with_capacity(src_lines.len());
    for (i, (src, tgt)) in src_lines.into_iter().zip(tgt_lines).enumerate() {
        let src = src.trim().to_string();
        let tgt = tgt.trim().to_string();
        if src.is_empty() {
            return Err(CorpusError::EmptyLine {
                path: src_path.display().to_string(),
                line: i + 1,
            });
        }
        if tgt.is_empty() {
            return Err(CorpusError::EmptyLine {
                path: tgt_path.display().to_string(),
                line: i + 1,
            });
        }
        let (doc_id, dialect, text_type) = match &meta {
            Some(m) => m[i].clone(),
            None => (String::new(), Dialect::Unknown, TextType::Other),
        };
        pairs.push(SentencePair {
            src,
            tgt,
            doc_id,
            dialect,
            text_type,
        });
    }
    Ok(ParallelCorpus::new(pairs))
}

/// Load a monolingual corpus from one file plus optional metadata TSV.
pub fn load_mono(path: &Path, meta_path: Option<&Path>) -> Result<MonoCorpus, CorpusError> {
    let lines = read_lines(path)?;
    let meta = match meta_path {
        Some(mp) => {
            let meta = parse_meta(mp)?;
            if meta.len() != lines.len() {
                return Err(CorpusError::LineCountMismatch {
                    src_lines: lines.len(),
                    tgt_lines: meta.len(),
                });
            }
            Some(meta)
        }
        None => None,
    };
    let mut sentences = Vec::with_capacity(lines.len());
    for (i, text) in lines.into_iter().enumerate() {
        let text = text.trim().to_string();
        if text.is_empty() {
            return Err(CorpusError::EmptyLine {
                path: path.display().to_string(),
                line: i + 1,
            });
        }
        let (doc_id, dialect, text_type) = match &meta {
            Some(m) => m[i].clone(),
            None => (String::new(), Dialect::Unknown, TextType::Other),
        };
        sentences.push(MonoSentence {
            text,
            doc_id,
            dialect,
            text_type,
        });
    }
    Ok(MonoCorpus { sentences })
}

/// Which side's sentence keys deduplication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DedupKey {
    Src,
    Tgt,
}

/// Keep the first occurrence of every key-side sentence, preserving the
/// original relative order. Idempotent.
pub fn deduplicate(corpus: &ParallelCorpus, key_side: DedupKey) -> ParallelCorpus {
    let mut seen: HashSet<&str> = HashSet::with_capacity(corpus.len());
    let mut pairs = Vec::new();
    for pair in corpus.iter() {
        let key = match key_side {
            DedupKey::Src => pair.src.as_str(),
            DedupKey::Tgt => pair.tgt.as_str(),
        };
        if seen.insert(key) {
            pairs.push(pair.clone());
        }
    }
    ParallelCorpus::new(pairs)
}

/// The five-way split: in-domain train/dev/test plus the news-only
/// out-of-domain dev/test halves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitResult {
    pub train: ParallelCorpus,
    pub dev: ParallelCorpus,
    pub test: ParallelCorpus,
    pub out_dev: ParallelCorpus,
    pub out_test: ParallelCorpus,
}

impl SplitResult {
    pub fn counts(&self) -> [usize; 5] {
        [
            self.train.len(),
            self.dev.len(),
            self.test.len(),
            self.out_dev.len(),
            self.out_test.len(),
        ]
    }
}

/// Split with the default 1,000-pair dev and test sizes.
pub fn split(corpus: &ParallelCorpus, seed: u64) -> Result<SplitResult, CorpusError> {
    split_sized(corpus, seed, 1000, 1000)
}

/// Seeded five-way split. News pairs are shuffled and halved into
/// out-dev/out-test (odd count: out-dev gets the extra pair); the rest
/// are shuffled into dev, test, and train. Deterministic in (corpus, seed).
pub fn split_sized(
    corpus: &ParallelCorpus,
    seed: u64,
    dev_size: usize,
    test_size: usize,
) -> Result<SplitResult, CorpusError> {
    let mut news: Vec<&SentencePair> = Vec::new();
    let mut in_domain: Vec<&SentencePair> = Vec::new();
    for pair in corpus.iter() {
        if pair.text_type == TextType::News {
            news.push(pair);
        } else {
            in_domain.push(pair);
        }
    }
    if in_domain.len() < dev_size + test_size {
        return Err(CorpusError::TooFewPairs {
            available: in_domain.len(),
            needed: dev_size + test_size,
        });
    }

    // One stream, news pool first, so the whole split replays from the seed.
    let mut rng = Rng::new(seed);
    rng.shuffle(&mut news);
    rng.shuffle(&mut in_domain);

    let out_dev_len = news.len() - news.len() / 2;
    let (out_dev, out_test) = news.split_at(out_dev_len);
    let (dev, rest) = in_domain.split_at(dev_size);
    let (test, train) = rest.split_at(test_size);

    let collect = |s: &[&SentencePair]| ParallelCorpus::new(s.iter().map(|&p| p.clone()).collect());
    Ok(SplitResult {
        train: collect(train),
        dev: collect(dev),
        test: collect(test),
        out_dev: collect(out_dev),
        out_test: collect(out_test),
    })
}

/// Per-side token statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SideStats {
    pub tokens: usize,
    pub unique: usize,
    /// Percentage of unique tokens absent from the reference vocabulary;
    /// `None` when no reference was supplied.
    pub pct_unseen: Option<f64>,
    pub avg_len: f64,
}

/// Corpus profile in the shape of the usual statistics table.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub n_sentences: usize,
    pub src: SideStats,
    /// Absent for monolingual corpora.
    pub tgt: Option<SideStats>,
}

fn side_stats<'a, I>(
    sentences: I,
    n_sentences: usize,
    mode: TokenizerMode,
    reference: Option<&HashSet<String>>,
) -> SideStats
where
    I: Iterator<Item = &'a str>,
{
    let mut tokens = 0usize;
    let mut vocab: HashSet<String> = HashSet::new();
    for sentence in sentences {
        for tok in tokenize(sentence, mode) {
            tokens += 1;
            vocab.insert(tok);
        }
    }
    let pct_unseen = reference.map(|reference| {
        if vocab.is_empty() {
            0.0
        } else {
            let unseen = vocab.iter().filter(|t| !reference.contains(*t)).count();
            100.0 * unseen as f64 / vocab.len() as f64
        }
    });
    SideStats {
        tokens,
        unique: vocab.len(),
        pct_unseen,
        avg_len: if n_sentences == 0 {
            0.0
        } else {
            tokens as f64 / n_sentences as f64
        },
    }
}

/// Tokenize one side of a corpus into a vocabulary set, for use as the
/// `reference` of later [`stats`] calls.
pub fn vocabulary<'a, I>(sentences: I, mode: TokenizerMode) -> HashSet<String>
where
    I: Iterator<Item = &'a str>,
{
    let mut vocab = HashSet::new();
    for sentence in sentences {
        vocab.extend(tokenize(sentence, mode));
    }
    vocab
}

/// Profile a parallel corpus: token totals, vocabulary sizes, unseen-token
/// percentages against an optional per-side reference vocabulary, and
/// average sentence lengths.
pub fn stats(
    corpus: &ParallelCorpus,
    src_mode: TokenizerMode,
    tgt_mode: TokenizerMode,
    src_reference: Option<&HashSet<String>>,
    tgt_reference: Option<&HashSet<String>>,
) -> CorpusStats {
    let n = corpus.len();
    CorpusStats {
        n_sentences: n,
        src: side_stats(
            corpus.iter().map(|p| p.src.as_str()),
            n,
            src_mode,
            src_reference,
        ),
        tgt: Some(side_stats(
            corpus.iter().map(|p| p.tgt.as_str()),
            n,
            tgt_mode,
            tgt_reference,
        )),
    }
}

/// Profile a monolingual corpus.
pub fn stats_mono(
    corpus: &MonoCorpus,
    mode: TokenizerMode,
    reference: Option<&HashSet<String>>,
) -> CorpusStats {
    let n = corpus.len();
    CorpusStats {
        n_sentences: n,
        src: side_stats(
            corpus.sentences.iter().map(|s| s.text.as_str()),
            n,
            mode,
            reference,
        ),
        tgt: None,
    }
}

/// FNV-1a over bytes; used for split manifests and run manifests.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn corpus_hash(result: &SplitResult) -> u64 {
    let mut buf = Vec::new();
    for part in [
        &result.train,
        &result.dev,
        &result.test,
        &result.out_dev,
        &result.out_test,
    ] {
        for pair in part.iter() {
            buf.extend_from_slice(pair.src.as_bytes());
            buf.push(b'\x1f');
            buf.extend_from_slice(pair.tgt.as_bytes());
            buf.push(b'\n');
        }
        buf.push(b'\x1e');
    }
    fnv1a64(&buf)
}

/// Write the five split parts as `<name>.{src,tgt}` files plus a
/// `split.manifest` recording the seed, part counts, and a content hash.
pub fn write_split(result: &SplitResult, seed: u64, dir: &Path) -> Result<(), CorpusError> {
    fs::create_dir_all(dir)?;
    let parts: [(&str, &ParallelCorpus); 5] = [
        ("train", &result.train),
        ("dev", &result.dev),
        ("test", &result.test),
        ("out_dev", &result.out_dev),
        ("out_test", &result.out_test),
    ];
    for (name, corpus) in parts {
        let mut src = fs::File::create(dir.join(format!("{name}.src")))?;
        let mut tgt = fs::File::create(dir.join(format!("{name}.tgt")))?;
        for pair in corpus.iter() {
            writeln!(src, "{}", pair.src)?;
            writeln!(tgt, "{}", pair.tgt)?;
        }
    }
    let mut manifest = fs::File::create(dir.join("split.manifest"))?;
    writeln!(manifest, "seed = {seed}")?;
    for (name, corpus) in parts {
        writeln!(manifest, "{name} = {}", corpus.len())?;
    }
    writeln!(manifest, "content_hash = {:016x}", corpus_hash(result))?;
    Ok(())
}
