//! Interpolated modified Kneser-Ney n-gram language models with ARPA
//! text I/O.
//!
//! Conventions: one `<s>` pad and one `</s>` per sentence; `<s>` is
//! context-only and never predicted; the highest order uses raw counts,
//! lower orders continuation counts except n-grams beginning with `<s>`,
//! which keep raw counts; three discounts per order are estimated from
//! count-of-counts of the adjusted counts; unigrams interpolate with the
//! uniform distribution over the prediction vocabulary (observed tokens
//! plus `</s>` and `<unk>`), which is how `<unk>` receives the unigram
//! backoff mass. Probabilities are stored and exported as log10.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

#[derive(Debug, Error)]
pub enum LmError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("order must be >= 1")]
    ZeroOrder,
    #[error("malformed ARPA at line {line}: {reason}")]
    MalformedArpa { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Discounting {
    ModifiedKn,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    /// log10 conditional probability.
    prob: f64,
    /// log10 backoff weight; 0.0 when none.
    backoff: f64,
}

/// A trained (or imported) backoff n-gram model.
#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    /// grams[n-1]: n-gram ids -> entry.
    grams: Vec<HashMap<Vec<u32>, Entry>>,
    warnings: Vec<String>,
}

/// Ids are assigned in vocabulary order; the specials always exist.
impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// All tokens the model can predict (`<s>` excluded).
    pub fn prediction_vocab(&self) -> impl Iterator<Item = &String> {
        self.vocab.iter().filter(|w| w.as_str() != BOS)
    }

    pub fn n_grams(&self, order: usize) -> usize {
        self.grams.get(order - 1).map(HashMap::len).unwrap_or(0)
    }

    fn id(&self, token: &str) -> u32 {
        self.index
            .get(token)
            .or_else(|| self.index.get(UNK))
            .copied()
            .expect("<unk> always present")
    }

    /// log10 P(word | context) through the backoff chain. Out-of-vocabulary
    /// tokens (in the context or as the predicted word) map to `<unk>`.
    pub fn cond_log10(&self, context: &[String], word: &str) -> f64 {
        let ids: Vec<u32> = context.iter().map(|w| self.id(w)).collect();
        self.cond_log10_ids(&ids, self.id(word))
    }

    pub fn token_id(&self, token: &str) -> u32 {
        self.id(token)
    }

    pub fn eos_id(&self) -> u32 {
        self.id(EOS)
    }

    pub fn bos_id(&self) -> u32 {
        self.id(BOS)
    }

    /// Id-based query for decoder inner loops.
    pub fn cond_log10_ids(&self, context: &[u32], word: u32) -> f64 {
        let start = context.len().saturating_sub(self.order - 1);
        let mut ctx = &context[start..];
        let mut accumulated_backoff = 0.0;
        loop {
            let mut key = Vec::with_capacity(ctx.len() + 1);
            key.extend_from_slice(ctx);
            key.push(word);
            if let Some(entry) = self.grams[key.len() - 1].get(&key) {
                return accumulated_backoff + entry.prob;
            }
            if ctx.is_empty() {
                // The unigram table covers every id we hand out, so the
                // only way to get here is an id from another model.
                return accumulated_backoff
                    + self.grams[0]
                        .get(&vec![self.id(UNK)])
                        .map(|e| e.prob)
                        .unwrap_or(-99.0);
            }
            if let Some(entry) = self.grams[ctx.len() - 1].get(ctx) {
                accumulated_backoff += entry.backoff;
            }
            ctx = &ctx[1..];
        }
    }

    /// log10 probability of a tokenized sentence: implicit `<s>` context,
    /// every token scored in turn, plus the terminal `</s>`.
    pub fn score(&self, sentence: &[String]) -> f64 {
        let mut ids: Vec<u32> = Vec::with_capacity(sentence.len() + 2);
        ids.push(self.id(BOS));
        let mut total = 0.0;
        for word in sentence.iter().map(|w| self.id(w)).chain([self.id(EOS)]) {
            total += self.cond_log10_ids(&ids, word);
            ids.push(word);
        }
        total
    }

    /// 10^(-total_log10 / tokens), `</s>` counted once per sentence.
    pub fn perplexity(&self, corpus: &[Vec<String>]) -> f64 {
        let mut log_total = 0.0;
        let mut tokens = 0usize;
        for sentence in corpus {
            log_total += self.score(sentence);
            tokens += sentence.len() + 1;
        }
        if tokens == 0 {
            return f64::INFINITY;
        }
        10f64.powf(-log_total / tokens as f64)
    }

    /// Standard ARPA text: `\data\` counts, per-order `\n-grams:` blocks
    /// of `log10prob<TAB>n-gram<TAB>log10backoff`, `\end\`. Byte-stable
    /// across retrainings of the same corpus.
    pub fn to_arpa_string(&self) -> String {
        let mut out = String::new();
        out.push_str("\\data\\\n");
        for n in 1..=self.order {
            out.push_str(&format!("ngram {n}={}\n", self.grams[n - 1].len()));
        }
        for n in 1..=self.order {
            out.push_str(&format!("\n\\{n}-grams:\n"));
            let mut lines: Vec<(Vec<&str>, &Entry)> = self.grams[n - 1]
                .iter()
                .map(|(ids, entry)| {
                    let words: Vec<&str> = ids
                        .iter()
                        .map(|&id| self.vocab[id as usize].as_str())
                        .collect();
                    (words, entry)
                })
                .collect();
            lines.sort_by(|a, b| a.0.cmp(&b.0));
            for (words, entry) in lines {
                if n < self.order {
                    out.push_str(&format!(
                        "{:.7}\t{}\t{:.7}\n",
                        entry.prob,
                        words.join(" "),
                        entry.backoff
                    ));
                } else {
                    out.push_str(&format!("{:.7}\t{}\n", entry.prob, words.join(" ")));
                }
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }

    pub fn arpa_export(&self, path: &Path) -> Result<(), LmError> {
        fs::write(path, self.to_arpa_string())?;
        Ok(())
    }

    pub fn from_arpa_string(text: &str) -> Result<NGramModel, LmError> {
        let mut lines = text.lines().enumerate().peekable();
        let err = |line: usize, reason: &str| LmError::MalformedArpa {
            line: line + 1,
            reason: reason.to_string(),
        };

        // Header.
        let mut counts: Vec<usize> = Vec::new();
        let mut saw_data = false;
        for (i, line) in lines.by_ref() {
            let line = line.trim();
            if line.is_empty() {
                if saw_data && !counts.is_empty() {
                    break;
                }
                continue;
            }
            if line == "\\data\\" {
                saw_data = true;
            } else if let Some(rest) = line.strip_prefix("ngram ") {
                let (n, count) = rest
                    .split_once('=')
                    .ok_or_else(|| err(i, "expected ngram N=count"))?;
                let n: usize = n.trim().parse().map_err(|_| err(i, "bad order"))?;
                let count: usize = count.trim().parse().map_err(|_| err(i, "bad count"))?;
                if n != counts.len() + 1 {
                    return Err(err(i, "orders out of sequence"));
                }
                counts.push(count);
            } else {
                return Err(err(i, "unexpected line in header"));
            }
        }
        if !saw_data || counts.is_empty() {
            return Err(err(0, "missing \\data\\ section"));
        }

        let order = counts.len();
        let mut model = NGramModel {
            order,
            vocab: Vec::new(),
            index: HashMap::new(),
            grams: vec![HashMap::new(); order],
            warnings: Vec::new(),
        };
        let intern = |model: &mut NGramModel, token: &str| -> u32 {
            if let Some(&id) = model.index.get(token) {
                return id;
            }
            let id = model.vocab.len() as u32;
            model.vocab.push(token.to_string());
            model.index.insert(token.to_string(), id);
            id
        };

        let mut current: Option<usize> = None;
        let mut saw_end = false;
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line == "\\end\\" {
                saw_end = true;
                break;
            }
            if let Some(rest) = line.strip_suffix("-grams:") {
                let n: usize = rest
                    .strip_prefix('\\')
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err(i, "bad section header"))?;
                if n == 0 || n > order {
                    return Err(err(i, "section order out of range"));
                }
                current = Some(n);
                continue;
            }
            let n = current.ok_or_else(|| err(i, "n-gram line outside a section"))?;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 2 || fields.len() > 3 {
                return Err(err(i, "expected 2 or 3 tab-separated fields"));
            }
            let prob: f64 = fields[0]
                .trim()
                .parse()
                .map_err(|_| err(i, "bad probability"))?;
            let words: Vec<&str> = fields[1].split_whitespace().collect();
            if words.len() != n {
                return Err(err(i, "n-gram length does not match section order"));
            }
            let backoff: f64 = match fields.get(2) {
                Some(s) => s.trim().parse().map_err(|_| err(i, "bad backoff"))?,
                None => 0.0,
            };
            let ids: Vec<u32> = words.iter().map(|w| intern(&mut model, w)).collect();
            model.grams[n - 1].insert(ids, Entry { prob, backoff });
        }
        if !saw_end {
            return Err(err(text.lines().count(), "missing \\end\\"));
        }
        for (n, expected) in counts.iter().enumerate() {
            if model.grams[n].len() != *expected {
                model.warnings.push(format!(
                    "header declares {} {}-grams, found {}",
                    expected,
                    n + 1,
                    model.grams[n].len()
                ));
            }
        }
        for special in [BOS, EOS, UNK] {
            intern(&mut model, special);
        }
        Ok(model)
    }

    pub fn arpa_import(path: &Path) -> Result<NGramModel, LmError> {
        NGramModel::from_arpa_string(&fs::read_to_string(path)?)
    }
}

/// Per-order modified-KN discounts D1, D2, D3+.
#[derive(Debug, Clone, Copy)]
struct Discounts {
    d: [f64; 3],
}

impl Discounts {
    fn for_count(&self, c: u64) -> f64 {
        match c {
            0 => 0.0,
            1 => self.d[0],
            2 => self.d[1],
            _ => self.d[2],
        }
    }
}

fn estimate_discounts(counts: impl Iterator<Item = u64>) -> (Discounts, bool) {
    let mut n = [0u64; 4];
    for c in counts {
        if (1..=4).contains(&c) {
            n[(c - 1) as usize] += 1;
        }
    }
    let (n1, n2, n3, n4) = (n[0] as f64, n[1] as f64, n[2] as f64, n[3] as f64);
    if n[0] > 0 && n[1] > 0 && n[2] > 0 && n[3] > 0 {
        let y = n1 / (n1 + 2.0 * n2);
        let d = [
            1.0 - 2.0 * y * n2 / n1,
            2.0 - 3.0 * y * n3 / n2,
            3.0 - 4.0 * y * n4 / n3,
        ];
        if (0.0..=1.0).contains(&d[0]) && (0.0..=2.0).contains(&d[1]) && (0.0..=3.0).contains(&d[2])
        {
            return (Discounts { d }, false);
        }
    }
    (Discounts { d: [0.5, 0.5, 0.5] }, true)
}

struct Trainer {
    order: usize,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    bos: u32,
    /// adjusted[n-1]: n-gram -> adjusted count.
    adjusted: Vec<HashMap<Vec<u32>, u64>>,
}

impl Trainer {
    fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.vocab.len() as u32;
        self.vocab.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    fn count(&mut self, sentences: &[&[String]]) {
        let mut raw: Vec<HashMap<Vec<u32>, u64>> = vec![HashMap::new(); self.order];
        let eos = self.intern(EOS);
        for sentence in sentences {
            let mut seq = Vec::with_capacity(sentence.len() + 2);
            seq.push(self.bos);
            for tok in sentence.iter() {
                seq.push(self.intern(tok));
            }
            seq.push(eos);
            for n in 1..=self.order.min(seq.len()) {
                for window in seq.windows(n) {
                    *raw[n - 1].entry(window.to_vec()).or_insert(0) += 1;
                }
            }
        }

        // Highest order keeps raw counts; lower orders use continuation
        // counts except for n-grams that start with <s>.
        self.adjusted = vec![HashMap::new(); self.order];
        self.adjusted[self.order - 1] = raw[self.order - 1].clone();
        for n in (1..self.order).rev() {
            let mut continuation: HashMap<&[u32], u64> = HashMap::new();
            for gram in raw[n].keys() {
                *continuation.entry(&gram[1..]).or_insert(0) += 1;
            }
            let target = &mut self.adjusted[n - 1];
            for (gram, &raw_count) in &raw[n - 1] {
                let count = if gram[0] == self.bos {
                    raw_count
                } else {
                    continuation.get(gram.as_slice()).copied().unwrap_or(0)
                };
                target.insert(gram.clone(), count);
            }
        }
    }
}

/// Train an interpolated modified-KN model. Adding the same sentences
/// again yields a byte-identical ARPA export.
pub fn lm_train(
    sentences: &[Vec<String>],
    order: usize,
    _discounting: Discounting,
) -> Result<NGramModel, LmError> {
    let refs: Vec<&[String]> = sentences.iter().map(Vec::as_slice).collect();
    lm_train_refs(&refs, order)
}

fn lm_train_refs(sentences: &[&[String]], order: usize) -> Result<NGramModel, LmError> {
    if order == 0 {
        return Err(LmError::ZeroOrder);
    }
    if sentences.is_empty() {
        return Err(LmError::EmptyCorpus);
    }
    let mut trainer = Trainer {
        order,
        vocab: Vec::new(),
        index: HashMap::new(),
        bos: 0,
        adjusted: Vec::new(),
    };
    trainer.intern(BOS); // id 0
    trainer.intern(EOS);
    trainer.intern(UNK);
    trainer.count(sentences);

    let bos = trainer.bos;
    let mut warnings = Vec::new();

    // Discounts per order; order-1 count-of-counts exclude <s>.
    let mut discounts = Vec::with_capacity(order);
    for n in 1..=order {
        let (d, degenerate) = if n == 1 {
            estimate_discounts(
                trainer.adjusted[0]
                    .iter()
                    .filter(|(g, _)| g[0] != bos)
                    .map(|(_, &c)| c),
            )
        } else {
            estimate_discounts(trainer.adjusted[n - 1].values().copied())
        };
        if degenerate {
            warnings.push(format!(
                "degenerate count-of-counts at order {n}; using absolute discount 0.5"
            ));
        }
        discounts.push(d);
    }

    // Extension sets per history. The unigram history excludes <s>.
    type Extensions = Vec<HashMap<Vec<u32>, Vec<(u32, u64)>>>;
    let mut extensions: Extensions = vec![HashMap::new(); order];
    for n in 1..=order {
        for (gram, &count) in &trainer.adjusted[n - 1] {
            if n == 1 && gram[0] == bos {
                continue;
            }
            extensions[n - 1]
                .entry(gram[..n - 1].to_vec())
                .or_default()
                .push((gram[n - 1], count));
        }
    }

    // gamma(h) = (D1 N1 + D2 N2 + D3 N3+) / sum of extension counts.
    let gamma = |n: usize, history: &[u32]| -> Option<f64> {
        let exts = extensions[n - 1].get(history)?;
        let denom: u64 = exts.iter().map(|&(_, c)| c).sum();
        if denom == 0 {
            return None;
        }
        let d = &discounts[n - 1];
        let mut mass = 0.0;
        for &(_, c) in exts {
            mass += d.for_count(c);
        }
        Some(mass / denom as f64)
    };

    // Prediction vocabulary: everything interned except <s>.
    let vstar = trainer.vocab.len() - 1;
    let uniform = 1.0 / vstar as f64;
    let total_uni: u64 = extensions[0][&Vec::new()].iter().map(|&(_, c)| c).sum();
    let gamma_eps = gamma(1, &[]).expect("non-empty corpus has unigrams");

    // Interpolated probability, evaluated bottom-up per order so that
    // lower-order values are already final when higher orders need them.
    let mut prob_tables: Vec<HashMap<Vec<u32>, f64>> = vec![HashMap::new(); order];
    // Unigrams over the whole prediction vocabulary, including <unk>.
    for id in 0..trainer.vocab.len() as u32 {
        if id == bos {
            continue;
        }
        let c = trainer.adjusted[0].get(&vec![id]).copied().unwrap_or(0);
        let p = (c as f64 - discounts[0].for_count(c)).max(0.0) / total_uni as f64
            + gamma_eps * uniform;
        prob_tables[0].insert(vec![id], p);
    }
    for n in 2..=order {
        let mut table = HashMap::with_capacity(trainer.adjusted[n - 1].len());
        for (history, exts) in &extensions[n - 1] {
            let denom: u64 = exts.iter().map(|&(_, c)| c).sum();
            if denom == 0 {
                continue;
            }
            let g = gamma(n, history).unwrap();
            for &(word, c) in exts {
                let lower_key: Vec<u32> = history[1..].iter().copied().chain([word]).collect();
                // Suffixes of stored n-grams are themselves stored:
                // anything observed mid-sequence has a predecessor, and
                // <s>-initial grams keep raw counts.
                let lower = *prob_tables[n - 2]
                    .get(&lower_key)
                    .expect("suffix of a stored n-gram is stored");
                let p =
                    (c as f64 - discounts[n - 1].for_count(c)).max(0.0) / denom as f64 + g * lower;
                let mut key = history.clone();
                key.push(word);
                table.insert(key, p);
            }
        }
        prob_tables[n - 1] = table;
    }

    // Assemble the stored model: log10 probs, backoff = log10 gamma of
    // the history formed by this n-gram (orders below the top).
    let mut grams: Vec<HashMap<Vec<u32>, Entry>> = vec![HashMap::new(); order];
    for n in 1..=order {
        for (gram, &p) in &prob_tables[n - 1] {
            let backoff = if n < order {
                gamma(n + 1, gram).map(|g| g.log10()).unwrap_or(0.0)
            } else {
                0.0
            };
            grams[n - 1].insert(
                gram.clone(),
                Entry {
                    prob: p.log10(),
                    backoff,
                },
            );
        }
    }
    // <s> is stored as a placeholder so that its backoff weight is
    // available, but it can never be predicted.
    if order >= 2 {
        let bos_backoff = gamma(2, &[bos]).map(|g| g.log10()).unwrap_or(0.0);
        grams[0].insert(
            vec![bos],
            Entry {
                prob: -99.0,
                backoff: bos_backoff,
            },
        );
    }
    // <s>-initial higher-order grams were skipped in prob_tables only at
    // order 1; orders >= 2 include them via their histories.

    Ok(NGramModel {
        order,
        vocab: trainer.vocab,
        index: trainer.index,
        grams,
        warnings,
    })
}

/// Concatenate the parallel target side with monolingual sentences and
/// train one model over the union; counts are additive.
pub fn lm_train_big(
    parallel_target_side: &[Vec<String>],
    mono: &[Vec<String>],
    order: usize,
) -> Result<NGramModel, LmError> {
    let refs: Vec<&[String]> = parallel_target_side
        .iter()
        .chain(mono.iter())
        .map(Vec::as_slice)
        .collect();
    lm_train_refs(&refs, order)
}

/// Convenience alias matching the training entry point's name scheme.
pub fn lm_score(model: &NGramModel, sentence: &[String]) -> f64 {
    model.score(sentence)
}

pub fn lm_perplexity(model: &NGramModel, corpus: &[Vec<String>]) -> f64 {
    model.perplexity(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sents(v: &[&str]) -> Vec<Vec<String>> {
        v.iter()
            .map(|s| s.split_whitespace().map(str::to_string).collect())
            .collect()
    }

    #[test]
    fn order1_sums_to_one() {
        let model = lm_train(&sents(&["a"]), 1, Discounting::ModifiedKn).unwrap();
        let p_a = 10f64.powf(model.cond_log10(&[], "a"));
        let p_eos = 10f64.powf(model.cond_log10(&[], EOS));
        let p_unk = 10f64.powf(model.cond_log10(&[], "never-seen"));
        assert!(
            (p_a + p_eos + p_unk - 1.0).abs() < 1e-12,
            "{p_a} + {p_eos} + {p_unk}"
        );
    }

    #[test]
    fn empty_corpus_and_zero_order_rejected() {
        assert!(matches!(
            lm_train(&[], 3, Discounting::ModifiedKn),
            Err(LmError::EmptyCorpus)
        ));
        assert!(matches!(
            lm_train(&sents(&["a"]), 0, Discounting::ModifiedKn),
            Err(LmError::ZeroOrder)
        ));
    }

    #[test]
    fn empty_sentence_scores_eos_only() {
        let model = lm_train(&sents(&["a b", "a c"]), 2, Discounting::ModifiedKn).unwrap();
        let empty: Vec<String> = vec![];
        let score = model.score(&empty);
        let direct = model.cond_log10(&[BOS.to_string()], EOS);
        assert!((score - direct).abs() < 1e-12);
    }

    #[test]
    fn oov_sentences_stay_finite() {
        let model = lm_train(&sents(&["a b", "b a"]), 3, Discounting::ModifiedKn).unwrap();
        let oov = sents(&["zz qq rr"]).pop().unwrap();
        let score = model.score(&oov);
        assert!(score.is_finite());
        assert!(score < 0.0);
    }

    #[test]
    fn retraining_is_byte_identical() {
        let corpus = sents(&["a b c", "a b d", "c a b", "d", "a"]);
        let a = lm_train(&corpus, 3, Discounting::ModifiedKn).unwrap();
        let b = lm_train(&corpus, 3, Discounting::ModifiedKn).unwrap();
        assert_eq!(a.to_arpa_string(), b.to_arpa_string());
    }

    #[test]
    fn big_lm_with_empty_mono_is_identity() {
        let parallel = sents(&["a b c", "c b a", "a c"]);
        let plain = lm_train(&parallel, 3, Discounting::ModifiedKn).unwrap();
        let big = lm_train_big(&parallel, &[], 3).unwrap();
        assert_eq!(plain.to_arpa_string(), big.to_arpa_string());
    }

    #[test]
    fn big_lm_disjoint_mono_unions_vocabulary() {
        let parallel = sents(&["a b", "b a"]);
        let mono = sents(&["x y", "y x"]);
        let plain = lm_train(&parallel, 2, Discounting::ModifiedKn).unwrap();
        let big = lm_train_big(&parallel, &mono, 2).unwrap();
        let plain_vocab = plain.prediction_vocab().count();
        let big_vocab = big.prediction_vocab().count();
        assert_eq!(big_vocab, plain_vocab + 2);
        // Superset property: no vocabulary entry disappears.
        let big_set: std::collections::HashSet<&String> = big.prediction_vocab().collect();
        for w in plain.prediction_vocab() {
            assert!(big_set.contains(w));
        }
    }

    #[test]
    fn normalization_over_random_contexts() {
        let corpus = sents(&[
            "the cat sat",
            "the dog sat",
            "the cat ran",
            "a dog ran away",
            "the bird flew away",
            "a cat and a dog",
            "the dog and the bird",
        ]);
        let model = lm_train(&corpus, 3, Discounting::ModifiedKn).unwrap();
        let vocab: Vec<String> = model.prediction_vocab().cloned().collect();
        let mut rng = crate::rng::Rng::new(5);
        let mut words: Vec<String> = vocab.clone();
        words.push(BOS.to_string());
        words.push("zzz".to_string());
        for _ in 0..300 {
            let ctx_len = rng.gen_range(3);
            let ctx: Vec<String> = (0..ctx_len)
                .map(|_| words[rng.gen_range(words.len())].clone())
                .collect();
            let total: f64 = vocab
                .iter()
                .map(|w| 10f64.powf(model.cond_log10(&ctx, w)))
                .sum();
            assert!((total - 1.0).abs() < 1e-6, "ctx {ctx:?}: sum {total}");
        }
    }

    #[test]
    fn degenerate_counts_warn_and_still_normalize() {
        // Two sentences cannot populate count-of-counts 1..4.
        let corpus = sents(&["a b", "a c"]);
        let model = lm_train(&corpus, 2, Discounting::ModifiedKn).unwrap();
        assert!(!model.warnings().is_empty());
        let vocab: Vec<String> = model.prediction_vocab().cloned().collect();
        for ctx in [vec![], vec!["a".to_string()], vec!["b".to_string()]] {
            let total: f64 = vocab
                .iter()
                .map(|w| 10f64.powf(model.cond_log10(&ctx, w)))
                .sum();
            assert!((total - 1.0).abs() < 1e-9, "ctx {ctx:?}: sum {total}");
        }
    }

    #[test]
    fn uniform_unigram_perplexity_is_vocab_size() {
        // A hand-built uniform unigram model over 5 symbols gives
        // perplexity exactly 5 on text drawn from them.
        let p = (1.0f64 / 5.0).log10();
        let arpa = format!(
            "\\data\\\nngram 1=5\n\n\\1-grams:\n{p:.10}\ta\n{p:.10}\tb\n{p:.10}\tc\n{p:.10}\t{UNK}\n{p:.10}\t{EOS}\n\n\\end\\\n"
        );
        let model = NGramModel::from_arpa_string(&arpa).unwrap();
        let corpus = sents(&["a b c", "b", "c a"]);
        let pp = model.perplexity(&corpus);
        assert!((pp - 5.0).abs() < 1e-9, "pp={pp}");
    }

    #[test]
    fn arpa_round_trip_preserves_scores() {
        let corpus = sents(&[
            "the cat sat on the mat",
            "the dog sat",
            "a cat ran",
            "the mat was flat",
            "a dog and a cat",
        ]);
        let model = lm_train(&corpus, 3, Discounting::ModifiedKn).unwrap();
        let text = model.to_arpa_string();
        let imported = NGramModel::from_arpa_string(&text).unwrap();
        let mut rng = crate::rng::Rng::new(9);
        let vocab: Vec<String> = model.prediction_vocab().cloned().collect();
        for _ in 0..100 {
            let len = rng.gen_range(8);
            let sentence: Vec<String> = (0..len)
                .map(|_| vocab[rng.gen_range(vocab.len())].clone())
                .collect();
            let a = model.score(&sentence);
            let b = imported.score(&sentence);
            assert!((a - b).abs() < 1e-4, "{sentence:?}: {a} vs {b}");
        }
    }

    #[test]
    fn zero_count_order_round_trips() {
        // Order-4 model over one-word sentences has no 4-grams at all;
        // the empty block still exports and imports cleanly.
        let corpus = sents(&["a", "b", "a"]);
        let model = lm_train(&corpus, 4, Discounting::ModifiedKn).unwrap();
        assert_eq!(model.n_grams(4), 0);
        let text = model.to_arpa_string();
        assert!(text.contains("ngram 4=0"));
        let back = NGramModel::from_arpa_string(&text).unwrap();
        for sentence in &corpus {
            assert!((model.score(sentence) - back.score(sentence)).abs() < 1e-4);
        }
    }

    #[test]
    fn malformed_arpa_reports_line() {
        let bad = "\\data\\\nngram 1=2\n\n\\1-grams:\n-0.5\n\\end\\\n";
        match NGramModel::from_arpa_string(bad) {
            Err(LmError::MalformedArpa { line: 5, .. }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn train_perplexity_not_above_heldout() {
        let mut rng = crate::rng::Rng::new(31);
        let vocab = ["a", "b", "c", "d", "e", "f", "g"];
        for seed in 0..10u64 {
            let mut gen = crate::rng::Rng::new(seed * 7 + 1);
            let make = |rng: &mut crate::rng::Rng, n: usize| -> Vec<Vec<String>> {
                (0..n)
                    .map(|_| {
                        (0..(1 + rng.gen_range(6)))
                            .map(|_| vocab[rng.gen_range(vocab.len())].to_string())
                            .collect()
                    })
                    .collect()
            };
            let train = make(&mut gen, 40);
            let heldout = make(&mut rng, 40);
            let model = lm_train(&train, 3, Discounting::ModifiedKn).unwrap();
            let pp_train = model.perplexity(&train);
            let pp_held = model.perplexity(&heldout);
            assert!(
                pp_train <= pp_held + 1e-9,
                "seed {seed}: train {pp_train} vs heldout {pp_held}"
            );
        }
    }
}
