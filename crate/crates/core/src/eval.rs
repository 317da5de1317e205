//! Corpus BLEU with the `BLEU+c.mixed+#.1+s.exp+tok.13a` signature,
//! paired bootstrap confidence intervals, and blind pairwise
//! human-comparison sheets.
//!
//! Scoring is case-sensitive, single-reference, uses the WMT "13a"
//! tokenization internally, and smooths zero higher-order matches with
//! the exponential scheme. A corpus with no unigram matches at all
//! scores 0 (the unigram precision is never smoothed).

use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::rng::{Rng, SplitMix64};

pub const BLEU_SIGNATURE: &str = "BLEU+c.mixed+#.1+s.exp+tok.13a";
const MAX_ORDER: usize = 4;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sentence count mismatch: {hyps} hypotheses vs {refs} references")]
    CountMismatch { hyps: usize, refs: usize },
    #[error("judgment count mismatch: {judgments} judgments vs {items} sheet items")]
    JudgmentCountMismatch { judgments: usize, items: usize },
    #[error("sample size {n} exceeds corpus size {len}")]
    SampleTooLarge { n: usize, len: usize },
}

/// The "13a" scheme of the WMT evaluation scripts: unescape XML
/// entities, pad ASCII punctuation with spaces, split periods and commas
/// unless digit-bound, split dashes after digits, collapse whitespace.
pub fn bleu_tokenize_13a(text: &str) -> Vec<String> {
    let mut line = text.replace("<skipped>", "");
    line = line.replace("-\n", "").replace('\n', " ");
    if line.contains('&') {
        line = line
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    let padded = format!(" {line} ");

    // Pad the mteval punctuation ranges with spaces.
    let is_punct = |c: char| {
        matches!(c,
            '\u{20}'..='\u{26}' | '\u{28}'..='\u{2B}' | '\u{3A}'..='\u{40}'
            | '\u{5B}'..='\u{60}' | '\u{7B}'..='\u{7E}' | '/')
    };
    let mut pass1 = String::with_capacity(padded.len() * 2);
    for c in padded.chars() {
        if is_punct(c) {
            pass1.push(' ');
            pass1.push(c);
            pass1.push(' ');
        } else {
            pass1.push(c);
        }
    }

    // Period/comma not preceded by a digit: "x." -> "x . "
    let chars: Vec<char> = pass1.chars().collect();
    let mut pass2 = String::with_capacity(pass1.len() * 2);
    let mut i = 0;
    while i < chars.len() {
        if i + 1 < chars.len()
            && !chars[i].is_ascii_digit()
            && (chars[i + 1] == '.' || chars[i + 1] == ',')
        {
            pass2.push(chars[i]);
            pass2.push(' ');
            pass2.push(chars[i + 1]);
            pass2.push(' ');
            i += 2;
        } else {
            pass2.push(chars[i]);
            i += 1;
        }
    }

    // Period/comma not followed by a digit: ".x" -> " . x"
    let chars: Vec<char> = pass2.chars().collect();
    let mut pass3 = String::with_capacity(pass2.len() * 2);
    let mut i = 0;
    while i < chars.len() {
        if i + 1 < chars.len()
            && (chars[i] == '.' || chars[i] == ',')
            && !chars[i + 1].is_ascii_digit()
        {
            pass3.push(' ');
            pass3.push(chars[i]);
            pass3.push(' ');
            pass3.push(chars[i + 1]);
            i += 2;
        } else {
            pass3.push(chars[i]);
            i += 1;
        }
    }

    // Dash preceded by a digit: "1-" -> "1 - "
    let chars: Vec<char> = pass3.chars().collect();
    let mut pass4 = String::with_capacity(pass3.len() * 2);
    let mut i = 0;
    while i < chars.len() {
        if i + 1 < chars.len() && chars[i].is_ascii_digit() && chars[i + 1] == '-' {
            pass4.push(chars[i]);
            pass4.push(' ');
            pass4.push('-');
            pass4.push(' ');
            i += 2;
        } else {
            pass4.push(chars[i]);
            i += 1;
        }
    }

    pass4.split_whitespace().map(str::to_string).collect()
}

/// Per-sentence sufficient statistics; corpus BLEU is additive over them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SentenceStats {
    pub correct: [u64; MAX_ORDER],
    pub total: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl SentenceStats {
    pub fn add(&mut self, other: &SentenceStats) {
        for n in 0..MAX_ORDER {
            self.correct[n] += other.correct[n];
            self.total[n] += other.total[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    pub fn sub(&mut self, other: &SentenceStats) {
        for n in 0..MAX_ORDER {
            self.correct[n] -= other.correct[n];
            self.total[n] -= other.total[n];
        }
        self.hyp_len -= other.hyp_len;
        self.ref_len -= other.ref_len;
    }
}

/// Clipped n-gram match statistics for one tokenized hypothesis/reference pair.
pub fn sentence_stats(hyp: &[String], reference: &[String]) -> SentenceStats {
    use std::collections::HashMap;
    let mut stats = SentenceStats {
        hyp_len: hyp.len() as u64,
        ref_len: reference.len() as u64,
        ..SentenceStats::default()
    };
    for n in 1..=MAX_ORDER {
        if hyp.len() < n {
            break;
        }
        let mut ref_counts: HashMap<&[String], u64> = HashMap::new();
        if reference.len() >= n {
            for gram in reference.windows(n) {
                *ref_counts.entry(gram).or_insert(0) += 1;
            }
        }
        let mut hyp_counts: HashMap<&[String], u64> = HashMap::new();
        for gram in hyp.windows(n) {
            *hyp_counts.entry(gram).or_insert(0) += 1;
        }
        let total = (hyp.len() - n + 1) as u64;
        let mut correct = 0;
        for (gram, count) in hyp_counts {
            if let Some(&rc) = ref_counts.get(gram) {
                correct += count.min(rc);
            }
        }
        stats.correct[n - 1] = correct;
        stats.total[n - 1] = total;
    }
    stats
}

/// Smoothing scheme for zero higher-order matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothing {
    /// 1/(2^k * total) for the k-th zero-match order above unigrams.
    Exp,
}

/// Corpus BLEU report: score, n-gram precisions, brevity penalty,
/// lengths, and the scorer signature.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// 0-100 scale.
    pub bleu: f64,
    /// Percent precisions p1..p4.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
    pub signature: String,
    /// Set when the corpus had no unigram matches; the score is then 0.
    pub zero_unigram_matches: bool,
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ratio = if self.ref_len == 0 {
            0.0
        } else {
            self.hyp_len as f64 / self.ref_len as f64
        };
        write!(
            f,
            "BLEU = {:.2} {:.1}/{:.1}/{:.1}/{:.1} (BP = {:.3} ratio = {:.3} hyp_len = {} ref_len = {}) sig={}",
            self.bleu,
            self.precisions[0],
            self.precisions[1],
            self.precisions[2],
            self.precisions[3],
            self.brevity_penalty,
            ratio,
            self.hyp_len,
            self.ref_len,
            self.signature
        )
    }
}

/// Combine summed sentence statistics into a corpus score.
pub fn bleu_from_stats(total: &SentenceStats, _smoothing: Smoothing) -> BleuReport {
    let mut precisions = [0.0f64; MAX_ORDER];
    let mut smooth = 1.0f64;
    let mut zero_unigram = false;
    let mut any_order_empty = false;
    for n in 0..MAX_ORDER {
        if total.total[n] == 0 {
            any_order_empty = true;
            break;
        }
        if total.correct[n] == 0 {
            if n == 0 {
                // Unigram precision is never smoothed.
                zero_unigram = true;
            } else {
                smooth *= 2.0;
                precisions[n] = 100.0 / (smooth * total.total[n] as f64);
            }
        } else {
            precisions[n] = 100.0 * total.correct[n] as f64 / total.total[n] as f64;
        }
    }

    let brevity_penalty = if total.hyp_len == 0 {
        0.0
    } else if total.hyp_len < total.ref_len {
        (1.0 - total.ref_len as f64 / total.hyp_len as f64).exp()
    } else {
        1.0
    };

    let bleu = if zero_unigram || any_order_empty || precisions.contains(&0.0) {
        0.0
    } else {
        let log_sum: f64 = precisions.iter().map(|p| (p / 100.0).ln()).sum();
        brevity_penalty * (log_sum / MAX_ORDER as f64).exp() * 100.0
    };

    BleuReport {
        bleu,
        precisions,
        brevity_penalty,
        hyp_len: total.hyp_len,
        ref_len: total.ref_len,
        signature: BLEU_SIGNATURE.to_string(),
        zero_unigram_matches: zero_unigram,
    }
}

/// Corpus BLEU over pre-tokenized sentences (used by MERT, which scores
/// in token space).
pub fn bleu_from_tokens(
    hyps: &[Vec<String>],
    refs: &[Vec<String>],
    smoothing: Smoothing,
) -> Result<BleuReport, EvalError> {
    if hyps.len() != refs.len() {
        return Err(EvalError::CountMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    let mut total = SentenceStats::default();
    for (hyp, reference) in hyps.iter().zip(refs) {
        total.add(&sentence_stats(hyp, reference));
    }
    Ok(bleu_from_stats(&total, smoothing))
}

/// Detokenized, case-sensitive, single-reference corpus BLEU.
pub fn bleu(
    hyps: &[String],
    refs: &[String],
    smoothing: Smoothing,
) -> Result<BleuReport, EvalError> {
    if hyps.len() != refs.len() {
        return Err(EvalError::CountMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    let hyp_tokens: Vec<Vec<String>> = hyps.iter().map(|h| bleu_tokenize_13a(h)).collect();
    let ref_tokens: Vec<Vec<String>> = refs.iter().map(|r| bleu_tokenize_13a(r)).collect();
    bleu_from_tokens(&hyp_tokens, &ref_tokens, smoothing)
}

/// Point estimate plus an empirical bootstrap interval.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapInterval {
    pub bleu: f64,
    pub lower: f64,
    pub upper: f64,
    pub n_resamples: usize,
    pub level: f64,
}

impl BootstrapInterval {
    /// Symmetric presentation: the larger of the two half-widths.
    pub fn half_width(&self) -> f64 {
        (self.bleu - self.lower).max(self.upper - self.bleu)
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

/// Resample sentences with replacement and score each resample; the
/// interval is the empirical (alpha/2, 1-alpha/2) quantile pair, widened
/// if needed so that it contains the point estimate.
pub fn paired_bootstrap_ci(
    hyps: &[String],
    refs: &[String],
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapInterval, EvalError> {
    if hyps.len() != refs.len() {
        return Err(EvalError::CountMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    let per_sentence: Vec<SentenceStats> = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| sentence_stats(&bleu_tokenize_13a(h), &bleu_tokenize_13a(r)))
        .collect();
    let mut total = SentenceStats::default();
    for s in &per_sentence {
        total.add(s);
    }
    let point = bleu_from_stats(&total, Smoothing::Exp).bleu;

    // One derived stream per resample, merged in resample-index order.
    let mut master = SplitMix64::new(seed);
    let stream_seeds: Vec<u64> = (0..n_resamples).map(|_| master.next_u64()).collect();
    let mut scores: Vec<f64> = stream_seeds
        .par_iter()
        .map(|&s| {
            let mut rng = Rng::new(s);
            let mut resample = SentenceStats::default();
            for _ in 0..per_sentence.len() {
                resample.add(&per_sentence[rng.gen_range(per_sentence.len())]);
            }
            bleu_from_stats(&resample, Smoothing::Exp).bleu
        })
        .collect();
    scores.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let alpha = 1.0 - level;
    let lower = quantile(&scores, alpha / 2.0).min(point);
    let upper = quantile(&scores, 1.0 - alpha / 2.0).max(point);
    Ok(BootstrapInterval {
        bleu: point,
        lower,
        upper,
        n_resamples,
        level,
    })
}

/// One item of a blind pairwise comparison sheet. Which system sits in
/// slot A is a seeded coin flip, recorded only in the key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SheetItem {
    pub id: usize,
    pub source: String,
    pub reference: String,
    pub slot_a: String,
    pub slot_b: String,
    pub a_is_system1: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonSheet {
    pub items: Vec<SheetItem>,
    pub seed: u64,
}

impl ComparisonSheet {
    /// Judge-facing text: `#id / SRC: / REF: / A: / B:` blocks. Never
    /// mentions which system produced which slot.
    pub fn render_judge_file(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&format!(
                "#{}\nSRC: {}\nREF: {}\nA: {}\nB: {}\n\n",
                item.id, item.source, item.reference, item.slot_a, item.slot_b
            ));
        }
        out
    }

    /// Key TSV: `id<TAB>A_is_system1` with 1/0 flags.
    pub fn render_key_file(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&format!(
                "{}\t{}\n",
                item.id,
                if item.a_is_system1 { 1 } else { 0 }
            ));
        }
        out
    }

    pub fn key(&self) -> Vec<(usize, bool)> {
        self.items.iter().map(|i| (i.id, i.a_is_system1)).collect()
    }
}

/// Build a blind sheet of `n` items sampled without replacement.
pub fn humaneval_sheet(
    system1: &[String],
    system2: &[String],
    sources: &[String],
    refs: &[String],
    n: usize,
    seed: u64,
) -> Result<ComparisonSheet, EvalError> {
    let len = system1.len();
    for other in [system2.len(), sources.len(), refs.len()] {
        if other != len {
            return Err(EvalError::CountMismatch {
                hyps: len,
                refs: other,
            });
        }
    }
    if n > len {
        return Err(EvalError::SampleTooLarge { n, len });
    }
    let mut rng = Rng::new(seed);
    let sample = rng.sample_indices(len, n);
    let items = sample
        .into_iter()
        .map(|idx| {
            let a_is_system1 = rng.next_u64() & 1 == 0;
            let (slot_a, slot_b) = if a_is_system1 {
                (system1[idx].clone(), system2[idx].clone())
            } else {
                (system2[idx].clone(), system1[idx].clone())
            };
            SheetItem {
                id: idx,
                source: sources[idx].clone(),
                reference: refs[idx].clone(),
                slot_a,
                slot_b,
                a_is_system1,
            }
        })
        .collect();
    Ok(ComparisonSheet { items, seed })
}

/// A judge's verdict for one item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Judgment {
    A,
    B,
}

impl Judgment {
    pub fn parse(s: &str) -> Option<Judgment> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Some(Judgment::A),
            "B" => Some(Judgment::B),
            _ => None,
        }
    }
}

/// Decode judgments through the hidden key: returns (system1 wins,
/// system2 wins).
pub fn humaneval_tally(
    key: &[(usize, bool)],
    judgments: &[Judgment],
) -> Result<(usize, usize), EvalError> {
    if key.len() != judgments.len() {
        return Err(EvalError::JudgmentCountMismatch {
            judgments: judgments.len(),
            items: key.len(),
        });
    }
    let mut wins1 = 0;
    let mut wins2 = 0;
    for (&(_, a_is_system1), &judgment) in key.iter().zip(judgments) {
        let system1_won = match judgment {
            Judgment::A => a_is_system1,
            Judgment::B => !a_is_system1,
        };
        if system1_won {
            wins1 += 1;
        } else {
            wins2 += 1;
        }
    }
    Ok((wins1, wins2))
}
