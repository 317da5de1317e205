//! Minimum error rate training: exact corpus-BLEU line search over
//! pooled n-best lists, along coordinate axes plus seeded random
//! directions, wrapped in a decode-and-pool outer loop.

use rayon::prelude::*;

use super::{decode, DecoderConfig, FeatureWeights, PhraseTable, SmtError, N_FEATURES};
use crate::eval::{bleu_from_stats, sentence_stats, SentenceStats, Smoothing};
use crate::ngram_lm::NGramModel;
use crate::rng::Rng;

/// One pooled hypothesis with its precomputed BLEU sufficient statistics.
#[derive(Debug, Clone)]
pub struct PoolEntry {
    pub tokens: Vec<String>,
    pub features: Vec<f64>,
    pub stats: SentenceStats,
}

/// Accumulated n-best lists, one bucket per development sentence.
#[derive(Debug, Clone, Default)]
pub struct NBestPool {
    sentences: Vec<Vec<PoolEntry>>,
}

impl NBestPool {
    pub fn new(n_sentences: usize) -> NBestPool {
        NBestPool {
            sentences: vec![Vec::new(); n_sentences],
        }
    }

    pub fn n_sentences(&self) -> usize {
        self.sentences.len()
    }

    pub fn len(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self, sentence: usize) -> &[PoolEntry] {
        &self.sentences[sentence]
    }

    /// Add a hypothesis; duplicates (same tokens and features) are
    /// dropped. Returns whether the pool grew.
    pub fn add(
        &mut self,
        sentence: usize,
        tokens: Vec<String>,
        features: Vec<f64>,
        reference: &[String],
    ) -> bool {
        let bucket = &mut self.sentences[sentence];
        if bucket
            .iter()
            .any(|e| e.tokens == tokens && e.features == features)
        {
            return false;
        }
        let stats = sentence_stats(&tokens, reference);
        bucket.push(PoolEntry {
            tokens,
            features,
            stats,
        });
        true
    }

    /// Corpus BLEU of the per-sentence argmax hypotheses under `weights`.
    /// Sentences with empty buckets contribute nothing.
    pub fn corpus_bleu(&self, weights: &[f64]) -> f64 {
        let mut total = SentenceStats::default();
        for bucket in &self.sentences {
            if let Some(best) = bucket.iter().max_by(|a, b| {
                dot(weights, &a.features)
                    .partial_cmp(&dot(weights, &b.features))
                    .unwrap()
            }) {
                total.add(&best.stats);
            }
        }
        bleu_from_stats(&total, Smoothing::Exp).bleu
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Upper envelope of lines y = a + b*gamma. Returns segments as
/// (switch point, entry index); the first segment starts at -inf.
fn envelope(lines: &[(f64, f64, usize)]) -> Vec<(f64, usize)> {
    let mut sorted: Vec<(f64, f64, usize)> = lines.to_vec();
    // Sort by slope, then intercept; for equal slopes only the highest
    // intercept can ever win.
    sorted.sort_by(|x, y| {
        x.1.partial_cmp(&y.1)
            .unwrap()
            .then(x.0.partial_cmp(&y.0).unwrap())
    });
    let mut dedup: Vec<(f64, f64, usize)> = Vec::with_capacity(sorted.len());
    for line in sorted {
        match dedup.last() {
            Some(last) if (last.1 - line.1).abs() == 0.0 => {
                *dedup.last_mut().unwrap() = line;
            }
            _ => dedup.push(line),
        }
    }
    let mut stack: Vec<(f64, (f64, f64, usize))> = Vec::new();
    for line in dedup {
        loop {
            match stack.last() {
                None => {
                    stack.push((f64::NEG_INFINITY, line));
                    break;
                }
                Some(&(x_top, top)) => {
                    // Intersection with the current top line.
                    let x = (top.0 - line.0) / (line.1 - top.1);
                    if x <= x_top {
                        stack.pop();
                    } else {
                        stack.push((x, line));
                        break;
                    }
                }
            }
        }
    }
    stack.into_iter().map(|(x, line)| (x, line.2)).collect()
}

/// Exact line search along `direction`: the best gamma by corpus BLEU
/// over the piecewise-constant error surface, with the interval
/// containing zero represented by gamma = 0 so that ties keep the
/// current weights.
fn line_search(pool: &NBestPool, weights: &[f64], direction: &[f64]) -> (f64, f64) {
    // Per sentence: envelope segments and their stats.
    struct SentenceSweep {
        segments: Vec<(f64, usize)>,
        active: usize,
    }
    let mut sweeps: Vec<SentenceSweep> = Vec::new();
    let mut events: Vec<(f64, usize, usize)> = Vec::new(); // (gamma, sentence, segment idx)
    for bucket in pool.sentences.iter() {
        if bucket.is_empty() {
            continue;
        }
        let lines: Vec<(f64, f64, usize)> = bucket
            .iter()
            .enumerate()
            .map(|(i, e)| (dot(weights, &e.features), dot(direction, &e.features), i))
            .collect();
        let segments = envelope(&lines);
        let sweep_idx = sweeps.len();
        for (k, &(x, _)) in segments.iter().enumerate().skip(1) {
            events.push((x, sweep_idx, k));
        }
        sweeps.push(SentenceSweep {
            segments,
            active: 0,
        });
    }
    events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // Map from sweep index back to its sentence bucket.
    let bucket_of: Vec<usize> = pool
        .sentences
        .iter()
        .enumerate()
        .filter(|(_, b)| !b.is_empty())
        .map(|(i, _)| i)
        .collect();

    let mut total = SentenceStats::default();
    for (sweep_idx, sweep) in sweeps.iter().enumerate() {
        let bucket = &pool.sentences[bucket_of[sweep_idx]];
        total.add(&bucket[sweep.segments[0].1].stats);
    }

    // Evaluate every interval; candidate gamma is the midpoint, except
    // the interval containing zero, which is represented by zero.
    let candidate = |lo: f64, hi: f64| -> f64 {
        if lo < 0.0 && hi >= 0.0 {
            0.0
        } else if lo == f64::NEG_INFINITY {
            hi - 1.0
        } else if hi == f64::INFINITY {
            lo + 1.0
        } else {
            0.5 * (lo + hi)
        }
    };

    let mut best_gamma = 0.0;
    let mut best_bleu = f64::NEG_INFINITY;
    let consider = |bleu: f64, gamma: f64, best_bleu: &mut f64, best_gamma: &mut f64| {
        let better = bleu > *best_bleu + 1e-12
            || ((bleu - *best_bleu).abs() <= 1e-12 && gamma.abs() < best_gamma.abs());
        if better {
            *best_bleu = bleu;
            *best_gamma = gamma;
        }
    };

    let mut lo = f64::NEG_INFINITY;
    for &(gamma, sweep_idx, segment) in &events {
        // Zero-width intervals from coincident events are not candidates.
        if gamma > lo {
            let bleu = bleu_from_stats(&total, Smoothing::Exp).bleu;
            consider(bleu, candidate(lo, gamma), &mut best_bleu, &mut best_gamma);
        }
        let sweep = &mut sweeps[sweep_idx];
        let bucket = &pool.sentences[bucket_of[sweep_idx]];
        let old = sweep.segments[sweep.active].1;
        let new = sweep.segments[segment].1;
        total.sub(&bucket[old].stats);
        total.add(&bucket[new].stats);
        sweep.active = segment;
        lo = gamma;
    }
    let bleu = bleu_from_stats(&total, Smoothing::Exp).bleu;
    consider(
        bleu,
        candidate(lo, f64::INFINITY),
        &mut best_bleu,
        &mut best_gamma,
    );

    (best_gamma, best_bleu)
}

/// Optimize weights over a fixed pool: repeated passes over coordinate
/// axes plus seeded random directions, taking the single best move per
/// pass, until no direction improves corpus BLEU.
pub fn mert_line_search(
    pool: &NBestPool,
    init: &[f64],
    n_random_directions: usize,
    seed: u64,
    max_passes: usize,
) -> (Vec<f64>, f64) {
    let dim = init.len();
    let mut weights = init.to_vec();
    if pool.is_empty() {
        return (weights, 0.0);
    }
    let mut rng = Rng::new(seed);
    let mut current = pool.corpus_bleu(&weights);
    for _ in 0..max_passes {
        let mut directions: Vec<Vec<f64>> = Vec::with_capacity(dim + n_random_directions);
        for i in 0..dim {
            let mut d = vec![0.0; dim];
            d[i] = 1.0;
            directions.push(d);
        }
        for _ in 0..n_random_directions {
            let mut d: Vec<f64> = (0..dim).map(|_| rng.gen_normal()).collect();
            let norm: f64 = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                d.iter_mut().for_each(|x| *x /= norm);
            }
            directions.push(d);
        }
        let mut best: Option<(f64, f64, usize)> = None; // (bleu, gamma, dir idx)
        for (i, d) in directions.iter().enumerate() {
            let (gamma, bleu) = line_search(pool, &weights, d);
            let replace = match best {
                None => true,
                Some((b, g, _)) => {
                    bleu > b + 1e-12 || ((bleu - b).abs() <= 1e-12 && gamma.abs() < g.abs())
                }
            };
            if replace {
                best = Some((bleu, gamma, i));
            }
        }
        match best {
            Some((bleu, gamma, dir)) if bleu > current + 1e-9 && gamma != 0.0 => {
                for (w, d) in weights.iter_mut().zip(&directions[dir]) {
                    *w += gamma * d;
                }
                current = bleu;
            }
            _ => break,
        }
    }
    (weights, current)
}

#[derive(Debug, Clone)]
pub struct MertConfig {
    pub n_best_size: usize,
    pub max_outer_iters: usize,
    pub n_random_directions: usize,
    /// Stop when an outer iteration improves pooled corpus BLEU by less
    /// than this many BLEU points.
    pub min_gain: f64,
    pub max_line_search_passes: usize,
    pub seed: u64,
    pub decoder: DecoderConfig,
}

impl Default for MertConfig {
    fn default() -> Self {
        MertConfig {
            n_best_size: 100,
            max_outer_iters: 10,
            n_random_directions: 10,
            min_gain: 0.01,
            max_line_search_passes: 30,
            seed: 1,
            decoder: DecoderConfig::default(),
        }
    }
}

/// Full MERT: decode n-best lists with the current weights, merge them
/// into the pool, optimize by line search, and repeat until the pool
/// stops growing or the gain falls under the threshold.
pub fn mert(
    dev: &[(Vec<String>, Vec<String>)],
    table: &PhraseTable,
    lm: &NGramModel,
    init: &FeatureWeights,
    config: &MertConfig,
) -> Result<(FeatureWeights, f64), SmtError> {
    if dev.is_empty() {
        return Ok((init.clone(), 0.0));
    }
    let mut weights = init.clone();
    let mut pool = NBestPool::new(dev.len());
    let mut previous_bleu = f64::NEG_INFINITY;
    let decoder_config = DecoderConfig {
        n_best: config.n_best_size,
        ..config.decoder.clone()
    };
    for outer in 0..config.max_outer_iters {
        let outputs: Vec<_> = dev
            .par_iter()
            .map(|(src, _)| decode(src, table, lm, &weights, &decoder_config))
            .collect::<Result<_, _>>()?;
        let mut grew = false;
        for (s, output) in outputs.into_iter().enumerate() {
            for entry in output.n_best {
                grew |= pool.add(s, entry.tokens, entry.features.to_vec(), &dev[s].1);
            }
        }
        if !grew && outer > 0 {
            break;
        }
        let (tuned, bleu) = mert_line_search(
            &pool,
            &weights.values,
            config.n_random_directions,
            config.seed.wrapping_add(outer as u64),
            config.max_line_search_passes,
        );
        let mut values = [0.0; N_FEATURES];
        values.copy_from_slice(&tuned);
        weights = FeatureWeights { values };
        if bleu - previous_bleu < config.min_gain {
            previous_bleu = bleu;
            break;
        }
        previous_bleu = bleu;
    }
    Ok((weights, previous_bleu.max(0.0)))
}
