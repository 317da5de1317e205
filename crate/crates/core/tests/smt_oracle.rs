//! Search-optimality checks for the phrase-based decoder and MERT.
//!
//! The decoder is compared against an exhaustive enumerator over all
//! segmentations and orderings (same option set, same reachability
//! rule); MERT's line search is compared against a dense grid search
//! over a two-dimensional weight space.

use lrmt::eval::{bleu_from_stats, sentence_stats, SentenceStats, Smoothing};
use lrmt::ngram_lm::{lm_train, Discounting, NGramModel, EOS};
use lrmt::rng::Rng;
use lrmt::smt::{
    decode, mert_line_search, DecoderConfig, FeatureWeights, NBestPool, PhraseOption, PhraseTable,
};

const LN10: f64 = std::f64::consts::LN_10;

fn toks(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Exhaustive best-derivation search. Enumerates every sequence of
/// option applications that covers the sentence, under the decoder's
/// reachability rule (jump within the limit, or a jump to the leftmost
/// uncovered word), scoring from scratch at every step.
type SpanOption = (usize, usize, Vec<String>, [f64; 5], bool);

struct Exhaustive<'a> {
    src: Vec<String>,
    options: Vec<SpanOption>,
    lm: &'a NGramModel,
    weights: &'a FeatureWeights,
    distortion_limit: usize,
    best: f64,
}

impl<'a> Exhaustive<'a> {
    fn new(
        src: &[String],
        table: &PhraseTable,
        lm: &'a NGramModel,
        weights: &'a FeatureWeights,
        distortion_limit: usize,
    ) -> Self {
        let mut options = Vec::new();
        let n = src.len();
        for start in 0..n {
            for end in start + 1..=n.min(start + table.max_phrase_len()) {
                for option in table.options(&src[start..end]) {
                    let logs = [
                        option.features[0].ln(),
                        option.features[1].ln(),
                        option.features[2].ln(),
                        option.features[3].ln(),
                        option.features[4].ln(),
                    ];
                    options.push((start, end, option.tgt.clone(), logs, false));
                }
            }
            if table.options(&src[start..start + 1]).is_empty() {
                options.push((
                    start,
                    start + 1,
                    vec![src[start].clone()],
                    [0.0, 0.0, 0.0, 0.0, 1.0],
                    true,
                ));
            }
        }
        Exhaustive {
            src: src.to_vec(),
            options,
            lm,
            weights,
            distortion_limit,
            best: f64::NEG_INFINITY,
        }
    }

    fn search(&mut self) -> f64 {
        self.best = f64::NEG_INFINITY;
        let n = self.src.len();
        self.recurse(vec![false; n], 0, &mut Vec::new(), [0.0; 9]);
        self.best
    }

    fn recurse(
        &mut self,
        covered: Vec<bool>,
        last_end: usize,
        target: &mut Vec<String>,
        features: [f64; 9],
    ) {
        if covered.iter().all(|&c| c) {
            let mut f = features;
            let mut context = vec!["<s>".to_string()];
            context.extend(target.iter().cloned());
            f[5] += LN10 * self.lm.cond_log10(&context, EOS);
            self.best = self.best.max(self.weights.dot(&f));
            return;
        }
        let leftmost = covered.iter().position(|&c| !c).unwrap();
        for idx in 0..self.options.len() {
            let (start, end, tgt, logs, oov) = self.options[idx].clone();
            if covered[start..end].iter().any(|&c| c) {
                continue;
            }
            let jump = (start as isize - last_end as isize).unsigned_abs();
            if jump > self.distortion_limit && start != leftmost {
                continue;
            }
            let mut f = features;
            for k in 0..5 {
                f[k] += logs[k];
            }
            for (t, word) in tgt.iter().enumerate() {
                let mut context = vec!["<s>".to_string()];
                context.extend(target.iter().cloned());
                context.extend(tgt[..t].iter().cloned());
                f[5] += LN10 * self.lm.cond_log10(&context, word);
            }
            f[6] += tgt.len() as f64;
            f[7] -= jump as f64;
            if oov {
                f[8] += 1.0;
            }
            let mut next = covered.clone();
            next[start..end].iter_mut().for_each(|c| *c = true);
            let before = target.len();
            target.extend(tgt.iter().cloned());
            self.recurse(next, end, target, f);
            target.truncate(before);
        }
    }
}

fn random_table(rng: &mut Rng, src_vocab: &[&str], tgt_vocab: &[&str]) -> PhraseTable {
    let mut table = PhraseTable::new(3);
    let add = |table: &mut PhraseTable, rng: &mut Rng, src: Vec<String>| {
        let n_options = 1 + rng.gen_range(2);
        for _ in 0..n_options {
            let tgt_len = 1 + rng.gen_range(2);
            let tgt: Vec<String> = (0..tgt_len)
                .map(|_| tgt_vocab[rng.gen_range(tgt_vocab.len())].to_string())
                .collect();
            let features = [
                rng.gen_uniform(0.05, 1.0),
                rng.gen_uniform(0.05, 1.0),
                rng.gen_uniform(0.05, 1.0),
                rng.gen_uniform(0.05, 1.0),
                std::f64::consts::E,
            ];
            table.insert(
                src.clone(),
                PhraseOption {
                    tgt,
                    features,
                    alignment: vec![],
                },
            );
        }
    };
    for word in src_vocab {
        if rng.gen_f64() < 0.85 {
            add(&mut table, rng, vec![word.to_string()]);
        }
    }
    for a in src_vocab {
        for b in src_vocab {
            if rng.gen_f64() < 0.25 {
                add(&mut table, rng, vec![a.to_string(), b.to_string()]);
            }
        }
    }
    table
}

fn test_lm() -> NGramModel {
    let corpus: Vec<Vec<String>> = [
        "t1 t2 t3",
        "t2 t4 t1",
        "t3 t3 t2 t1",
        "t4 t1",
        "t1 t2",
        "t2 t3 t4 t4",
    ]
    .iter()
    .map(|s| s.split_whitespace().map(str::to_string).collect())
    .collect();
    lm_train(&corpus, 3, Discounting::ModifiedKn).unwrap()
}

#[test]
fn decoder_matches_exhaustive_oracle_on_200_sentences() {
    let mut rng = Rng::new(4242);
    let src_vocab = ["s1", "s2", "s3", "s4", "s5", "s6"];
    let tgt_vocab = ["t1", "t2", "t3", "t4"];
    let lm = test_lm();
    let mut weights = FeatureWeights::default();
    weights.values[8] = -2.0;

    let exact = DecoderConfig {
        distortion_limit: 3,
        stack_size: 100_000,
        beam_log: f64::INFINITY,
        n_best: 0,
        recombine: true,
    };
    for case in 0..200 {
        let table = random_table(&mut rng, &src_vocab, &tgt_vocab);
        let len = 1 + rng.gen_range(5);
        let src: Vec<String> = (0..len)
            .map(|_| src_vocab[rng.gen_range(src_vocab.len())].to_string())
            .collect();
        let out = decode(&src, &table, &lm, &weights, &exact).unwrap();
        let mut oracle = Exhaustive::new(&src, &table, &lm, &weights, 3);
        let best = oracle.search();
        assert!(
            (out.score - best).abs() < 1e-9,
            "case {case}: decoder {} vs oracle {} on {src:?}",
            out.score,
            best
        );
        // The reported feature vector reproduces the score.
        assert!((weights.dot(&out.features) - out.score).abs() < 1e-9);
    }
}

#[test]
fn recombination_preserves_the_optimum() {
    let mut rng = Rng::new(515);
    let src_vocab = ["s1", "s2", "s3", "s4"];
    let tgt_vocab = ["t1", "t2", "t3"];
    let lm = test_lm();
    let weights = FeatureWeights::default();
    for _ in 0..40 {
        let table = random_table(&mut rng, &src_vocab, &tgt_vocab);
        let len = 1 + rng.gen_range(5);
        let src: Vec<String> = (0..len)
            .map(|_| src_vocab[rng.gen_range(src_vocab.len())].to_string())
            .collect();
        let with = decode(
            &src,
            &table,
            &lm,
            &weights,
            &DecoderConfig {
                distortion_limit: 3,
                stack_size: 100_000,
                beam_log: f64::INFINITY,
                n_best: 0,
                recombine: true,
            },
        )
        .unwrap();
        let without = decode(
            &src,
            &table,
            &lm,
            &weights,
            &DecoderConfig {
                distortion_limit: 3,
                stack_size: 1_000_000,
                beam_log: f64::INFINITY,
                n_best: 0,
                recombine: false,
            },
        )
        .unwrap();
        assert!(
            (with.score - without.score).abs() < 1e-9,
            "{src:?}: {} vs {}",
            with.score,
            without.score
        );
    }
}

/// Dense grid search over two weights; the selection rule matches the
/// pool's (last maximum wins) so ties cannot inflate the target.
fn grid_search_bleu(pool: &NBestPool) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let mut per_sentence: Vec<Vec<(f64, f64, &SentenceStats)>> = Vec::new();
    for s in 0..pool.n_sentences() {
        per_sentence.push(
            pool.entries(s)
                .iter()
                .map(|e| (e.features[0], e.features[1], &e.stats))
                .collect(),
        );
    }
    for i in 0..=1000 {
        let w0 = -5.0 + i as f64 * 0.01;
        for j in 0..=1000 {
            let w1 = -5.0 + j as f64 * 0.01;
            let mut total = SentenceStats::default();
            for entries in &per_sentence {
                let mut chosen: Option<(f64, &SentenceStats)> = None;
                for &(f0, f1, stats) in entries {
                    let score = w0 * f0 + w1 * f1;
                    if chosen.map(|(s, _)| score >= s).unwrap_or(true) {
                        chosen = Some((score, stats));
                    }
                }
                if let Some((_, stats)) = chosen {
                    total.add(stats);
                }
            }
            let bleu = bleu_from_stats(&total, Smoothing::Exp).bleu;
            if bleu > best {
                best = bleu;
            }
        }
    }
    best
}

#[test]
fn mert_reaches_grid_search_optimum_on_10_pools() {
    let vocab = ["a", "b", "c", "d", "e", "f"];
    for pool_seed in 0..10u64 {
        let mut rng = Rng::new(1000 + pool_seed);
        let n_sentences = 3 + rng.gen_range(3);
        let mut pool = NBestPool::new(n_sentences);
        for s in 0..n_sentences {
            let reference: Vec<String> = (0..4 + rng.gen_range(4))
                .map(|_| vocab[rng.gen_range(vocab.len())].to_string())
                .collect();
            let n_hyps = 3 + rng.gen_range(4);
            for h in 0..n_hyps {
                // A mix of near-misses and the reference itself so the
                // surface has real structure.
                let tokens: Vec<String> = if h == 0 && rng.gen_f64() < 0.5 {
                    reference.clone()
                } else {
                    (0..3 + rng.gen_range(5))
                        .map(|_| vocab[rng.gen_range(vocab.len())].to_string())
                        .collect()
                };
                let features = vec![rng.gen_uniform(-1.0, 1.0), rng.gen_uniform(-1.0, 1.0)];
                pool.add(s, tokens, features, &reference);
            }
        }
        let grid_best = grid_search_bleu(&pool);
        let (_, mert_bleu) = mert_line_search(&pool, &[0.1, 0.1], 10, 99 + pool_seed, 40);
        assert!(
            mert_bleu >= grid_best - 0.01,
            "pool {pool_seed}: mert {mert_bleu} vs grid {grid_best}"
        );
    }
}

/// Sanity anchor for the shared stats path used by both searches.
#[test]
fn stats_path_matches_direct_bleu() {
    let hyp = toks(&["the", "cat", "sat", "down"]);
    let reference = toks(&["the", "cat", "sat"]);
    let mut total = SentenceStats::default();
    total.add(&sentence_stats(&hyp, &reference));
    let report = bleu_from_stats(&total, Smoothing::Exp);
    assert!(report.bleu > 0.0 && report.bleu < 100.0);
}
