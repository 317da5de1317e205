//! Shared generators for the benchmark suite: deterministic synthetic
//! corpora, tables, and models sized for stable timing.

use lrmt::ngram_lm::{lm_train, Discounting, NGramModel};
use lrmt::rng::Rng;
use lrmt::smt::{PhraseOption, PhraseTable};

pub fn synthetic_sentences(n: usize, vocab: usize, max_len: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| {
            let len = 1 + rng.gen_range(max_len);
            (0..len)
                .map(|_| format!("w{}", rng.gen_range(vocab)))
                .collect()
        })
        .collect()
}

pub fn synthetic_pairs(
    n: usize,
    vocab: usize,
    max_len: usize,
    seed: u64,
) -> Vec<(Vec<String>, Vec<String>)> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| {
            let len = 1 + rng.gen_range(max_len);
            let idx: Vec<usize> = (0..len).map(|_| rng.gen_range(vocab)).collect();
            (
                idx.iter().map(|&i| format!("s{i}")).collect(),
                idx.iter().map(|&i| format!("t{i}")).collect(),
            )
        })
        .collect()
}

pub fn bench_lm(seed: u64) -> NGramModel {
    let sentences = synthetic_sentences(400, 60, 12, seed);
    lm_train(&sentences, 3, Discounting::ModifiedKn).unwrap()
}

pub fn bench_table(src_vocab: usize, tgt_vocab: usize, seed: u64) -> PhraseTable {
    let mut rng = Rng::new(seed);
    let mut table = PhraseTable::new(7);
    for i in 0..src_vocab {
        for _ in 0..2 {
            let tgt: Vec<String> = (0..1 + rng.gen_range(2))
                .map(|_| format!("w{}", rng.gen_range(tgt_vocab)))
                .collect();
            table.insert(
                vec![format!("s{i}")],
                PhraseOption {
                    tgt,
                    features: [
                        rng.gen_uniform(0.05, 1.0),
                        rng.gen_uniform(0.05, 1.0),
                        rng.gen_uniform(0.05, 1.0),
                        rng.gen_uniform(0.05, 1.0),
                        std::f64::consts::E,
                    ],
                    alignment: vec![],
                },
            );
        }
    }
    for i in 0..src_vocab {
        let j = (i + 1) % src_vocab;
        table.insert(
            vec![format!("s{i}"), format!("s{j}")],
            PhraseOption {
                tgt: vec![format!("w{}", i % tgt_vocab), format!("w{}", j % tgt_vocab)],
                features: [0.4, 0.4, 0.4, 0.4, std::f64::consts::E],
                alignment: vec![(0, 0), (1, 1)],
            },
        );
    }
    table
}
