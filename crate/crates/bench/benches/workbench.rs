//! Hot-path benchmarks: BLEU scoring, Kneser-Ney estimation and querying,
//! IBM Model 1 EM, BPE segmentation, stack decoding, and a neural
//! training step.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use lrmt::align::ibm1_train;
use lrmt::eval::{bleu_from_tokens, Smoothing};
use lrmt::ngram_lm::{lm_train, Discounting};
use lrmt::nmt::{
    build_vocab, forward_loss, Arch, Batch, BatchType, BoundParams, FusionConfig, NmtConfig,
    Seq2SeqModel,
};
use lrmt::numerics::Tape;
use lrmt::rng::Rng;
use lrmt::smt::{decode, DecoderConfig, FeatureWeights};
use lrmt::textproc::{bpe_apply, bpe_learn};
use lrmt_bench::{bench_lm, bench_table, synthetic_pairs, synthetic_sentences};

fn bench_bleu(c: &mut Criterion) {
    let refs = synthetic_sentences(500, 80, 20, 1);
    let mut rng = Rng::new(2);
    let hyps: Vec<Vec<String>> = refs
        .iter()
        .map(|r| {
            r.iter()
                .map(|w| {
                    if rng.gen_f64() < 0.2 {
                        format!("w{}", rng.gen_range(80))
                    } else {
                        w.clone()
                    }
                })
                .collect()
        })
        .collect();
    c.bench_function("bleu/corpus_500", |b| {
        b.iter(|| bleu_from_tokens(black_box(&hyps), black_box(&refs), Smoothing::Exp).unwrap())
    });
}

fn bench_kn(c: &mut Criterion) {
    let sentences = synthetic_sentences(400, 60, 12, 3);
    c.bench_function("kn/train_400", |b| {
        b.iter(|| lm_train(black_box(&sentences), 3, Discounting::ModifiedKn).unwrap())
    });
    let model = bench_lm(4);
    let queries = synthetic_sentences(100, 60, 12, 5);
    c.bench_function("kn/score_100", |b| {
        b.iter(|| {
            let mut total = 0.0;
            for q in &queries {
                total += model.score(black_box(q));
            }
            total
        })
    });
}

fn bench_ibm1(c: &mut Criterion) {
    let pairs = synthetic_pairs(300, 50, 10, 6);
    c.bench_function("align/ibm1_5iters_300", |b| {
        b.iter(|| ibm1_train(black_box(&pairs), 5).unwrap())
    });
}

fn bench_bpe(c: &mut Criterion) {
    let sentences = synthetic_sentences(300, 120, 12, 7);
    c.bench_function("bpe/learn_200", |b| {
        b.iter(|| bpe_learn(sentences.iter().map(Vec::as_slice), 200))
    });
    let table = bpe_learn(sentences.iter().map(Vec::as_slice), 200);
    c.bench_function("bpe/apply_300", |b| {
        b.iter(|| {
            sentences
                .iter()
                .map(|s| bpe_apply(&table, black_box(s)).len())
                .sum::<usize>()
        })
    });
}

fn bench_decode(c: &mut Criterion) {
    let table = bench_table(30, 30, 8);
    let lm = bench_lm(9);
    let weights = FeatureWeights::default();
    let config = DecoderConfig::default();
    let mut rng = Rng::new(10);
    let sentences: Vec<Vec<String>> = (0..20)
        .map(|_| (0..8).map(|_| format!("s{}", rng.gen_range(30))).collect())
        .collect();
    c.bench_function("smt/decode_20x8", |b| {
        b.iter(|| {
            sentences
                .iter()
                .map(|s| {
                    decode(black_box(s), &table, &lm, &weights, &config)
                        .unwrap()
                        .score
                })
                .sum::<f64>()
        })
    });
}

fn bench_nmt_step(c: &mut Criterion) {
    let sides: Vec<Vec<String>> = (0..30).map(|i| vec![format!("v{}", i % 10)]).collect();
    let vocab = build_vocab(sides.iter().map(Vec::as_slice), 0);
    let config = NmtConfig {
        arch: Arch::Rnn,
        enc_layers: 1,
        dec_layers: 1,
        hidden: 64,
        embed: 64,
        dropout: 0.0,
        label_smoothing: 0.1,
        batch_type: BatchType::Sents,
        batch_size: 16,
        seed: 1,
        ..NmtConfig::default()
    };
    let model =
        Seq2SeqModel::new(config, FusionConfig::none(), vocab.clone(), vocab.clone()).unwrap();
    let mut rng = Rng::new(11);
    let batch = Batch {
        src: (0..16)
            .map(|_| {
                (0..6)
                    .map(|_| vocab.id(&format!("v{}", rng.gen_range(10))))
                    .collect()
            })
            .collect(),
        tgt: (0..16)
            .map(|_| {
                (0..6)
                    .map(|_| vocab.id(&format!("v{}", rng.gen_range(10))))
                    .collect()
            })
            .collect(),
        provider: None,
    };
    c.bench_function("nmt/rnn_forward_backward_b16", |b| {
        b.iter_batched(
            || Tape::new(1),
            |mut tape| {
                let bound = BoundParams::bind(&model, &mut tape);
                let (loss, _, _) = forward_loss(&mut tape, &bound, &model, black_box(&batch));
                tape.backward(loss);
                tape.grad(bound.vars[0]).map(|g| g.data[0])
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(
    benches,
    bench_bleu,
    bench_kn,
    bench_ibm1,
    bench_bpe,
    bench_decode,
    bench_nmt_step
);
criterion_main!(benches);
