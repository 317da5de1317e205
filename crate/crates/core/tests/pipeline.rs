//! End-to-end properties of the data-leverage pipelines on toy corpora:
//! back-translation mixing, bit-exact transfer handoff, multilingual
//! tagging, and degenerate-case equivalences.

use lrmt::nmt::{build_vocab, Vocabulary};
use lrmt::nmt::{
    make_batches, train, Arch, BatchType, DataSet, FusionConfig, NmtConfig, Seq2SeqModel,
};
use lrmt::rng::Rng;
use lrmt::semisup::{
    back_translate, mix, mix_and_retrain, multilingual_train, provenance_counts, transfer_train,
    MultiDataset, MultiDirection, Provenance, RetrainBackend, RetrainedSystem, SyntheticCorpus,
    Translator,
};
use lrmt::smt::SmtTrainConfig;

fn tiny_config(seed: u64) -> NmtConfig {
    NmtConfig {
        arch: Arch::Rnn,
        enc_layers: 1,
        dec_layers: 1,
        hidden: 16,
        embed: 16,
        dropout: 0.0,
        label_smoothing: 0.0,
        batch_type: BatchType::Sents,
        batch_size: 8,
        max_epochs: 3,
        early_stop_patience: 5,
        seed,
        ..NmtConfig::default()
    }
}

struct ReverseTranslator;
impl Translator for ReverseTranslator {
    fn translate(&self, src: &[String]) -> Vec<String> {
        let mut out = src.to_vec();
        out.reverse();
        out
    }
}

fn toy_parallel(n: usize, seed: u64) -> Vec<(Vec<String>, Vec<String>)> {
    let mut rng = Rng::new(seed);
    let src = ["ka", "lo", "mi", "nu", "po"];
    let tgt = ["cat", "dog", "bird", "fish", "tree"];
    (0..n)
        .map(|_| {
            let len = 1 + rng.gen_range(4);
            let idx: Vec<usize> = (0..len).map(|_| rng.gen_range(src.len())).collect();
            (
                idx.iter().map(|&i| src[i].to_string()).collect(),
                idx.iter().map(|&i| tgt[i].to_string()).collect(),
            )
        })
        .collect()
}

#[test]
fn transfer_handoff_is_bit_exact() {
    let parent = toy_parallel(12, 1);
    let child = toy_parallel(8, 2);
    let dev = toy_parallel(4, 3);
    let outcome = transfer_train(&parent, &child, &dev, tiny_config(10), tiny_config(10)).unwrap();
    // The continuation began exactly at the parent's best checkpoint.
    assert_eq!(outcome.handoff_params, outcome.parent.model.params.tensors);
    // And training actually moved on from there.
    assert_ne!(outcome.handoff_params, outcome.child.model.params.tensors);
}

#[test]
fn degenerate_transfer_restarts_on_same_data() {
    // Parent data equals child data: the construction is a single longer
    // run with a mid-run optimizer reset. Both stages see the same
    // vocabulary and the handoff equality still holds.
    let data = toy_parallel(10, 4);
    let dev = toy_parallel(4, 5);
    let outcome = transfer_train(&data, &data, &dev, tiny_config(20), tiny_config(20)).unwrap();
    assert_eq!(outcome.handoff_params, outcome.parent.model.params.tensors);
    assert_eq!(
        outcome.parent.model.src_vocab.tokens(),
        outcome.child.model.src_vocab.tokens()
    );
}

#[test]
fn multilingual_single_corpus_many_to_one_equals_plain_training() {
    let data = toy_parallel(10, 6);
    let dev = toy_parallel(3, 7);
    let dataset = MultiDataset {
        corpora: vec![(data.clone(), "xx".to_string())],
        direction: MultiDirection::ManyToOne,
    };
    let multi = multilingual_train(&dataset, &dev, tiny_config(30)).unwrap();

    // Plain training over the same shuffled order and vocabularies.
    let tagged = dataset.tagged_pairs();
    let src_sides: Vec<Vec<String>> = tagged.iter().map(|(s, _)| s.clone()).collect();
    let tgt_sides: Vec<Vec<String>> = tagged.iter().map(|(_, t)| t.clone()).collect();
    let src_vocab = build_vocab(src_sides.iter().map(Vec::as_slice), 0);
    let tgt_vocab = build_vocab(tgt_sides.iter().map(Vec::as_slice), 0);
    let mut order: Vec<usize> = (0..tagged.len()).collect();
    Rng::new(30u64 ^ 0x3).shuffle(&mut order);
    let train_set = DataSet::new(
        order
            .iter()
            .map(|&i| {
                (
                    src_vocab.encode(&tagged[i].0),
                    tgt_vocab.encode(&tagged[i].1),
                )
            })
            .collect(),
    );
    let dev_set = DataSet::new(
        dev.iter()
            .map(|(s, t)| (src_vocab.encode(s), tgt_vocab.encode(t)))
            .collect(),
    );
    let model =
        Seq2SeqModel::new(tiny_config(30), FusionConfig::none(), src_vocab, tgt_vocab).unwrap();
    let plain = train(model, &train_set, &dev_set).unwrap();
    assert_eq!(
        multi.outcome.model.params.tensors,
        plain.model.params.tensors
    );
}

#[test]
fn one_to_many_tags_cover_every_batch_and_vocab_once() {
    let dataset = MultiDataset {
        corpora: vec![
            (toy_parallel(8, 8), "chr".to_string()),
            (toy_parallel(6, 9), "de".to_string()),
        ],
        direction: MultiDirection::OneToMany,
    };
    let dev = toy_parallel(3, 10);
    let multi = multilingual_train(&dataset, &dev, tiny_config(40)).unwrap();
    let vocab: &Vocabulary = &multi.outcome.model.src_vocab;

    // Each tag appears exactly once in the vocabulary, as a special.
    for tag in &multi.tags {
        let count = vocab.tokens().iter().filter(|t| *t == tag).count();
        assert_eq!(count, 1, "{tag}");
        assert!(vocab.is_tag(vocab.id(tag)));
    }

    // 100% tag coverage across every assembled batch.
    let tagged = dataset.tagged_pairs();
    let data = DataSet::new(
        tagged
            .iter()
            .map(|(s, t)| (vocab.encode(s), multi.outcome.model.tgt_vocab.encode(t)))
            .collect(),
    );
    let batches = make_batches(&data, BatchType::Sents, 4);
    let mut seen = 0;
    for batch in &batches {
        for &idx in batch {
            let first = data.pairs[idx].0[0];
            assert!(vocab.is_tag(first), "sentence {idx} starts with non-tag");
            seen += 1;
        }
    }
    assert_eq!(seen, tagged.len());
}

#[test]
fn empty_synthetic_retrain_equals_baseline() {
    let gold = toy_parallel(10, 11);
    let dev = toy_parallel(3, 12);
    let empty = SyntheticCorpus {
        pairs: Vec::new(),
        generator_id: "none".to_string(),
        dropped_empty: 0,
    };
    let retrained =
        mix_and_retrain(&gold, &empty, RetrainBackend::Nmt(tiny_config(50)), &dev).unwrap();

    // Train the baseline directly over the same corpus and seed.
    let src_sides: Vec<Vec<String>> = gold.iter().map(|(s, _)| s.clone()).collect();
    let tgt_sides: Vec<Vec<String>> = gold.iter().map(|(_, t)| t.clone()).collect();
    let src_vocab = build_vocab(src_sides.iter().map(Vec::as_slice), 0);
    let tgt_vocab = build_vocab(tgt_sides.iter().map(Vec::as_slice), 0);
    let model = Seq2SeqModel::new(
        tiny_config(50),
        FusionConfig::none(),
        src_vocab.clone(),
        tgt_vocab.clone(),
    )
    .unwrap();
    let baseline = train(
        model,
        &DataSet::new(
            gold.iter()
                .map(|(s, t)| (src_vocab.encode(s), tgt_vocab.encode(t)))
                .collect(),
        ),
        &DataSet::new(
            dev.iter()
                .map(|(s, t)| (src_vocab.encode(s), tgt_vocab.encode(t)))
                .collect(),
        ),
    )
    .unwrap();
    match retrained {
        RetrainedSystem::Nmt(outcome) => {
            assert_eq!(outcome.model.params.tensors, baseline.model.params.tensors);
        }
        RetrainedSystem::Smt(_) => panic!("wrong backend"),
    }
}

struct IdentityTranslator;
impl Translator for IdentityTranslator {
    fn translate(&self, src: &[String]) -> Vec<String> {
        src.to_vec()
    }
}

#[test]
fn bt_on_copy_task_stays_within_two_bleu_of_baseline() {
    // Copy task where synthetic pairs are perfect (identity
    // back-translation): augmenting must not move dev BLEU by more
    // than two points against the no-BT baseline.
    use lrmt::eval::{bleu, Smoothing};
    use lrmt::nmt::{beam_search, BeamConfig};
    use lrmt::semisup::{RetrainBackend, RetrainedSystem};

    let mut rng = Rng::new(900);
    let vocab: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
    let make = |rng: &mut Rng, n: usize| -> Vec<(Vec<String>, Vec<String>)> {
        (0..n)
            .map(|_| {
                let len = 2 + rng.gen_range(4);
                let s: Vec<String> = (0..len)
                    .map(|_| vocab[rng.gen_range(vocab.len())].clone())
                    .collect();
                (s.clone(), s)
            })
            .collect()
    };
    let gold = make(&mut rng, 40);
    let dev = make(&mut rng, 12);
    let mono: Vec<Vec<String>> = make(&mut rng, 10).into_iter().map(|(_, t)| t).collect();

    let config = NmtConfig {
        arch: Arch::Rnn,
        enc_layers: 1,
        dec_layers: 1,
        hidden: 32,
        embed: 32,
        dropout: 0.0,
        label_smoothing: 0.0,
        batch_type: BatchType::Sents,
        batch_size: 16,
        lr: 2e-3,
        max_epochs: 60,
        early_stop_patience: 10,
        seed: 33,
        ..NmtConfig::default()
    };

    let score = |outcome: &lrmt::nmt::TrainOutcome| -> f64 {
        let beam = BeamConfig::default();
        let hyps: Vec<String> = dev
            .iter()
            .map(|(s, _)| {
                beam_search(&outcome.model, s, None, &beam)
                    .unwrap()
                    .tokens
                    .join(" ")
            })
            .collect();
        let refs: Vec<String> = dev.iter().map(|(_, t)| t.join(" ")).collect();
        bleu(&hyps, &refs, Smoothing::Exp).unwrap().bleu
    };

    let empty = SyntheticCorpus {
        pairs: Vec::new(),
        generator_id: "none".to_string(),
        dropped_empty: 0,
    };
    let baseline =
        match mix_and_retrain(&gold, &empty, RetrainBackend::Nmt(config.clone()), &dev).unwrap() {
            RetrainedSystem::Nmt(outcome) => score(&outcome),
            _ => unreachable!(),
        };
    let synthetic = back_translate(&IdentityTranslator, &mono, "identity");
    let augmented =
        match mix_and_retrain(&gold, &synthetic, RetrainBackend::Nmt(config), &dev).unwrap() {
            RetrainedSystem::Nmt(outcome) => score(&outcome),
            _ => unreachable!(),
        };
    assert!(
        (augmented - baseline).abs() <= 2.0,
        "baseline {baseline:.2} vs augmented {augmented:.2}"
    );
}

#[test]
fn bt_mixing_preserves_counts_through_both_backends() {
    let gold = toy_parallel(8, 13);
    let mono: Vec<Vec<String>> = toy_parallel(5, 14)
        .into_iter()
        .map(|(_, tgt)| tgt)
        .collect();
    let synthetic = back_translate(&ReverseTranslator, &mono, "reverse");
    assert_eq!(synthetic.pairs.len(), 5);

    let mixed = mix(&gold, &synthetic);
    assert_eq!(mixed.len(), 13);
    assert_eq!(provenance_counts(&mixed), (8, 5));
    assert!(mixed[..8].iter().all(|(_, _, p)| *p == Provenance::Gold));

    // Both backends retrain over the mixture without complaint.
    let smt = mix_and_retrain(
        &gold,
        &synthetic,
        RetrainBackend::Smt(SmtTrainConfig {
            ibm1_iterations: 3,
            ..SmtTrainConfig::default()
        }),
        &[],
    )
    .unwrap();
    match smt {
        RetrainedSystem::Smt(system) => assert!(!system.table.is_empty()),
        RetrainedSystem::Nmt(_) => panic!("wrong backend"),
    }
    let nmt = mix_and_retrain(
        &gold,
        &synthetic,
        RetrainBackend::Nmt(tiny_config(60)),
        &toy_parallel(2, 15),
    )
    .unwrap();
    match nmt {
        RetrainedSystem::Nmt(outcome) => assert!(outcome.steps > 0),
        RetrainedSystem::Smt(_) => panic!("wrong backend"),
    }
}
