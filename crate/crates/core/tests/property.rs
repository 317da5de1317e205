//! Property tests over the text-processing and evaluation invariants,
//! plus the detokenization round trip on the bundled corpus fixture.

use std::fs;
use std::path::PathBuf;

use proptest::prelude::*;

use lrmt::corpus::{deduplicate, DedupKey, ParallelCorpus, SentencePair};
use lrmt::eval::{bleu_from_tokens, Smoothing};
use lrmt::textproc::{bpe_apply, bpe_learn, bpe_undo, detokenize, tokenize, TokenizerMode};

fn word() -> impl Strategy<Value = String> {
    proptest::string::string_regex("[a-zᎠ-Ᏼ]{1,8}").unwrap()
}

fn sentence() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec(word(), 1..10)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bpe_undo_inverts_apply(corpus in proptest::collection::vec(sentence(), 1..20),
                              n_merges in 0usize..60) {
        let table = bpe_learn(corpus.iter().map(Vec::as_slice), n_merges);
        for tokens in &corpus {
            prop_assert_eq!(&bpe_undo(&bpe_apply(&table, tokens)), tokens);
        }
        // Learned merges never exceed the requested budget.
        prop_assert!(table.len() <= n_merges);
    }

    #[test]
    fn tokenize_preserves_content(text in "[a-z0-9 .,!?()ᎠᎡᎢ']{0,60}") {
        for mode in [TokenizerMode::Cherokee, TokenizerMode::English] {
            let tokens = tokenize(&text, mode);
            prop_assert!(tokens.iter().all(|t| !t.is_empty()));
            let joined: String = tokens.concat();
            let stripped: String = text.chars().filter(|c| !c.is_whitespace()).collect();
            prop_assert_eq!(joined, stripped);
        }
    }

    #[test]
    fn detokenize_tokenize_fixpoint(tokens in sentence()) {
        for mode in [TokenizerMode::Cherokee, TokenizerMode::English] {
            let text = detokenize(&tokens, mode);
            let round = tokenize(&text, mode);
            prop_assert_eq!(&round, &tokens);
        }
    }

    #[test]
    fn dedup_is_idempotent(keys in proptest::collection::vec(0u8..6, 0..30)) {
        let corpus = ParallelCorpus::new(
            keys.iter()
                .enumerate()
                .map(|(i, &k)| SentencePair {
                    src: format!("s{k}"),
                    tgt: format!("t{i}"),
                    doc_id: String::new(),
                    dialect: Default::default(),
                    text_type: Default::default(),
                })
                .collect(),
        );
        let once = deduplicate(&corpus, DedupKey::Src);
        let twice = deduplicate(&once, DedupKey::Src);
        prop_assert_eq!(&once, &twice);
        prop_assert!(once.len() <= corpus.len());
    }

    #[test]
    fn bleu_is_sentence_order_invariant(
        pairs in proptest::collection::vec((sentence(), sentence()), 1..12),
        seed in 0u64..1000,
    ) {
        let hyps: Vec<Vec<String>> = pairs.iter().map(|(h, _)| h.clone()).collect();
        let refs: Vec<Vec<String>> = pairs.iter().map(|(_, r)| r.clone()).collect();
        let direct = bleu_from_tokens(&hyps, &refs, Smoothing::Exp).unwrap().bleu;
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        lrmt::rng::Rng::new(seed).shuffle(&mut order);
        let hyps_p: Vec<Vec<String>> = order.iter().map(|&i| hyps[i].clone()).collect();
        let refs_p: Vec<Vec<String>> = order.iter().map(|&i| refs[i].clone()).collect();
        let permuted = bleu_from_tokens(&hyps_p, &refs_p, Smoothing::Exp).unwrap().bleu;
        prop_assert_eq!(direct, permuted);
    }
}

/// The 1,000 bundled corpus lines re-tokenize to themselves after
/// detokenization.
#[test]
fn corpus_lines_round_trip_through_detokenization() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus500");
    let mut checked = 0;
    for (file, mode) in [
        ("corpus.src", TokenizerMode::Cherokee),
        ("corpus.tgt", TokenizerMode::English),
    ] {
        let text = fs::read_to_string(dir.join(file)).unwrap();
        for line in text.lines() {
            let tokens = tokenize(line, mode);
            let round = tokenize(&detokenize(&tokens, mode), mode);
            assert_eq!(round, tokens, "{file}: {line:?}");
            checked += 1;
        }
    }
    assert_eq!(checked, 1000);
}
