//! Phrase-table estimation: relative frequencies in both directions plus
//! lexical weights computed from the extraction's internal alignment.

use std::collections::HashMap;

use super::extract::extract_phrases;
use super::{PhraseOption, PhraseTable, SmtError};
use crate::align::{AlignmentMatrix, TokenizedPair, TranslationTable};

/// Lexical weight of `tgt` given `src` under word probabilities
/// w(tgt_word | src_word): for every target position, average w over its
/// aligned source words, or w(.|NULL) when unaligned.
fn lexical_weight(
    src: &[String],
    tgt: &[String],
    alignment: &[(usize, usize)],
    w: &TranslationTable,
) -> f64 {
    let mut product = 1.0;
    for (j, tgt_word) in tgt.iter().enumerate() {
        let aligned: Vec<usize> = alignment
            .iter()
            .filter(|&&(_, jj)| jj == j)
            .map(|&(i, _)| i)
            .collect();
        let p = if aligned.is_empty() {
            w.prob_null(tgt_word)
        } else {
            aligned
                .iter()
                .map(|&i| w.prob(tgt_word, &src[i]))
                .sum::<f64>()
                / aligned.len() as f64
        };
        // The floor keeps a single unseen pair from zeroing the phrase.
        product *= p.max(1e-12);
    }
    product
}

/// Estimate a phrase table from per-pair symmetrized alignments.
///
/// `w_src_given_tgt` is the Model 1 table trained on (src, tgt) pairs,
/// i.e. t(src word | tgt word); `w_tgt_given_src` on the swapped corpus.
pub fn build_phrase_table(
    pairs: &[TokenizedPair],
    alignments: &[AlignmentMatrix],
    w_src_given_tgt: &TranslationTable,
    w_tgt_given_src: &TranslationTable,
    max_phrase_len: usize,
) -> Result<PhraseTable, SmtError> {
    if pairs.len() != alignments.len() {
        return Err(SmtError::Inconsistent(format!(
            "{} pairs vs {} alignments",
            pairs.len(),
            alignments.len()
        )));
    }

    // Count (src phrase, tgt phrase) extractions and remember each
    // pair's most frequent internal alignment.
    type PhrasePair = (Vec<String>, Vec<String>);
    let mut counts: HashMap<PhrasePair, u64> = HashMap::new();
    let mut src_totals: HashMap<Vec<String>, u64> = HashMap::new();
    let mut tgt_totals: HashMap<Vec<String>, u64> = HashMap::new();
    let mut align_counts: HashMap<PhrasePair, HashMap<Vec<(usize, usize)>, u64>> = HashMap::new();

    for ((src_sent, tgt_sent), alignment) in pairs.iter().zip(alignments) {
        if src_sent.len() != alignment.src_len || tgt_sent.len() != alignment.tgt_len {
            return Err(SmtError::Inconsistent(
                "alignment dimensions do not match the tokenized pair".to_string(),
            ));
        }
        for phrase in extract_phrases(alignment, max_phrase_len) {
            let src = src_sent[phrase.src_start..phrase.src_end].to_vec();
            let tgt = tgt_sent[phrase.tgt_start..phrase.tgt_end].to_vec();
            let internal: Vec<(usize, usize)> = alignment
                .links
                .iter()
                .filter(|&&(i, j)| {
                    (phrase.src_start..phrase.src_end).contains(&i)
                        && (phrase.tgt_start..phrase.tgt_end).contains(&j)
                })
                .map(|&(i, j)| (i - phrase.src_start, j - phrase.tgt_start))
                .collect();
            let key = (src.clone(), tgt.clone());
            *counts.entry(key.clone()).or_insert(0) += 1;
            *src_totals.entry(src).or_insert(0) += 1;
            *tgt_totals.entry(tgt).or_insert(0) += 1;
            *align_counts
                .entry(key)
                .or_default()
                .entry(internal)
                .or_insert(0) += 1;
        }
    }

    let mut table = PhraseTable::new(max_phrase_len);
    let mut keys: Vec<&PhrasePair> = counts.keys().collect();
    keys.sort();
    for key in keys {
        let (src, tgt) = key;
        let count = counts[key];
        let phi_ef = count as f64 / src_totals[src] as f64;
        let phi_fe = count as f64 / tgt_totals[tgt] as f64;
        // Most frequent internal alignment; ties take the smallest link set.
        let alignment = align_counts[key]
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(links, _)| links.clone())
            .unwrap_or_default();
        let lex_ef = lexical_weight(src, tgt, &alignment, w_tgt_given_src);
        let inverted: Vec<(usize, usize)> = alignment.iter().map(|&(i, j)| (j, i)).collect();
        let lex_fe = lexical_weight(tgt, src, &inverted, w_src_given_tgt);
        table.insert(
            src.clone(),
            PhraseOption {
                tgt: tgt.clone(),
                features: [phi_fe, lex_fe, phi_ef, lex_ef, std::f64::consts::E],
                alignment,
            },
        );
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::ibm1_train;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn swapped(pairs: &[TokenizedPair]) -> Vec<TokenizedPair> {
        pairs.iter().map(|(a, b)| (b.clone(), a.clone())).collect()
    }

    #[test]
    fn single_extraction_gets_unit_probabilities() {
        let pairs = vec![(toks(&["s"]), toks(&["t"]))];
        let alignments = vec![AlignmentMatrix::from_links(1, 1, [(0, 0)]).unwrap()];
        let fwd = ibm1_train(&pairs, 3).unwrap();
        let bwd = ibm1_train(&swapped(&pairs), 3).unwrap();
        let table = build_phrase_table(&pairs, &alignments, &fwd, &bwd, 7).unwrap();
        let opts = table.options(&toks(&["s"]));
        assert_eq!(opts.len(), 1);
        assert!((opts[0].features[0] - 1.0).abs() < 1e-12);
        assert!((opts[0].features[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relative_frequencies_split_three_to_one() {
        // "s"->"t" three times, "s"->"u" once, all single-word aligned.
        let mut pairs = vec![];
        for _ in 0..3 {
            pairs.push((toks(&["s"]), toks(&["t"])));
        }
        pairs.push((toks(&["s"]), toks(&["u"])));
        let alignments: Vec<AlignmentMatrix> = (0..4)
            .map(|_| AlignmentMatrix::from_links(1, 1, [(0, 0)]).unwrap())
            .collect();
        let fwd = ibm1_train(&pairs, 5).unwrap();
        let bwd = ibm1_train(&swapped(&pairs), 5).unwrap();
        let table = build_phrase_table(&pairs, &alignments, &fwd, &bwd, 7).unwrap();
        let opts = table.options(&toks(&["s"]));
        assert_eq!(opts.len(), 2);
        let phi_ef: Vec<f64> = opts.iter().map(|o| o.features[2]).collect();
        let mut sorted = phi_ef.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!((sorted[0] - 0.75).abs() < 1e-12);
        assert!((sorted[1] - 0.25).abs() < 1e-12);
        // phi(e|f) over all targets of one source sums to one.
        assert!((phi_ef.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lexical_weight_matches_hand_computation() {
        // Two-word phrase, both words aligned 1-1, plus one unaligned
        // test through NULL. Hand formula: product over target words of
        // the averaged w values.
        let pairs = vec![
            (toks(&["s1", "s2"]), toks(&["t1", "t2"])),
            (toks(&["s1"]), toks(&["t1"])),
        ];
        let bwd = ibm1_train(&swapped(&pairs), 10).unwrap();
        let src = toks(&["s1", "s2"]);
        let tgt = toks(&["t1", "t2"]);
        let alignment = vec![(0, 0), (1, 1)];
        let got = lexical_weight(&src, &tgt, &alignment, &bwd);
        let want = bwd.prob("t1", "s1") * bwd.prob("t2", "s2");
        assert!((got - want).abs() < 1e-12);

        // One target word aligned to both source words: average.
        let alignment2 = vec![(0, 0), (1, 0)];
        let got2 = lexical_weight(&src, &toks(&["t1"]), &alignment2, &bwd);
        let want2 = 0.5 * (bwd.prob("t1", "s1") + bwd.prob("t1", "s2"));
        assert!((got2 - want2).abs() < 1e-12);

        // Unaligned target word goes through NULL.
        let got3 = lexical_weight(&src, &toks(&["t1"]), &[], &bwd);
        assert!((got3 - bwd.prob_null("t1").max(1e-12)).abs() < 1e-15);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let pairs = vec![(toks(&["s"]), toks(&["t"]))];
        let fwd = ibm1_train(&pairs, 2).unwrap();
        let bwd = ibm1_train(&swapped(&pairs), 2).unwrap();
        assert!(build_phrase_table(&pairs, &[], &fwd, &bwd, 7).is_err());
        let bad = vec![AlignmentMatrix::from_links(2, 1, [(0, 0)]).unwrap()];
        assert!(build_phrase_table(&pairs, &bad, &fwd, &bwd, 7).is_err());
    }
}
