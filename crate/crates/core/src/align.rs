//! Word alignment for phrase extraction: an IBM Model 1 EM trainer with
//! a NULL token on the conditioning side, Viterbi link extraction, and
//! bidirectional symmetrization (intersection, union, grow-diag-final-and).

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use thiserror::Error;

/// The token on the conditioning side that absorbs unaligned words.
pub const NULL_TOKEN: &str = "<NULL>";

/// Probability floor applied to expected counts before normalization so
/// that no observed pair can lock at zero.
const COUNT_FLOOR: f64 = 1e-12;

/// E-step work unit; fixed so that parallel reduction merges partial
/// counts in a thread-count-independent order.
const EM_CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("dimension mismatch: forward is {fwd_src}x{fwd_tgt}, backward is {bwd_src}x{bwd_tgt}")]
    DimensionMismatch {
        fwd_src: usize,
        fwd_tgt: usize,
        bwd_src: usize,
        bwd_tgt: usize,
    },
    #[error("malformed alignment link {text:?}")]
    MalformedLink { text: String },
    #[error("alignment link {src}-{tgt} out of bounds for {src_len}x{tgt_len}")]
    LinkOutOfBounds {
        src: usize,
        tgt: usize,
        src_len: usize,
        tgt_len: usize,
    },
}

/// A tokenized sentence pair: (source tokens, target tokens).
pub type TokenizedPair = (Vec<String>, Vec<String>);

/// Lexical translation probabilities t(f|e), conditioned on the target
/// side, with `<NULL>` among the conditioning tokens.
#[derive(Debug, Clone)]
pub struct TranslationTable {
    src_index: HashMap<String, u32>,
    tgt_index: HashMap<String, u32>,
    /// Per conditioning token e: co-occurring f -> t(f|e).
    t: Vec<HashMap<u32, f64>>,
}

impl TranslationTable {
    /// t(f|e); zero for pairs never observed together.
    pub fn prob(&self, f: &str, e: &str) -> f64 {
        match (self.src_index.get(f), self.tgt_index.get(e)) {
            (Some(&fi), Some(&ei)) => self.t[ei as usize].get(&fi).copied().unwrap_or(0.0),
            _ => 0.0,
        }
    }

    /// t(f|NULL).
    pub fn prob_null(&self, f: &str) -> f64 {
        self.prob(f, NULL_TOKEN)
    }

    /// Sum of t(.|e); 1.0 for every observed e after any EM iteration.
    pub fn conditional_mass(&self, e: &str) -> Option<f64> {
        self.tgt_index
            .get(e)
            .map(|&ei| self.t[ei as usize].values().sum())
    }

    pub fn conditioning_tokens(&self) -> impl Iterator<Item = &String> {
        self.tgt_index.keys()
    }
}

struct Interner {
    index: HashMap<String, u32>,
}

impl Interner {
    fn new() -> Self {
        Interner {
            index: HashMap::new(),
        }
    }

    fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.index.len() as u32;
        self.index.insert(token.to_string(), id);
        id
    }
}

struct EmCorpus {
    /// (src ids, tgt ids with NULL prepended) per pair.
    pairs: Vec<(Vec<u32>, Vec<u32>)>,
    src_index: HashMap<String, u32>,
    tgt_index: HashMap<String, u32>,
}

fn intern_corpus(pairs: &[TokenizedPair]) -> EmCorpus {
    let mut src = Interner::new();
    let mut tgt = Interner::new();
    let null_id = tgt.intern(NULL_TOKEN);
    let interned = pairs
        .iter()
        .map(|(f_sent, e_sent)| {
            let f_ids: Vec<u32> = f_sent.iter().map(|w| src.intern(w)).collect();
            let mut e_ids = Vec::with_capacity(e_sent.len() + 1);
            e_ids.push(null_id);
            e_ids.extend(e_sent.iter().map(|w| tgt.intern(w)));
            (f_ids, e_ids)
        })
        .collect();
    EmCorpus {
        pairs: interned,
        src_index: src.index,
        tgt_index: tgt.index,
    }
}

/// Uniform initialization of t(f|e) over the source words co-occurring
/// with each conditioning token.
fn uniform_init(corpus: &EmCorpus) -> Vec<HashMap<u32, f64>> {
    let n_tgt = corpus.tgt_index.len();
    let mut cooc: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n_tgt];
    for (f_ids, e_ids) in &corpus.pairs {
        for &e in e_ids {
            cooc[e as usize].extend(f_ids.iter().copied());
        }
    }
    cooc.into_iter()
        .map(|fs| {
            let p = if fs.is_empty() {
                0.0
            } else {
                1.0 / fs.len() as f64
            };
            fs.into_iter().map(|f| (f, p)).collect()
        })
        .collect()
}

/// One EM iteration; returns the corpus log-likelihood under the table
/// the iteration started from.
fn em_iteration(corpus: &EmCorpus, t: &mut [HashMap<u32, f64>]) -> f64 {
    type Partial = (HashMap<(u32, u32), f64>, Vec<f64>, f64);

    let n_tgt = t.len();
    let partials: Vec<Partial> = corpus
        .pairs
        .par_chunks(EM_CHUNK)
        .map(|chunk| {
            let mut counts: HashMap<(u32, u32), f64> = HashMap::new();
            let mut totals = vec![0.0f64; n_tgt];
            let mut ll = 0.0f64;
            for (f_ids, e_ids) in chunk {
                for &f in f_ids {
                    let mut denom = 0.0;
                    for &e in e_ids {
                        denom += t[e as usize].get(&f).copied().unwrap_or(0.0);
                    }
                    if denom > 0.0 {
                        ll += (denom / e_ids.len() as f64).ln();
                        for &e in e_ids {
                            let p = t[e as usize].get(&f).copied().unwrap_or(0.0);
                            if p > 0.0 {
                                let delta = p / denom;
                                *counts.entry((f, e)).or_insert(0.0) += delta;
                                totals[e as usize] += delta;
                            }
                        }
                    }
                }
            }
            (counts, totals, ll)
        })
        .collect();

    // Deterministic merge in chunk order.
    let mut counts: HashMap<(u32, u32), f64> = HashMap::new();
    let mut totals = vec![0.0f64; n_tgt];
    let mut ll = 0.0;
    for (c, tots, l) in partials {
        for (k, v) in c {
            *counts.entry(k).or_insert(0.0) += v;
        }
        for (i, v) in tots.into_iter().enumerate() {
            totals[i] += v;
        }
        ll += l;
    }

    // M-step with the count floor, then per-e normalization.
    for probs in t.iter_mut() {
        probs.values_mut().for_each(|p| *p = 0.0);
    }
    for ((f, e), c) in counts {
        *t[e as usize].entry(f).or_insert(0.0) = c.max(COUNT_FLOOR);
    }
    for probs in t.iter_mut() {
        // Entries that received no count this iteration still get the floor.
        probs.values_mut().for_each(|p| {
            if *p == 0.0 {
                *p = COUNT_FLOOR;
            }
        });
        let sum: f64 = probs.values().sum();
        if sum > 0.0 {
            probs.values_mut().for_each(|p| *p /= sum);
        }
    }
    ll
}

/// Train a Model 1 table with `iterations` EM passes from the uniform
/// initialization. Returns the table and the per-iteration corpus
/// log-likelihoods (each evaluated before the iteration's update).
pub fn ibm1_train_with_stats(
    pairs: &[TokenizedPair],
    iterations: usize,
) -> Result<(TranslationTable, Vec<f64>), AlignError> {
    if pairs.is_empty() {
        return Err(AlignError::EmptyCorpus);
    }
    let corpus = intern_corpus(pairs);
    let mut t = uniform_init(&corpus);
    let mut lls = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        lls.push(em_iteration(&corpus, &mut t));
    }
    Ok((
        TranslationTable {
            src_index: corpus.src_index,
            tgt_index: corpus.tgt_index,
            t,
        },
        lls,
    ))
}

pub fn ibm1_train(
    pairs: &[TokenizedPair],
    iterations: usize,
) -> Result<TranslationTable, AlignError> {
    ibm1_train_with_stats(pairs, iterations).map(|(table, _)| table)
}

/// Word alignment links for one sentence pair, 0-based and src-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentMatrix {
    pub links: BTreeSet<(usize, usize)>,
    pub src_len: usize,
    pub tgt_len: usize,
}

impl AlignmentMatrix {
    pub fn new(src_len: usize, tgt_len: usize) -> AlignmentMatrix {
        AlignmentMatrix {
            links: BTreeSet::new(),
            src_len,
            tgt_len,
        }
    }

    pub fn from_links<I: IntoIterator<Item = (usize, usize)>>(
        src_len: usize,
        tgt_len: usize,
        links: I,
    ) -> Result<AlignmentMatrix, AlignError> {
        let mut matrix = AlignmentMatrix::new(src_len, tgt_len);
        for (i, j) in links {
            if i >= src_len || j >= tgt_len {
                return Err(AlignError::LinkOutOfBounds {
                    src: i,
                    tgt: j,
                    src_len,
                    tgt_len,
                });
            }
            matrix.links.insert((i, j));
        }
        Ok(matrix)
    }

    /// Swap the two sides, turning a target-major alignment src-major.
    pub fn transposed(&self) -> AlignmentMatrix {
        AlignmentMatrix {
            links: self.links.iter().map(|&(i, j)| (j, i)).collect(),
            src_len: self.tgt_len,
            tgt_len: self.src_len,
        }
    }

    /// The standard `i-j` space-separated text form.
    pub fn to_line(&self) -> String {
        self.links
            .iter()
            .map(|(i, j)| format!("{i}-{j}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn parse_line(
        line: &str,
        src_len: usize,
        tgt_len: usize,
    ) -> Result<AlignmentMatrix, AlignError> {
        let mut links = Vec::new();
        for part in line.split_whitespace() {
            let (i, j) = part
                .split_once('-')
                .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                .ok_or_else(|| AlignError::MalformedLink {
                    text: part.to_string(),
                })?;
            links.push((i, j));
        }
        AlignmentMatrix::from_links(src_len, tgt_len, links)
    }
}

/// Link every source word to its most probable conditioning token; words
/// whose argmax is NULL stay unaligned. Ties prefer a real link over
/// NULL and the lowest target index among targets.
pub fn viterbi_align(table: &TranslationTable, pair: &TokenizedPair) -> AlignmentMatrix {
    let (f_sent, e_sent) = pair;
    let mut matrix = AlignmentMatrix::new(f_sent.len(), e_sent.len());
    for (i, f) in f_sent.iter().enumerate() {
        let mut best_j = None;
        let mut best_p = table.prob_null(f);
        for (j, e) in e_sent.iter().enumerate() {
            let p = table.prob(f, e);
            if p > best_p || (p == best_p && best_j.is_none() && p > 0.0) {
                best_p = p;
                best_j = Some(j);
            }
        }
        if let Some(j) = best_j {
            matrix.links.insert((i, j));
        }
    }
    matrix
}

/// How to combine forward and backward alignments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symmetrization {
    Intersect,
    Union,
    GrowDiagFinalAnd,
}

impl Symmetrization {
    pub fn parse(s: &str) -> Option<Symmetrization> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "intersect" | "intersection" => Some(Symmetrization::Intersect),
            "union" => Some(Symmetrization::Union),
            "grow-diag-final-and" | "gdfa" => Some(Symmetrization::GrowDiagFinalAnd),
            _ => None,
        }
    }
}

/// Combine two src-major alignments of the same sentence pair.
pub fn symmetrize(
    fwd: &AlignmentMatrix,
    bwd: &AlignmentMatrix,
    heuristic: Symmetrization,
) -> Result<AlignmentMatrix, AlignError> {
    if fwd.src_len != bwd.src_len || fwd.tgt_len != bwd.tgt_len {
        return Err(AlignError::DimensionMismatch {
            fwd_src: fwd.src_len,
            fwd_tgt: fwd.tgt_len,
            bwd_src: bwd.src_len,
            bwd_tgt: bwd.tgt_len,
        });
    }
    let mut out = AlignmentMatrix::new(fwd.src_len, fwd.tgt_len);
    match heuristic {
        Symmetrization::Intersect => {
            out.links = fwd.links.intersection(&bwd.links).copied().collect();
        }
        Symmetrization::Union => {
            out.links = fwd.links.union(&bwd.links).copied().collect();
        }
        Symmetrization::GrowDiagFinalAnd => {
            out.links = grow_diag_final_and(fwd, bwd);
        }
    }
    Ok(out)
}

const NEIGHBORHOOD: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

fn grow_diag_final_and(fwd: &AlignmentMatrix, bwd: &AlignmentMatrix) -> BTreeSet<(usize, usize)> {
    let union: BTreeSet<(usize, usize)> = fwd.links.union(&bwd.links).copied().collect();
    let mut alignment: BTreeSet<(usize, usize)> =
        fwd.links.intersection(&bwd.links).copied().collect();
    let mut src_aligned = vec![false; fwd.src_len];
    let mut tgt_aligned = vec![false; fwd.tgt_len];
    for &(i, j) in &alignment {
        src_aligned[i] = true;
        tgt_aligned[j] = true;
    }

    // Grow into union neighbors of aligned points while either endpoint
    // is still unaligned; row-major sweeps until fixpoint.
    loop {
        let mut added = Vec::new();
        for &(i, j) in &alignment {
            for (di, dj) in NEIGHBORHOOD {
                let ni = i as isize + di;
                let nj = j as isize + dj;
                if ni < 0 || nj < 0 {
                    continue;
                }
                let (ni, nj) = (ni as usize, nj as usize);
                if ni >= fwd.src_len || nj >= fwd.tgt_len {
                    continue;
                }
                if (!src_aligned[ni] || !tgt_aligned[nj]) && union.contains(&(ni, nj)) {
                    added.push((ni, nj));
                }
            }
        }
        let mut changed = false;
        for (i, j) in added {
            if (!src_aligned[i] || !tgt_aligned[j]) && alignment.insert((i, j)) {
                src_aligned[i] = true;
                tgt_aligned[j] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    // Final-and: union links whose endpoints are both still unaligned.
    for &(i, j) in &union {
        if !src_aligned[i] && !tgt_aligned[j] {
            alignment.insert((i, j));
            src_aligned[i] = true;
            tgt_aligned[j] = true;
        }
    }
    alignment
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn toy_corpus() -> Vec<TokenizedPair> {
        vec![
            (toks(&["x", "y"]), toks(&["a", "b"])),
            (toks(&["x"]), toks(&["a"])),
        ]
    }

    #[test]
    fn em_converges_on_toy_corpus() {
        // Fixed-point trajectory verified against an independent EM run:
        // with one NULL per sentence, t(x|a)=0.979593 and t(y|b)=0.999977
        // after 20 iterations, passing 0.99 both by iteration 40.
        let pairs = toy_corpus();
        let table = ibm1_train(&pairs, 20).unwrap();
        assert!(
            (table.prob("x", "a") - 0.979593).abs() < 1e-6,
            "t(x|a)={}",
            table.prob("x", "a")
        );
        assert!(
            (table.prob("y", "b") - 0.999977).abs() < 1e-6,
            "t(y|b)={}",
            table.prob("y", "b")
        );
        let table = ibm1_train(&pairs, 40).unwrap();
        assert!(
            table.prob("x", "a") >= 0.99,
            "t(x|a)={}",
            table.prob("x", "a")
        );
        assert!(
            table.prob("y", "b") >= 0.99,
            "t(y|b)={}",
            table.prob("y", "b")
        );
    }

    #[test]
    fn single_iteration_normalizes_with_null() {
        let pairs = vec![(toks(&["x"]), toks(&["a"]))];
        let table = ibm1_train(&pairs, 1).unwrap();
        assert!((table.prob("x", "a") - 1.0).abs() < 1e-12);
        assert!((table.conditional_mass("a").unwrap() - 1.0).abs() < 1e-12);
        assert!((table.conditional_mass(NULL_TOKEN).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_holds_every_iteration() {
        let pairs = toy_corpus();
        for iters in 1..6 {
            let table = ibm1_train(&pairs, iters).unwrap();
            for e in ["a", "b", NULL_TOKEN] {
                let mass = table.conditional_mass(e).unwrap();
                assert!((mass - 1.0).abs() < 1e-9, "iter {iters} e {e}: {mass}");
            }
        }
    }

    #[test]
    fn log_likelihood_monotone() {
        let pairs = vec![
            (toks(&["x", "y"]), toks(&["a", "b"])),
            (toks(&["x"]), toks(&["a"])),
            (toks(&["y", "z"]), toks(&["b", "c"])),
            (toks(&["z"]), toks(&["c"])),
        ];
        let (_, lls) = ibm1_train_with_stats(&pairs, 12).unwrap();
        for w in lls.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "ll dropped: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(ibm1_train(&[], 3), Err(AlignError::EmptyCorpus)));
    }

    #[test]
    fn viterbi_on_converged_toy_table() {
        let pairs = toy_corpus();
        let table = ibm1_train(&pairs, 20).unwrap();
        let matrix = viterbi_align(&table, &pairs[0]);
        let expected: BTreeSet<(usize, usize)> = [(0, 0), (1, 1)].into_iter().collect();
        assert_eq!(matrix.links, expected);
    }

    #[test]
    fn viterbi_forced_single_link() {
        let pairs = vec![(toks(&["x"]), toks(&["a"]))];
        let table = ibm1_train(&pairs, 5).unwrap();
        let matrix = viterbi_align(&table, &pairs[0]);
        assert_eq!(matrix.links.len(), 1);
        assert!(matrix.links.contains(&(0, 0)));
    }

    #[test]
    fn viterbi_unseen_words_prefer_null() {
        let pairs = toy_corpus();
        let table = ibm1_train(&pairs, 5).unwrap();
        let unseen = (toks(&["q"]), toks(&["a"]));
        let matrix = viterbi_align(&table, &unseen);
        assert!(matrix.links.is_empty());
    }

    fn matrix(src: usize, tgt: usize, links: &[(usize, usize)]) -> AlignmentMatrix {
        AlignmentMatrix::from_links(src, tgt, links.iter().copied()).unwrap()
    }

    #[test]
    fn gdfa_grows_diagonal_neighbor() {
        let fwd = matrix(2, 2, &[(0, 0)]);
        let bwd = matrix(2, 2, &[(0, 0), (1, 1)]);
        let out = symmetrize(&fwd, &bwd, Symmetrization::GrowDiagFinalAnd).unwrap();
        assert_eq!(
            out.links,
            [(0, 0), (1, 1)].into_iter().collect::<BTreeSet<_>>()
        );
    }

    #[test]
    fn agreement_is_fixed_point_of_all_heuristics() {
        let m = matrix(3, 3, &[(0, 0), (1, 2), (2, 1)]);
        for h in [
            Symmetrization::Intersect,
            Symmetrization::Union,
            Symmetrization::GrowDiagFinalAnd,
        ] {
            assert_eq!(symmetrize(&m, &m, h).unwrap().links, m.links);
        }
    }

    #[test]
    fn disjoint_intersection_is_empty() {
        let fwd = matrix(2, 2, &[(0, 0)]);
        let bwd = matrix(2, 2, &[(1, 1)]);
        let out = symmetrize(&fwd, &bwd, Symmetrization::Intersect).unwrap();
        assert!(out.links.is_empty());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let fwd = matrix(2, 2, &[(0, 0)]);
        let bwd = matrix(2, 3, &[(0, 0)]);
        assert!(matches!(
            symmetrize(&fwd, &bwd, Symmetrization::Union),
            Err(AlignError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn heuristic_nesting_on_random_alignments() {
        let mut rng = Rng::new(2024);
        for _ in 0..200 {
            let src = 1 + rng.gen_range(6);
            let tgt = 1 + rng.gen_range(6);
            let mut fwd = AlignmentMatrix::new(src, tgt);
            let mut bwd = AlignmentMatrix::new(src, tgt);
            for i in 0..src {
                if rng.gen_f64() < 0.8 {
                    fwd.links.insert((i, rng.gen_range(tgt)));
                }
            }
            for j in 0..tgt {
                if rng.gen_f64() < 0.8 {
                    bwd.links.insert((rng.gen_range(src), j));
                }
            }
            let inter = symmetrize(&fwd, &bwd, Symmetrization::Intersect).unwrap();
            let gdfa = symmetrize(&fwd, &bwd, Symmetrization::GrowDiagFinalAnd).unwrap();
            let union = symmetrize(&fwd, &bwd, Symmetrization::Union).unwrap();
            assert!(inter.links.is_subset(&gdfa.links));
            assert!(gdfa.links.is_subset(&union.links));
        }
    }

    #[test]
    fn alignment_line_round_trip() {
        let m = matrix(3, 4, &[(0, 1), (2, 3), (1, 0)]);
        let line = m.to_line();
        assert_eq!(line, "0-1 1-0 2-3");
        let back = AlignmentMatrix::parse_line(&line, 3, 4).unwrap();
        assert_eq!(back, m);
        assert!(matches!(
            AlignmentMatrix::parse_line("5-0", 3, 4),
            Err(AlignError::LinkOutOfBounds { .. })
        ));
    }

    #[test]
    fn continued_training_equals_longer_training() {
        // EM is stateless given the carried-over table: 3 + 3 iterations
        // equals 6 iterations in one call.
        let pairs = vec![
            (toks(&["x", "y"]), toks(&["a", "b"])),
            (toks(&["y"]), toks(&["b"])),
        ];
        let once = ibm1_train(&pairs, 6).unwrap();
        let (mut table, _) = ibm1_train_with_stats(&pairs, 3).unwrap();
        let corpus = intern_corpus(&pairs);
        for _ in 0..3 {
            em_iteration(&corpus, &mut table.t);
        }
        for f in ["x", "y"] {
            for e in ["a", "b", NULL_TOKEN] {
                assert!(
                    (once.prob(f, e) - table.prob(f, e)).abs() < 1e-12,
                    "t({f}|{e})"
                );
            }
        }
    }
}
