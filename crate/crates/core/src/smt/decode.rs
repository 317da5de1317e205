//! Log-linear stack decoding over coverage cardinality with hypothesis
//! recombination, distance-based distortion, admissible future costs,
//! and n-best extraction from the recombination lattice.

use std::collections::HashMap;

use super::{FeatureWeights, PhraseTable, SmtError, N_FEATURES};
use crate::ngram_lm::NGramModel;

const LN10: f64 = std::f64::consts::LN_10;
/// Table probabilities are floored before the log so that a zero smuggled
/// in through file rounding cannot poison the search with infinities.
const MIN_PROB: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct DecoderConfig {
    pub distortion_limit: usize,
    pub stack_size: usize,
    /// Beam threshold in log domain: hypotheses worse than the stack
    /// best by more than this are dropped. `f64::INFINITY` disables it.
    pub beam_log: f64,
    pub n_best: usize,
    /// Disabling recombination exists for search-exactness checks only.
    pub recombine: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            distortion_limit: 6,
            stack_size: 100,
            beam_log: 5.0,
            n_best: 0,
            recombine: true,
        }
    }
}

/// A translation option instantiated over a source span.
#[derive(Debug, Clone)]
struct SpanOption {
    start: usize,
    end: usize,
    tgt: Vec<String>,
    tgt_ids: Vec<u32>,
    /// ln of the five table features (phrase penalty contributes 1).
    log_features: [f64; 5],
    oov: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NBestEntry {
    pub tokens: Vec<String>,
    pub features: [f64; N_FEATURES],
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    pub translation: Vec<String>,
    pub features: [f64; N_FEATURES],
    pub score: f64,
    pub n_best: Vec<NBestEntry>,
    /// Jumps that exceeded the distortion limit but were allowed because
    /// they targeted the leftmost uncovered word (the stranded-word
    /// fallback); nonzero values deserve a warning upstream.
    pub relaxed_jumps: usize,
}

struct Hyp {
    coverage: u128,
    last_end: usize,
    lm_state: Vec<u32>,
    features: [f64; N_FEATURES],
    score: f64,
    future: f64,
    parent: usize,
    option: usize,
    relaxed: bool,
    recombined: Vec<usize>,
}

const ROOT: usize = usize::MAX;

/// Enumerate table options over every span, adding a pass-through option
/// for source words with no single-word entry (zero translation
/// features, flagged for the OOV penalty).
fn collect_options(src: &[String], table: &PhraseTable, lm: &NGramModel) -> Vec<SpanOption> {
    let mut options = Vec::new();
    let n = src.len();
    for start in 0..n {
        for end in start + 1..=n.min(start + table.max_phrase_len()) {
            let phrase = &src[start..end];
            for option in table.options(phrase) {
                options.push(SpanOption {
                    start,
                    end,
                    tgt: option.tgt.clone(),
                    tgt_ids: option.tgt.iter().map(|w| lm.token_id(w)).collect(),
                    log_features: [
                        option.features[0].max(MIN_PROB).ln(),
                        option.features[1].max(MIN_PROB).ln(),
                        option.features[2].max(MIN_PROB).ln(),
                        option.features[3].max(MIN_PROB).ln(),
                        option.features[4].max(MIN_PROB).ln(),
                    ],
                    oov: false,
                });
            }
        }
        if table.options(&src[start..start + 1]).is_empty() {
            options.push(SpanOption {
                start,
                end: start + 1,
                tgt: vec![src[start].clone()],
                tgt_ids: vec![lm.token_id(&src[start])],
                log_features: [0.0, 0.0, 0.0, 0.0, 1.0],
                oov: true,
            });
        }
    }
    options
}

/// Per-span cheapest-completion estimates from translation features, a
/// unigram language-model approximation, and the word penalty;
/// distortion is ignored.
fn future_costs(
    src_len: usize,
    options: &[SpanOption],
    lm: &NGramModel,
    weights: &FeatureWeights,
) -> Vec<Vec<f64>> {
    let mut span_best = vec![vec![f64::NEG_INFINITY; src_len + 1]; src_len + 1];
    for option in options {
        let mut score = 0.0;
        for k in 0..5 {
            score += weights.values[k] * option.log_features[k];
        }
        for &w in &option.tgt_ids {
            score += weights.values[5] * LN10 * lm.cond_log10_ids(&[], w);
        }
        score += weights.values[6] * option.tgt.len() as f64;
        if option.oov {
            score += weights.values[8];
        }
        let cell = &mut span_best[option.start][option.end];
        *cell = cell.max(score);
    }
    let mut fc = span_best;
    for len in 2..=src_len {
        for i in 0..=src_len - len {
            let j = i + len;
            for k in i + 1..j {
                let via = fc[i][k] + fc[k][j];
                if via > fc[i][j] {
                    fc[i][j] = via;
                }
            }
        }
    }
    fc
}

fn future_for(coverage: u128, src_len: usize, fc: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut i = 0;
    while i < src_len {
        if coverage & (1u128 << i) == 0 {
            let mut j = i;
            while j < src_len && coverage & (1u128 << j) == 0 {
                j += 1;
            }
            total += fc[i][j];
            i = j;
        } else {
            i += 1;
        }
    }
    total
}

fn leftmost_uncovered(coverage: u128, src_len: usize) -> Option<usize> {
    (0..src_len).find(|&i| coverage & (1u128 << i) == 0)
}

/// Recombine hypotheses sharing (coverage, source position, LM state),
/// keeping the best-scoring one and folding the rest into it as
/// alternative lattice arcs, then apply beam and histogram pruning.
fn recombine_and_prune(raw: Vec<usize>, arena: &mut [Hyp], config: &DecoderConfig) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::with_capacity(raw.len());
    if config.recombine {
        let mut by_key: HashMap<(u128, usize, Vec<u32>), usize> = HashMap::new();
        for id in raw {
            let key = (
                arena[id].coverage,
                arena[id].last_end,
                arena[id].lm_state.clone(),
            );
            match by_key.get(&key) {
                Some(&winner) if arena[winner].score >= arena[id].score => {
                    arena[winner].recombined.push(id);
                }
                Some(&loser) => {
                    let folded = std::mem::take(&mut arena[loser].recombined);
                    arena[id].recombined = folded;
                    arena[id].recombined.push(loser);
                    by_key.insert(key, id);
                    let pos = kept.iter().position(|&x| x == loser).unwrap();
                    kept[pos] = id;
                }
                None => {
                    by_key.insert(key, id);
                    kept.push(id);
                }
            }
        }
    } else {
        kept = raw;
    }
    kept.sort_by(|&a, &b| {
        let ta = arena[a].score + arena[a].future;
        let tb = arena[b].score + arena[b].future;
        tb.total_cmp(&ta)
    });
    if let Some(&best) = kept.first() {
        let bound = arena[best].score + arena[best].future - config.beam_log;
        kept.retain(|&h| arena[h].score + arena[h].future >= bound);
    }
    kept.truncate(config.stack_size);
    kept
}

/// Translate one source sentence. The returned feature vector dotted
/// with the weights reproduces the score exactly.
pub fn decode(
    src: &[String],
    table: &PhraseTable,
    lm: &NGramModel,
    weights: &FeatureWeights,
    config: &DecoderConfig,
) -> Result<DecodeOutput, SmtError> {
    if src.len() > 128 {
        return Err(SmtError::SentenceTooLong { len: src.len() });
    }
    if src.is_empty() {
        let mut features = [0.0; N_FEATURES];
        features[5] = LN10 * lm.score(&[]);
        let score = weights.dot(&features);
        return Ok(DecodeOutput {
            translation: Vec::new(),
            features,
            score,
            n_best: vec![NBestEntry {
                tokens: Vec::new(),
                features,
                score,
            }],
            relaxed_jumps: 0,
        });
    }

    let n = src.len();
    let full: u128 = if n == 128 {
        u128::MAX
    } else {
        (1u128 << n) - 1
    };
    let options = collect_options(src, table, lm);
    let fc = future_costs(n, &options, lm, weights);

    let mut arena: Vec<Hyp> = vec![Hyp {
        coverage: 0,
        last_end: 0,
        lm_state: vec![lm.bos_id()],
        features: [0.0; N_FEATURES],
        score: 0.0,
        future: future_for(0, n, &fc),
        parent: ROOT,
        option: ROOT,
        relaxed: false,
        recombined: Vec::new(),
    }];
    let mut stacks: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    stacks[0].push(0);
    let mut goals: Vec<usize> = Vec::new();
    let order = lm.order();

    for cardinality in 0..n {
        // All producers of this stack (earlier stacks) have finished, so
        // recombine and prune it now, then expand the survivors.
        let raw = std::mem::take(&mut stacks[cardinality]);
        let current = recombine_and_prune(raw, &mut arena, config);
        for &hyp_id in &current {
            let leftmost = leftmost_uncovered(arena[hyp_id].coverage, n).unwrap();
            for (opt_id, option) in options.iter().enumerate() {
                let span_bits = ((1u128 << (option.end - option.start)) - 1) << option.start;
                if arena[hyp_id].coverage & span_bits != 0 {
                    continue;
                }
                let jump = (option.start as isize - arena[hyp_id].last_end as isize).unsigned_abs();
                let relaxed_jump = jump > config.distortion_limit;
                if relaxed_jump && option.start != leftmost {
                    continue;
                }

                // Incremental features and score.
                let mut features = arena[hyp_id].features;
                for k in 0..5 {
                    features[k] += option.log_features[k];
                }
                let mut state = arena[hyp_id].lm_state.clone();
                for &w in &option.tgt_ids {
                    features[5] += LN10 * lm.cond_log10_ids(&state, w);
                    state.push(w);
                }
                if state.len() > order - 1 {
                    state.drain(..state.len() - (order - 1));
                }
                features[6] += option.tgt.len() as f64;
                features[7] -= jump as f64;
                if option.oov {
                    features[8] += 1.0;
                }
                let coverage = arena[hyp_id].coverage | span_bits;
                let is_goal = coverage == full;
                if is_goal {
                    features[5] += LN10 * lm.cond_log10_ids(&state, lm.eos_id());
                }
                let score = weights.dot(&features);
                let future = if is_goal {
                    0.0
                } else {
                    future_for(coverage, n, &fc)
                };
                let hyp = Hyp {
                    coverage,
                    last_end: option.end,
                    lm_state: state,
                    features,
                    score,
                    future,
                    parent: hyp_id,
                    option: opt_id,
                    relaxed: relaxed_jump,
                    recombined: Vec::new(),
                };

                arena.push(hyp);
                let id = arena.len() - 1;
                if is_goal {
                    goals.push(id);
                } else {
                    stacks[coverage.count_ones() as usize].push(id);
                }
            }
        }
    }

    if goals.is_empty() {
        // Unreachable given pass-through options and the leftmost rule.
        return Err(SmtError::Inconsistent(
            "no complete hypothesis produced".to_string(),
        ));
    }
    let &best_goal = goals
        .iter()
        .max_by(|&&a, &&b| arena[a].score.total_cmp(&arena[b].score))
        .unwrap();

    // 1-best output follows primary backpointers.
    let mut translation = Vec::new();
    let mut relaxed_jumps = 0;
    let mut cursor = best_goal;
    while cursor != 0 {
        let hyp = &arena[cursor];
        let option = &options[hyp.option];
        translation.splice(0..0, option.tgt.iter().cloned());
        if hyp.relaxed {
            relaxed_jumps += 1;
        }
        cursor = hyp.parent;
    }

    let n_best = if config.n_best > 0 {
        extract_nbest(&arena, &options, &goals, config.n_best)
    } else {
        Vec::new()
    };

    Ok(DecodeOutput {
        translation,
        features: arena[best_goal].features,
        score: arena[best_goal].score,
        n_best,
        relaxed_jumps,
    })
}

/// Lazy k-best over the recombination lattice. Every node's derivation
/// list merges its primary arc with the arcs of hypotheses that were
/// recombined into it; scores and features stay additive along arcs.
fn extract_nbest(
    arena: &[Hyp],
    options: &[SpanOption],
    goals: &[usize],
    k: usize,
) -> Vec<NBestEntry> {
    use std::cmp::Ordering;
    use std::collections::BinaryHeap;

    // Derivation entry: score, arc source node, option applied, and the
    // rank of the derivation used at the arc's tail.
    #[derive(Clone, Copy)]
    struct Deriv {
        score: f64,
        arc_node: usize,
        back_rank: usize,
    }
    struct Cand {
        score: f64,
        arc_node: usize,
        back_rank: usize,
    }
    impl PartialEq for Cand {
        fn eq(&self, other: &Self) -> bool {
            self.score == other.score
        }
    }
    impl Eq for Cand {}
    impl PartialOrd for Cand {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Cand {
        fn cmp(&self, other: &Self) -> Ordering {
            self.score.total_cmp(&other.score)
        }
    }

    // Arcs into node v: (tail node, score increment, arc carrier).
    // The carrier is the hypothesis whose parent/option describe the arc.
    let arcs = |v: usize| -> Vec<usize> {
        let mut list = vec![v];
        list.extend(arena[v].recombined.iter().copied());
        list
    };

    let mut dlists: Vec<Vec<Deriv>> = vec![Vec::new(); arena.len()];
    dlists[0].push(Deriv {
        score: 0.0,
        arc_node: ROOT,
        back_rank: 0,
    });

    // Nodes are created parents-first, so one forward pass suffices.
    for v in 1..arena.len() {
        if arena[v].option == ROOT {
            continue;
        }
        // Skip nodes that were never kept anywhere (recombined carriers
        // still need no list of their own; their arcs are read directly).
        let mut heap: BinaryHeap<Cand> = BinaryHeap::new();
        for carrier in arcs(v) {
            let tail = arena[carrier].parent;
            let inc = arena[carrier].score - arena[tail].score;
            if let Some(first) = dlists[tail].first() {
                heap.push(Cand {
                    score: first.score + inc,
                    arc_node: carrier,
                    back_rank: 0,
                });
            }
        }
        let mut list: Vec<Deriv> = Vec::new();
        while list.len() < k {
            let Some(cand) = heap.pop() else { break };
            list.push(Deriv {
                score: cand.score,
                arc_node: cand.arc_node,
                back_rank: cand.back_rank,
            });
            let tail = arena[cand.arc_node].parent;
            let inc = arena[cand.arc_node].score - arena[tail].score;
            if let Some(next) = dlists[tail].get(cand.back_rank + 1) {
                heap.push(Cand {
                    score: next.score + inc,
                    arc_node: cand.arc_node,
                    back_rank: cand.back_rank + 1,
                });
            }
        }
        dlists[v] = list;
    }

    // Merge goal lists, reconstruct, and drop duplicate translations.
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for &g in goals {
        for (rank, d) in dlists[g].iter().enumerate() {
            candidates.push((d.score, g, rank));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (score, node, rank) in candidates {
        // Walk backpointers to rebuild tokens and features.
        let mut tokens: Vec<String> = Vec::new();
        let mut features = [0.0; N_FEATURES];
        let mut v = node;
        let mut r = rank;
        while v != 0 {
            let d = dlists[v][r];
            let carrier = d.arc_node;
            let tail = arena[carrier].parent;
            for i in 0..N_FEATURES {
                features[i] += arena[carrier].features[i] - arena[tail].features[i];
            }
            tokens.splice(0..0, options[arena[carrier].option].tgt.iter().cloned());
            v = tail;
            r = d.back_rank;
        }
        if seen.insert(tokens.join(" ")) {
            out.push(NBestEntry {
                tokens,
                features,
                score,
            });
            if out.len() == k {
                break;
            }
        }
    }
    out
}
