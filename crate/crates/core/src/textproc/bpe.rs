//! Byte-pair encoding over word types. Merges are learned greedily on
//! pair frequencies; application replays them in rank order and marks
//! word-internal subwords with a trailing `@@`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use super::TextprocError;

pub const CONTINUATION_MARKER: &str = "@@";
const MERGE_FILE_HEADER: &str = "#version: 0.2";

/// Ranked merge operations plus the continuation-marker convention.
#[derive(Debug, Clone, Default)]
pub struct MergeTable {
    merges: Vec<(String, String)>,
    rank: HashMap<(String, String), usize>,
}

impl MergeTable {
    pub fn new(merges: Vec<(String, String)>) -> MergeTable {
        let rank = merges
            .iter()
            .enumerate()
            .map(|(i, pair)| (pair.clone(), i))
            .collect();
        MergeTable { merges, rank }
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn save(&self, path: &Path) -> Result<(), TextprocError> {
        let mut out = fs::File::create(path)?;
        writeln!(out, "{MERGE_FILE_HEADER}")?;
        for (left, right) in &self.merges {
            writeln!(out, "{left} {right}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<MergeTable, TextprocError> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == MERGE_FILE_HEADER => {}
            _ => {
                return Err(TextprocError::MalformedMergeTable {
                    line: 1,
                    reason: format!("expected header {MERGE_FILE_HEADER:?}"),
                })
            }
        }
        let mut merges = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()));
                }
                _ => {
                    return Err(TextprocError::MalformedMergeTable {
                        line: i + 1,
                        reason: "expected exactly two space-separated symbols".into(),
                    })
                }
            }
        }
        Ok(MergeTable::new(merges))
    }
}

#[derive(Debug, PartialEq, Eq)]
struct HeapEntry {
    count: u64,
    pair: (String, String),
}

// Max-heap on count; equal counts pop the lexicographically smallest pair.
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| other.pair.cmp(&self.pair))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Learn up to `n_merges` merge operations from tokenized sentences.
/// Greedy highest-frequency pair selection over word types weighted by
/// frequency; ties break lexicographically on (left, right).
pub fn bpe_learn<'a, I, S>(sentences: I, n_merges: usize) -> MergeTable
where
    I: IntoIterator<Item = &'a [S]>,
    S: AsRef<str> + 'a,
{
    let mut word_freq: HashMap<&str, u64> = HashMap::new();
    for sentence in sentences {
        for tok in sentence {
            *word_freq.entry(tok.as_ref()).or_insert(0) += 1;
        }
    }
    // Deterministic word order so that iteration artifacts cannot leak
    // into tie handling.
    let mut word_list: Vec<(&str, u64)> = word_freq.into_iter().collect();
    word_list.sort_unstable();

    let mut words: Vec<(Vec<String>, u64)> = word_list
        .into_iter()
        .map(|(word, freq)| (word.chars().map(|c| c.to_string()).collect(), freq))
        .collect();

    let mut pair_counts: HashMap<(String, String), u64> = HashMap::new();
    let mut pair_words: HashMap<(String, String), HashSet<usize>> = HashMap::new();
    for (idx, (symbols, freq)) in words.iter().enumerate() {
        for window in symbols.windows(2) {
            let pair = (window[0].clone(), window[1].clone());
            *pair_counts.entry(pair.clone()).or_insert(0) += freq;
            pair_words.entry(pair).or_default().insert(idx);
        }
    }

    let mut heap: BinaryHeap<HeapEntry> = pair_counts
        .iter()
        .map(|(pair, &count)| HeapEntry {
            count,
            pair: pair.clone(),
        })
        .collect();

    let mut merges = Vec::new();
    while merges.len() < n_merges {
        // Lazy-deletion heap: skip stale entries.
        let best = loop {
            match heap.pop() {
                Some(entry) => {
                    if pair_counts.get(&entry.pair) == Some(&entry.count) && entry.count > 0 {
                        break Some(entry.pair);
                    }
                }
                None => break None,
            }
        };
        let Some(best) = best else { break };

        merges.push(best.clone());
        pair_counts.remove(&best);
        let affected = pair_words.remove(&best).unwrap_or_default();
        let mut touched: HashSet<(String, String)> = HashSet::new();
        for idx in affected {
            let (symbols, freq) = &mut words[idx];
            let freq = *freq;
            for window in symbols.windows(2) {
                let pair = (window[0].clone(), window[1].clone());
                if let Some(c) = pair_counts.get_mut(&pair) {
                    *c = c.saturating_sub(freq);
                    touched.insert(pair.clone());
                }
                if let Some(set) = pair_words.get_mut(&pair) {
                    set.remove(&idx);
                }
            }
            merge_in_place(symbols, &best);
            for window in symbols.windows(2) {
                let pair = (window[0].clone(), window[1].clone());
                if pair == best {
                    continue;
                }
                *pair_counts.entry(pair.clone()).or_insert(0) += freq;
                pair_words.entry(pair.clone()).or_default().insert(idx);
                touched.insert(pair);
            }
        }
        for pair in touched {
            if let Some(&count) = pair_counts.get(&pair) {
                heap.push(HeapEntry { count, pair });
            }
        }
    }
    MergeTable::new(merges)
}

/// Merge every left-to-right occurrence of `pair` inside `symbols`.
fn merge_in_place(symbols: &mut Vec<String>, pair: &(String, String)) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == pair.0 && symbols[i + 1] == pair.1 {
            let right = symbols.remove(i + 1);
            symbols[i].push_str(&right);
        } else {
            i += 1;
        }
    }
}

/// Segment tokens into subwords by replaying the table's merges in rank
/// order per word. Non-final subwords carry the `@@` continuation marker.
pub fn bpe_apply(table: &MergeTable, tokens: &[String]) -> Vec<String> {
    let mut cache: HashMap<&str, Vec<String>> = HashMap::new();
    let mut out = Vec::with_capacity(tokens.len());
    for tok in tokens {
        let pieces = cache
            .entry(tok.as_str())
            .or_insert_with(|| segment_word(table, tok));
        out.extend(pieces.iter().cloned());
    }
    out
}

fn segment_word(table: &MergeTable, word: &str) -> Vec<String> {
    let mut symbols: Vec<String> = word.chars().map(|c| c.to_string()).collect();
    if symbols.len() > 1 {
        loop {
            let mut best: Option<(usize, (String, String))> = None;
            for window in symbols.windows(2) {
                let pair = (window[0].clone(), window[1].clone());
                if let Some(&rank) = table.rank.get(&pair) {
                    if best.as_ref().map(|(r, _)| rank < *r).unwrap_or(true) {
                        best = Some((rank, pair));
                    }
                }
            }
            match best {
                Some((_, pair)) => merge_in_place(&mut symbols, &pair),
                None => break,
            }
        }
    }
    let last = symbols.len().saturating_sub(1);
    symbols
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            if i < last {
                format!("{s}{CONTINUATION_MARKER}")
            } else {
                s
            }
        })
        .collect()
}

/// Rejoin subwords into the original tokens: a subword ending in `@@`
/// continues into the next one.
///
/// Inverse of [`bpe_apply`] for whitespace-free tokens that do not
/// themselves end in the marker; the tokenizer never produces such
/// tokens because punctuation is split into single characters.
pub fn bpe_undo(subwords: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for piece in subwords {
        match piece.strip_suffix(CONTINUATION_MARKER) {
            Some(stem) => current.push_str(stem),
            None => {
                current.push_str(piece);
                out.push(std::mem::take(&mut current));
            }
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}
