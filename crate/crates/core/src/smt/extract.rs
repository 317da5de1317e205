//! Alignment-consistent phrase-pair extraction.

use crate::align::AlignmentMatrix;

/// One extracted phrase pair, as half-open index ranges into the source
/// and target sentences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ExtractedPhrase {
    pub src_start: usize,
    pub src_end: usize,
    pub tgt_start: usize,
    pub tgt_end: usize,
}

/// All phrase pairs up to `max_phrase_len` on both sides that are
/// consistent with the alignment: no link crosses the box boundary and
/// at least one link lies inside. Unaligned target words adjacent to a
/// consistent box extend it in every combination.
pub fn extract_phrases(alignment: &AlignmentMatrix, max_phrase_len: usize) -> Vec<ExtractedPhrase> {
    let src_len = alignment.src_len;
    let tgt_len = alignment.tgt_len;
    let mut tgt_aligned = vec![false; tgt_len];
    for &(_, j) in &alignment.links {
        tgt_aligned[j] = true;
    }

    let mut out = Vec::new();
    for src_start in 0..src_len {
        for src_end in src_start + 1..=src_len.min(src_start + max_phrase_len) {
            // Minimal target span covering the source span's links.
            let mut tgt_min = usize::MAX;
            let mut tgt_max = 0usize;
            let mut any = false;
            for &(i, j) in &alignment.links {
                if (src_start..src_end).contains(&i) {
                    any = true;
                    tgt_min = tgt_min.min(j);
                    tgt_max = tgt_max.max(j);
                }
            }
            if !any {
                continue;
            }
            // Consistency: links into the minimal target span must come
            // from inside the source span.
            let consistent = alignment.links.iter().all(|&(i, j)| {
                !(tgt_min..=tgt_max).contains(&j) || (src_start..src_end).contains(&i)
            });
            if !consistent {
                continue;
            }
            // Expand over unaligned boundary words on the target side.
            let mut ts = tgt_min as isize;
            while ts >= 0 && (ts as usize == tgt_min || !tgt_aligned[ts as usize]) {
                let mut te = tgt_max;
                while te < tgt_len && (te == tgt_max || !tgt_aligned[te]) {
                    if te - (ts as usize) < max_phrase_len {
                        out.push(ExtractedPhrase {
                            src_start,
                            src_end,
                            tgt_start: ts as usize,
                            tgt_end: te + 1,
                        });
                    }
                    te += 1;
                }
                ts -= 1;
            }
        }
    }
    out.sort();
    out.dedup();
    out
}
