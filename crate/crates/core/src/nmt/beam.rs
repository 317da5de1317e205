//! Beam search with unknown-word replacement: finished hypotheses
//! compete on total log-probability, and every emitted `<unk>` is
//! replaced by the source token carrying the most attention at that
//! step (final-layer, head-averaged for the Transformer).

use super::model::Seq2SeqModel;
use super::rnn::{decode_step_rnn, encode_sentence_rnn, RnnEncodedSentence};
use super::transformer::{
    decode_prefix_transformer, encode_sentence_transformer, TransformerEncodedSentence,
};
use super::vocab::{BOS_ID, EOS_ID, PAD_ID, UNK_ID};
use super::{Arch, NmtError};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthHandling {
    /// Total log-probability.
    None,
    /// Log-probability divided by emitted length.
    PerToken,
}

#[derive(Debug, Clone)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Decode-length cap; defaults to 2 * source length + 5.
    pub max_len: Option<usize>,
    pub length_handling: LengthHandling,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 5,
            max_len: None,
            length_handling: LengthHandling::None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Translation {
    pub tokens: Vec<String>,
    pub token_ids: Vec<u32>,
    pub log_prob: f64,
    /// Attention over source positions per emitted token.
    pub attention: Vec<Vec<f64>>,
    pub unk_replacements: usize,
}

enum Encoded {
    Rnn(RnnEncodedSentence),
    Transformer(TransformerEncodedSentence),
}

#[derive(Clone)]
enum BeamState {
    Rnn { h: Vec<Tensor>, c: Vec<Tensor> },
    Transformer,
}

#[derive(Clone)]
struct Beam {
    ids: Vec<u32>,
    log_prob: f64,
    state: BeamState,
    attention: Vec<Vec<f64>>,
    finished: bool,
}

fn advance(
    model: &Seq2SeqModel,
    encoded: &Encoded,
    beam: &Beam,
) -> (Vec<f64>, Vec<f64>, BeamState) {
    match (encoded, &beam.state) {
        (Encoded::Rnn(enc), BeamState::Rnn { h, c }) => {
            let prev = beam.ids.last().copied().unwrap_or(BOS_ID);
            let step = decode_step_rnn(model, enc, h, c, prev);
            (
                step.log_probs,
                step.attention,
                BeamState::Rnn {
                    h: step.h,
                    c: step.c,
                },
            )
        }
        (Encoded::Transformer(enc), BeamState::Transformer) => {
            let (log_probs, attention) = decode_prefix_transformer(model, enc, &beam.ids);
            (log_probs, attention, BeamState::Transformer)
        }
        _ => unreachable!("beam state does not match the architecture"),
    }
}

fn final_key(beam: &Beam, handling: LengthHandling) -> f64 {
    match handling {
        LengthHandling::None => beam.log_prob,
        LengthHandling::PerToken => beam.log_prob / beam.ids.len().max(1) as f64,
    }
}

/// Translate one tokenized (model-level) source sentence.
pub fn beam_search(
    model: &Seq2SeqModel,
    src_tokens: &[String],
    provider: Option<&Tensor>,
    config: &BeamConfig,
) -> Result<Translation, NmtError> {
    if config.beam_size == 0 {
        return Err(NmtError::InvalidConfig("beam size must be positive".into()));
    }
    let src_ids = model.src_vocab.encode(src_tokens);
    let max_len = config.max_len.unwrap_or(2 * src_tokens.len() + 5);

    let (encoded, init_state) = match model.config.arch {
        Arch::Rnn => {
            let enc = encode_sentence_rnn(model, &src_ids, provider);
            let state = BeamState::Rnn {
                h: enc.h.clone(),
                c: enc.c.clone(),
            };
            (Encoded::Rnn(enc), state)
        }
        Arch::Transformer => (
            Encoded::Transformer(encode_sentence_transformer(model, &src_ids, provider)),
            BeamState::Transformer,
        ),
    };

    let mut beams = vec![Beam {
        ids: Vec::new(),
        log_prob: 0.0,
        state: init_state,
        attention: Vec::new(),
        finished: false,
    }];
    let mut done: Vec<Beam> = Vec::new();

    for _ in 0..max_len {
        let mut candidates: Vec<Beam> = Vec::new();
        for beam in &beams {
            let (log_probs, attention, state) = advance(model, &encoded, beam);
            // Per-beam shortlist: the beam_size best continuations.
            let mut ranked: Vec<(usize, f64)> = log_probs
                .iter()
                .enumerate()
                .filter(|&(id, _)| id as u32 != PAD_ID && id as u32 != BOS_ID)
                .map(|(id, &lp)| (id, lp))
                .collect();
            ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            for &(id, lp) in ranked.iter().take(config.beam_size) {
                let mut ids = beam.ids.clone();
                ids.push(id as u32);
                let mut attn = beam.attention.clone();
                attn.push(attention.clone());
                candidates.push(Beam {
                    ids,
                    log_prob: beam.log_prob + lp,
                    state: state.clone(),
                    attention: attn,
                    finished: id as u32 == EOS_ID,
                });
            }
        }
        candidates.sort_by(|a, b| b.log_prob.partial_cmp(&a.log_prob).unwrap());
        beams = Vec::new();
        for candidate in candidates.into_iter().take(config.beam_size) {
            if candidate.finished {
                done.push(candidate);
            } else {
                beams.push(candidate);
            }
        }
        if beams.is_empty() {
            break;
        }
    }
    done.extend(beams);
    let best = done
        .into_iter()
        .max_by(|a, b| {
            final_key(a, config.length_handling)
                .partial_cmp(&final_key(b, config.length_handling))
                .unwrap()
        })
        .expect("at least one hypothesis");

    Ok(assemble_translation(model, src_tokens, best))
}

fn assemble_translation(model: &Seq2SeqModel, src_tokens: &[String], beam: Beam) -> Translation {
    let mut tokens = Vec::new();
    let mut token_ids = Vec::new();
    let mut attention = Vec::new();
    let mut unk_replacements = 0;
    for (pos, &id) in beam.ids.iter().enumerate() {
        if id == EOS_ID {
            break;
        }
        // Language tags never surface in the visible output.
        if model.tgt_vocab.is_tag(id) {
            continue;
        }
        let attn = beam.attention[pos].clone();
        let token = if id == UNK_ID && !src_tokens.is_empty() {
            let best_src = attn
                .iter()
                .take(src_tokens.len())
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(0);
            unk_replacements += 1;
            src_tokens[best_src].clone()
        } else {
            model.tgt_vocab.token(id).to_string()
        };
        tokens.push(token);
        token_ids.push(id);
        attention.push(attn);
    }
    Translation {
        tokens,
        token_ids,
        log_prob: beam.log_prob,
        attention,
        unk_replacements,
    }
}

/// Stepwise greedy argmax decoding; definitionally what beam size 1
/// computes, kept as an independent code path.
pub fn greedy_search(
    model: &Seq2SeqModel,
    src_tokens: &[String],
    provider: Option<&Tensor>,
    max_len: Option<usize>,
) -> Result<Translation, NmtError> {
    let src_ids = model.src_vocab.encode(src_tokens);
    let max_len = max_len.unwrap_or(2 * src_tokens.len() + 5);
    let (encoded, mut state) = match model.config.arch {
        Arch::Rnn => {
            let enc = encode_sentence_rnn(model, &src_ids, provider);
            let state = BeamState::Rnn {
                h: enc.h.clone(),
                c: enc.c.clone(),
            };
            (Encoded::Rnn(enc), state)
        }
        Arch::Transformer => (
            Encoded::Transformer(encode_sentence_transformer(model, &src_ids, provider)),
            BeamState::Transformer,
        ),
    };
    let mut beam = Beam {
        ids: Vec::new(),
        log_prob: 0.0,
        state: BeamState::Transformer,
        attention: Vec::new(),
        finished: false,
    };
    beam.state = state.clone();
    for _ in 0..max_len {
        let (log_probs, attention, new_state) = advance(model, &encoded, &beam);
        state = new_state;
        let (best_id, best_lp) = log_probs
            .iter()
            .enumerate()
            .filter(|&(id, _)| id as u32 != PAD_ID && id as u32 != BOS_ID)
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(id, &lp)| (id as u32, lp))
            .unwrap();
        beam.ids.push(best_id);
        beam.attention.push(attention);
        beam.log_prob += best_lp;
        beam.state = state.clone();
        if best_id == EOS_ID {
            break;
        }
    }
    Ok(assemble_translation(model, src_tokens, beam))
}
