//! LSTM encoder-decoder with bilinear (general) attention: the batched
//! teacher-forced forward used in training and the stepwise path used by
//! beam search.

use super::model::{lstm_step, masked_update, output_logits, BoundParams, Seq2SeqModel, MASK_NEG};
use super::train::Batch;
use super::vocab::{BOS_ID, PAD_ID};
use super::FusionMode;
use crate::numerics::{Tape, Tensor, Var};

pub struct RnnEncodedBatch {
    /// Top-layer encoder state per source position, `[B, H]` each.
    pub outputs: Vec<Var>,
    /// `[B, S]` additive attention mask (0 real, very negative pad).
    pub attn_mask: Var,
    pub dec_h: Vec<Var>,
    pub dec_c: Vec<Var>,
    /// Provider vectors per source position, `[B, dB]` each.
    pub provider_pos: Vec<Var>,
}

fn batch_ids_at(batch_src: &[Vec<u32>], s: usize) -> Vec<usize> {
    batch_src
        .iter()
        .map(|sent| sent.get(s).copied().unwrap_or(PAD_ID) as usize)
        .collect()
}

/// Embed one source position, applying input-concat fusion when active.
fn embed_src(
    tape: &mut Tape,
    bound: &BoundParams,
    model: &Seq2SeqModel,
    ids: &[usize],
    provider_at: Option<Var>,
) -> Var {
    let embedded = tape.embed(bound.var("src_embed"), ids);
    if model.fusion.has(FusionMode::InputConcat) {
        let provider = provider_at.expect("input-concat fusion needs provider vectors");
        let joined = tape.concat(1, &[embedded, provider]);
        let projected = tape.matmul(joined, bound.var("fuse2.w"));
        tape.add(projected, bound.var("fuse2.b"))
    } else {
        embedded
    }
}

/// Per-position provider constants for a batch, `[B, dB]` each, zeros at
/// padding.
pub fn provider_positions(tape: &mut Tape, batch: &Batch, s_max: usize, dim: usize) -> Vec<Var> {
    let b = batch.src.len();
    (0..s_max)
        .map(|s| {
            let mut t = Tensor::zeros(b, dim);
            if let Some(provider) = &batch.provider {
                for (row, sent) in provider.iter().enumerate() {
                    if s < sent.rows() {
                        for c in 0..dim {
                            t.set(row, c, sent.at(s, c));
                        }
                    }
                }
            }
            tape.constant(t)
        })
        .collect()
}

pub fn encode_rnn(
    tape: &mut Tape,
    bound: &BoundParams,
    model: &Seq2SeqModel,
    batch: &Batch,
) -> RnnEncodedBatch {
    let b = batch.src.len();
    let h_size = model.config.hidden;
    let s_max = batch.src.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let dropout = model.config.dropout;

    // Step masks [B,1] and the attention mask [B,S].
    let mut masks = Vec::with_capacity(s_max);
    let mut inv_masks = Vec::with_capacity(s_max);
    let mut attn = Tensor::zeros(b, s_max);
    for s in 0..s_max {
        let mut m = Tensor::zeros(b, 1);
        let mut inv = Tensor::zeros(b, 1);
        for (row, sent) in batch.src.iter().enumerate() {
            if s < sent.len() {
                m.data[row] = 1.0;
            } else {
                inv.data[row] = 1.0;
                attn.set(row, s, MASK_NEG);
            }
        }
        masks.push(tape.constant(m));
        inv_masks.push(tape.constant(inv));
    }
    let attn_mask = tape.constant(attn);

    let provider_pos = if model.fusion.needs_provider() {
        provider_positions(tape, batch, s_max, model.fusion.provider_dim)
    } else {
        Vec::new()
    };

    // Layer-0 inputs.
    let mut layer_inputs: Vec<Var> = (0..s_max)
        .map(|s| {
            let ids = batch_ids_at(&batch.src, s);
            let provider_at = provider_pos.get(s).copied();
            embed_src(tape, bound, model, &ids, provider_at)
        })
        .collect();

    let mut final_h: Vec<Var> = Vec::new();
    let mut final_c: Vec<Var> = Vec::new();
    for l in 0..model.config.enc_layers {
        let inputs: Vec<Var> = if l == 0 {
            layer_inputs.clone()
        } else {
            layer_inputs
                .iter()
                .map(|&v| tape.dropout(v, dropout))
                .collect()
        };
        let mut sum_h: Vec<Option<Var>> = vec![None; s_max];
        let mut dir_final: Vec<(Var, Var)> = Vec::new();
        for (dir, order) in [
            ("f", (0..s_max).collect::<Vec<_>>()),
            ("b", (0..s_max).rev().collect::<Vec<_>>()),
        ] {
            let wx = bound.var(&format!("enc.{l}.{dir}.wx"));
            let wh = bound.var(&format!("enc.{l}.{dir}.wh"));
            let bias = bound.var(&format!("enc.{l}.{dir}.b"));
            let mut h = tape.constant(Tensor::zeros(b, h_size));
            let mut c = tape.constant(Tensor::zeros(b, h_size));
            for &s in &order {
                let (h_new, c_new) = lstm_step(tape, inputs[s], h, c, wx, wh, bias, h_size);
                h = masked_update(tape, h_new, h, masks[s], inv_masks[s]);
                c = masked_update(tape, c_new, c, masks[s], inv_masks[s]);
                sum_h[s] = Some(match sum_h[s] {
                    Some(existing) => tape.add(existing, h),
                    None => h,
                });
            }
            dir_final.push((h, c));
        }
        layer_inputs = sum_h.into_iter().map(Option::unwrap).collect();
        let (fh, fc) = dir_final[0];
        let (bh, bc) = dir_final[1];
        final_h.push(tape.add(fh, bh));
        final_c.push(tape.add(fc, bc));
    }

    let mut outputs = layer_inputs;
    if model.fusion.has(FusionMode::OutputConcat) {
        outputs = outputs
            .iter()
            .zip(&provider_pos)
            .map(|(&o, &p)| {
                let joined = tape.concat(1, &[o, p]);
                let projected = tape.matmul(joined, bound.var("fuse3.w"));
                tape.add(projected, bound.var("fuse3.b"))
            })
            .collect();
    }

    // Decoder layer l starts from encoder layer min(l, enc_layers-1).
    let dec_layers = model.config.dec_layers;
    let pick = |v: &[Var], l: usize| v[l.min(v.len() - 1)];
    let dec_h = (0..dec_layers).map(|l| pick(&final_h, l)).collect();
    let dec_c = (0..dec_layers).map(|l| pick(&final_c, l)).collect();

    RnnEncodedBatch {
        outputs,
        attn_mask,
        dec_h,
        dec_c,
        provider_pos,
    }
}

/// Bilinear attention read over per-position memories: returns the
/// context `[B, width]` and the weights `[B, S]`.
fn attention_read(tape: &mut Tape, query: Var, memories: &[Var], mask: Var) -> (Var, Var) {
    let scores: Vec<Var> = memories
        .iter()
        .map(|&m| {
            let prod = tape.mul(query, m);
            tape.sum_axis(prod, 1)
        })
        .collect();
    let stacked = tape.concat(1, &scores);
    let masked = tape.add(stacked, mask);
    let weights = tape.softmax(masked);
    let b = tape.value(weights).rows();
    let mut context: Option<Var> = None;
    for (s, &m) in memories.iter().enumerate() {
        let w_col = tape.slice(weights, 0, b, s, s + 1);
        let contrib = tape.mul(m, w_col);
        context = Some(match context {
            Some(acc) => tape.add(acc, contrib),
            None => contrib,
        });
    }
    (context.unwrap(), weights)
}

/// One decoder step above the LSTM stack: general (bilinear) attention plus
/// the attentional vector, with the optional second attention over
/// provider vectors. Returns (h_tilde, attention weights).
pub fn decoder_attention(
    tape: &mut Tape,
    bound: &BoundParams,
    model: &Seq2SeqModel,
    h_top: Var,
    enc: &RnnEncodedBatch,
) -> (Var, Var) {
    let q = tape.matmul(h_top, bound.var("attn.wa"));
    let (context, weights) = attention_read(tape, q, &enc.outputs, enc.attn_mask);
    let mut parts = vec![context];
    if model.fusion.has(FusionMode::OutputAttention) {
        let qb = tape.matmul(h_top, bound.var("fuse4.wa"));
        let (context_b, _) = attention_read(tape, qb, &enc.provider_pos, enc.attn_mask);
        parts.push(context_b);
    }
    parts.push(h_top);
    let joined = tape.concat(1, &parts);
    let projected = tape.matmul(joined, bound.var("attn.wc"));
    (tape.tanh(projected), weights)
}

/// Teacher-forced forward: returns (loss, stacked logits, flat targets).
/// Logits rows are ordered step-major: row t*B + b.
pub fn forward_loss_rnn(
    tape: &mut Tape,
    bound: &BoundParams,
    model: &Seq2SeqModel,
    batch: &Batch,
) -> (Var, Var, Vec<usize>) {
    let b = batch.src.len();
    let h_size = model.config.hidden;
    let dropout = model.config.dropout;
    let enc = encode_rnn(tape, bound, model, batch);

    let t_max = batch.tgt.iter().map(Vec::len).max().unwrap_or(0) + 1;
    let mut h = enc.dec_h.clone();
    let mut c = enc.dec_c.clone();
    let mut step_logits = Vec::with_capacity(t_max);
    let mut targets = Vec::with_capacity(t_max * b);
    for t in 0..t_max {
        let ids: Vec<usize> = batch
            .tgt
            .iter()
            .map(|sent| {
                if t == 0 {
                    BOS_ID as usize
                } else {
                    sent.get(t - 1).copied().unwrap_or(PAD_ID) as usize
                }
            })
            .collect();
        for sent in &batch.tgt {
            let target = match t.cmp(&sent.len()) {
                std::cmp::Ordering::Less => sent[t] as usize,
                std::cmp::Ordering::Equal => super::vocab::EOS_ID as usize,
                std::cmp::Ordering::Greater => crate::numerics::IGNORE_TARGET,
            };
            targets.push(target);
        }
        let mut x = tape.embed(bound.var("tgt_embed"), &ids);
        for l in 0..model.config.dec_layers {
            let input = if l == 0 { x } else { tape.dropout(x, dropout) };
            let wx = bound.var(&format!("dec.{l}.wx"));
            let wh = bound.var(&format!("dec.{l}.wh"));
            let bias = bound.var(&format!("dec.{l}.b"));
            let (h_new, c_new) = lstm_step(tape, input, h[l], c[l], wx, wh, bias, h_size);
            h[l] = h_new;
            c[l] = c_new;
            x = h_new;
        }
        let (h_tilde, _) = decoder_attention(tape, bound, model, x, &enc);
        let h_tilde = tape.dropout(h_tilde, dropout);
        step_logits.push(output_logits(
            tape,
            bound,
            model.config.tied_decoder_embeddings,
            h_tilde,
        ));
    }
    let logits = tape.concat(0, &step_logits);
    let loss = tape.cross_entropy(logits, &targets, model.config.label_smoothing);
    (loss, logits, targets)
}

/// Precomputed single-sentence encoder state for stepwise decoding.
pub struct RnnEncodedSentence {
    pub outputs: Vec<Tensor>,
    pub provider_pos: Vec<Tensor>,
    pub h: Vec<Tensor>,
    pub c: Vec<Tensor>,
}

pub fn encode_sentence_rnn(
    model: &Seq2SeqModel,
    src_ids: &[u32],
    provider: Option<&Tensor>,
) -> RnnEncodedSentence {
    let mut tape = Tape::eval_mode(model.config.seed);
    let bound = BoundParams::bind(model, &mut tape);
    let batch = Batch {
        src: vec![src_ids.to_vec()],
        tgt: vec![Vec::new()],
        provider: provider.map(|p| vec![p.clone()]),
    };
    let enc = encode_rnn(&mut tape, &bound, model, &batch);
    RnnEncodedSentence {
        outputs: enc.outputs.iter().map(|&v| tape.value(v).clone()).collect(),
        provider_pos: enc
            .provider_pos
            .iter()
            .map(|&v| tape.value(v).clone())
            .collect(),
        h: enc.dec_h.iter().map(|&v| tape.value(v).clone()).collect(),
        c: enc.dec_c.iter().map(|&v| tape.value(v).clone()).collect(),
    }
}

pub struct RnnStep {
    pub log_probs: Vec<f64>,
    pub attention: Vec<f64>,
    pub h: Vec<Tensor>,
    pub c: Vec<Tensor>,
}

/// Advance the decoder one token on a fresh evaluation tape.
pub fn decode_step_rnn(
    model: &Seq2SeqModel,
    enc: &RnnEncodedSentence,
    h: &[Tensor],
    c: &[Tensor],
    prev_token: u32,
) -> RnnStep {
    let mut tape = Tape::eval_mode(model.config.seed);
    let bound = BoundParams::bind(model, &mut tape);
    let enc_vars = RnnEncodedBatch {
        outputs: enc
            .outputs
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect(),
        attn_mask: tape.constant(Tensor::zeros(1, enc.outputs.len().max(1))),
        dec_h: Vec::new(),
        dec_c: Vec::new(),
        provider_pos: enc
            .provider_pos
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect(),
    };
    let mut x = tape.embed(bound.var("tgt_embed"), &[prev_token as usize]);
    let mut new_h = Vec::with_capacity(h.len());
    let mut new_c = Vec::with_capacity(c.len());
    for l in 0..model.config.dec_layers {
        let hv = tape.constant(h[l].clone());
        let cv = tape.constant(c[l].clone());
        let wx = bound.var(&format!("dec.{l}.wx"));
        let wh = bound.var(&format!("dec.{l}.wh"));
        let bias = bound.var(&format!("dec.{l}.b"));
        let (h_var, c_var) = lstm_step(&mut tape, x, hv, cv, wx, wh, bias, model.config.hidden);
        new_h.push(h_var);
        new_c.push(c_var);
        x = h_var;
    }
    let (h_tilde, weights) = decoder_attention(&mut tape, &bound, model, x, &enc_vars);
    let logits = output_logits(
        &mut tape,
        &bound,
        model.config.tied_decoder_embeddings,
        h_tilde,
    );
    let log_probs_var = tape.log_softmax(logits);
    RnnStep {
        log_probs: tape.value(log_probs_var).data.clone(),
        attention: tape.value(weights).data.clone(),
        h: new_h.iter().map(|&v| tape.value(v).clone()).collect(),
        c: new_c.iter().map(|&v| tape.value(v).clone()).collect(),
    }
}
