//! Pre-layer-norm Transformer: normalization before every attention and
//! feed-forward block, sinusoidal positions, a final layer norm after
//! the last block on each side.

use super::model::{output_logits, positional_encoding, BoundParams, Seq2SeqModel, MASK_NEG};
use super::train::Batch;
use super::vocab::{BOS_ID, PAD_ID};
use super::FusionMode;
use crate::numerics::{Tape, Tensor, Var, IGNORE_TARGET};

/// Multi-head attention. `q` is `[B*Tq, H]`; `k`/`v` inputs are
/// `[B*Tk, Dk]` (the provider dimension for the fusion attention,
/// otherwise H). `masks[b]` is an additive `[Tq, Tk]` constant. Returns
/// the output `[B*Tq, H]` and the per-(batch, head) attention weights.
#[allow(clippy::too_many_arguments)]
fn multi_head(
    tape: &mut Tape,
    bound: &BoundParams,
    prefix: &str,
    q_in: Var,
    kv_in: Var,
    heads: usize,
    hidden: usize,
    batch: usize,
    q_len: usize,
    k_len: usize,
    masks: &[Var],
) -> (Var, Vec<Vec<Var>>) {
    let dk = hidden / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let q = tape.matmul(q_in, bound.var(&format!("{prefix}.wq")));
    let k = tape.matmul(kv_in, bound.var(&format!("{prefix}.wk")));
    let v = tape.matmul(kv_in, bound.var(&format!("{prefix}.wv")));
    let mut per_batch = Vec::with_capacity(batch);
    let mut all_weights = Vec::with_capacity(batch);
    for b in 0..batch {
        let mut head_outputs = Vec::with_capacity(heads);
        let mut head_weights = Vec::with_capacity(heads);
        for head in 0..heads {
            let (c0, c1) = (head * dk, (head + 1) * dk);
            let qb = tape.slice(q, b * q_len, (b + 1) * q_len, c0, c1);
            let kb = tape.slice(k, b * k_len, (b + 1) * k_len, c0, c1);
            let vb = tape.slice(v, b * k_len, (b + 1) * k_len, c0, c1);
            let kt = tape.transpose(kb);
            let raw = tape.matmul(qb, kt);
            let scaled = tape.scale(raw, scale);
            let masked = tape.add(scaled, masks[b]);
            let weights = tape.softmax(masked);
            head_weights.push(weights);
            head_outputs.push(tape.matmul(weights, vb));
        }
        per_batch.push(tape.concat(1, &head_outputs));
        all_weights.push(head_weights);
    }
    let merged = tape.concat(0, &per_batch);
    let out = tape.matmul(merged, bound.var(&format!("{prefix}.wo")));
    (out, all_weights)
}

fn layer_norm_named(tape: &mut Tape, bound: &BoundParams, prefix: &str, x: Var) -> Var {
    tape.layer_norm(
        x,
        bound.var(&format!("{prefix}.g")),
        bound.var(&format!("{prefix}.b")),
    )
}

fn feed_forward(tape: &mut Tape, bound: &BoundParams, prefix: &str, x: Var, dropout: f64) -> Var {
    let a = tape.matmul(x, bound.var(&format!("{prefix}.w1")));
    let a = tape.add(a, bound.var(&format!("{prefix}.b1")));
    let a = tape.relu(a);
    let a = tape.dropout(a, dropout);
    let b = tape.matmul(a, bound.var(&format!("{prefix}.w2")));
    tape.add(b, bound.var(&format!("{prefix}.b2")))
}

/// Token embeddings scaled by sqrt(E) plus sinusoidal positions, with
/// input-concat fusion applied before the scaling.
fn embed_sequence(
    tape: &mut Tape,
    bound: &BoundParams,
    model: &Seq2SeqModel,
    table: &str,
    ids: &[usize],
    positions: &[usize],
    provider_flat: Option<Var>,
) -> Var {
    let e = model.config.embed;
    let mut x = tape.embed(bound.var(table), ids);
    if let Some(provider) = provider_flat {
        let joined = tape.concat(1, &[x, provider]);
        let projected = tape.matmul(joined, bound.var("fuse2.w"));
        x = tape.add(projected, bound.var("fuse2.b"));
    }
    let x = tape.scale(x, (e as f64).sqrt());
    let pe = tape.constant(positional_encoding(positions, e));
    let x = tape.add(x, pe);
    tape.dropout(x, model.config.dropout)
}

/// Flattened ids, positions, and per-batch additive masks for a padded
/// batch. Rows are batch-major: row b*t_max + t.
fn flatten(sentences: &[Vec<u32>], t_max: usize, shift_bos: bool) -> (Vec<usize>, Vec<usize>) {
    let mut ids = Vec::with_capacity(sentences.len() * t_max);
    let mut positions = Vec::with_capacity(sentences.len() * t_max);
    for sent in sentences {
        for t in 0..t_max {
            let id = if shift_bos {
                if t == 0 {
                    BOS_ID
                } else {
                    sent.get(t - 1).copied().unwrap_or(PAD_ID)
                }
            } else {
                sent.get(t).copied().unwrap_or(PAD_ID)
            };
            ids.push(id as usize);
            positions.push(t);
        }
    }
    (ids, positions)
}

fn key_padding_masks(
    tape: &mut Tape,
    lens: &[usize],
    q_len: usize,
    k_len: usize,
    causal: bool,
) -> Vec<Var> {
    lens.iter()
        .map(|&len| {
            let mut m = Tensor::zeros(q_len, k_len);
            for qi in 0..q_len {
                for ki in 0..k_len {
                    if ki >= len || (causal && ki > qi) {
                        m.set(qi, ki, MASK_NEG);
                    }
                }
            }
            tape.constant(m)
        })
        .collect()
}

pub struct TransformerEncoded {
    /// `[B*S, H]` encoder output.
    pub output: Var,
    pub s_max: usize,
    pub src_lens: Vec<usize>,
    /// Provider vectors flattened `[B*S, dB]` (zeros at padding).
    pub provider_flat: Option<Var>,
}

pub fn encode_transformer(
    tape: &mut Tape,
    bound: &BoundParams,
    model: &Seq2SeqModel,
    batch: &Batch,
) -> TransformerEncoded {
    let b = batch.src.len();
    let s_max = batch.src.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let src_lens: Vec<usize> = batch.src.iter().map(|s| s.len().max(1)).collect();
    let h = model.config.hidden;
    let heads = model.config.heads;
    let dropout = model.config.dropout;

    let provider_flat = if model.fusion.needs_provider() {
        let dim = model.fusion.provider_dim;
        let mut t = Tensor::zeros(b * s_max, dim);
        if let Some(provider) = &batch.provider {
            for (row, sent) in provider.iter().enumerate() {
                for s in 0..sent.rows().min(s_max) {
                    for c in 0..dim {
                        t.set(row * s_max + s, c, sent.at(s, c));
                    }
                }
            }
        }
        Some(tape.constant(t))
    } else {
        None
    };

    let (ids, positions) = flatten(&batch.src, s_max, false);
    let fuse_input = if model.fusion.has(FusionMode::InputConcat) {
        provider_flat
    } else {
        None
    };
    let mut x = embed_sequence(
        tape,
        bound,
        model,
        "src_embed",
        &ids,
        &positions,
        fuse_input,
    );
    let masks = key_padding_masks(tape, &src_lens, s_max, s_max, false);
    for l in 0..model.config.enc_layers {
        let normed = layer_norm_named(tape, bound, &format!("enc.{l}.ln1"), x);
        let (attn, _) = multi_head(
            tape,
            bound,
            &format!("enc.{l}.attn"),
            normed,
            normed,
            heads,
            h,
            b,
            s_max,
            s_max,
            &masks,
        );
        let attn = tape.dropout(attn, dropout);
        x = tape.add(x, attn);
        let normed = layer_norm_named(tape, bound, &format!("enc.{l}.ln2"), x);
        let ff = feed_forward(tape, bound, &format!("enc.{l}.ffn"), normed, dropout);
        let ff = tape.dropout(ff, dropout);
        x = tape.add(x, ff);
    }
    let mut output = layer_norm_named(tape, bound, "enc.ln_final", x);

    if model.fusion.has(FusionMode::OutputConcat) {
        let provider = provider_flat.expect("output-concat fusion needs provider vectors");
        let joined = tape.concat(1, &[output, provider]);
        let projected = tape.matmul(joined, bound.var("fuse3.w"));
        output = tape.add(projected, bound.var("fuse3.b"));
    }

    TransformerEncoded {
        output,
        s_max,
        src_lens,
        provider_flat,
    }
}

/// Decoder over a (possibly teacher-forced) target prefix. Returns the
/// output states `[B*T, H]` and the final layer's cross-attention
/// weights per (batch, head).
pub fn decode_states_transformer(
    tape: &mut Tape,
    bound: &BoundParams,
    model: &Seq2SeqModel,
    enc: &TransformerEncoded,
    tgt: &[Vec<u32>],
    t_max: usize,
    shift_bos: bool,
) -> (Var, Vec<Vec<Var>>) {
    let b = tgt.len();
    let h = model.config.hidden;
    let heads = model.config.heads;
    let dropout = model.config.dropout;
    let (ids, positions) = flatten(tgt, t_max, shift_bos);
    let mut x = embed_sequence(tape, bound, model, "tgt_embed", &ids, &positions, None);

    let tgt_lens = vec![t_max; b];
    let self_masks = key_padding_masks(tape, &tgt_lens, t_max, t_max, true);
    let cross_masks = key_padding_masks(tape, &enc.src_lens, t_max, enc.s_max, false);

    let mut final_cross = Vec::new();
    for l in 0..model.config.dec_layers {
        let normed = layer_norm_named(tape, bound, &format!("dec.{l}.ln1"), x);
        let (attn, _) = multi_head(
            tape,
            bound,
            &format!("dec.{l}.attn"),
            normed,
            normed,
            heads,
            h,
            b,
            t_max,
            t_max,
            &self_masks,
        );
        let attn = tape.dropout(attn, dropout);
        x = tape.add(x, attn);

        let normed = layer_norm_named(tape, bound, &format!("dec.{l}.ln2"), x);
        let (cross, weights) = multi_head(
            tape,
            bound,
            &format!("dec.{l}.cross"),
            normed,
            enc.output,
            heads,
            h,
            b,
            t_max,
            enc.s_max,
            &cross_masks,
        );
        let cross = tape.dropout(cross, dropout);
        x = tape.add(x, cross);
        if l == model.config.dec_layers - 1 {
            final_cross = weights;
        }

        if model.fusion.has(FusionMode::OutputAttention) {
            let provider = enc
                .provider_flat
                .expect("output-attention fusion needs provider vectors");
            let normed = layer_norm_named(tape, bound, &format!("dec.{l}.lnb"), x);
            let (battn, _) = multi_head(
                tape,
                bound,
                &format!("dec.{l}.battn"),
                normed,
                provider,
                heads,
                h,
                b,
                t_max,
                enc.s_max,
                &cross_masks,
            );
            let battn = tape.dropout(battn, dropout);
            x = tape.add(x, battn);
        }

        let normed = layer_norm_named(tape, bound, &format!("dec.{l}.ln3"), x);
        let ff = feed_forward(tape, bound, &format!("dec.{l}.ffn"), normed, dropout);
        let ff = tape.dropout(ff, dropout);
        x = tape.add(x, ff);
    }
    let out = layer_norm_named(tape, bound, "dec.ln_final", x);
    (out, final_cross)
}

/// Teacher-forced forward: (loss, logits `[B*T, V]` batch-major, flat
/// targets aligned with the logits rows).
pub fn forward_loss_transformer(
    tape: &mut Tape,
    bound: &BoundParams,
    model: &Seq2SeqModel,
    batch: &Batch,
) -> (Var, Var, Vec<usize>) {
    let enc = encode_transformer(tape, bound, model, batch);
    let t_max = batch.tgt.iter().map(Vec::len).max().unwrap_or(0) + 1;
    let (states, _) = decode_states_transformer(tape, bound, model, &enc, &batch.tgt, t_max, true);
    let logits = output_logits(tape, bound, model.config.tied_decoder_embeddings, states);
    let mut targets = Vec::with_capacity(batch.tgt.len() * t_max);
    for sent in &batch.tgt {
        for t in 0..t_max {
            let target = match t.cmp(&sent.len()) {
                std::cmp::Ordering::Less => sent[t] as usize,
                std::cmp::Ordering::Equal => super::vocab::EOS_ID as usize,
                std::cmp::Ordering::Greater => IGNORE_TARGET,
            };
            targets.push(target);
        }
    }
    let loss = tape.cross_entropy(logits, &targets, model.config.label_smoothing);
    (loss, logits, targets)
}

/// Single-sentence encoder pass for inference: plain tensors out.
pub struct TransformerEncodedSentence {
    pub output: Tensor,
    pub provider: Option<Tensor>,
    pub src_len: usize,
}

pub fn encode_sentence_transformer(
    model: &Seq2SeqModel,
    src_ids: &[u32],
    provider: Option<&Tensor>,
) -> TransformerEncodedSentence {
    let mut tape = Tape::eval_mode(model.config.seed);
    let bound = BoundParams::bind(model, &mut tape);
    let batch = Batch {
        src: vec![src_ids.to_vec()],
        tgt: vec![Vec::new()],
        provider: provider.map(|p| vec![p.clone()]),
    };
    let enc = encode_transformer(&mut tape, &bound, model, &batch);
    TransformerEncodedSentence {
        output: tape.value(enc.output).clone(),
        provider: enc.provider_flat.map(|v| tape.value(v).clone()),
        src_len: src_ids.len().max(1),
    }
}

/// Re-run the decoder over the whole prefix and read off the last
/// position: log-probabilities and head-averaged final-layer
/// cross-attention.
pub fn decode_prefix_transformer(
    model: &Seq2SeqModel,
    enc: &TransformerEncodedSentence,
    prefix: &[u32],
) -> (Vec<f64>, Vec<f64>) {
    let mut tape = Tape::eval_mode(model.config.seed);
    let bound = BoundParams::bind(model, &mut tape);
    let enc_vars = TransformerEncoded {
        output: tape.constant(enc.output.clone()),
        s_max: enc.src_len,
        src_lens: vec![enc.src_len],
        provider_flat: enc.provider.as_ref().map(|p| tape.constant(p.clone())),
    };
    // The prefix already contains the generated tokens; shift_bos puts
    // BOS first and feeds prefix[..] as inputs.
    let t_max = prefix.len() + 1;
    let (states, cross) = decode_states_transformer(
        &mut tape,
        &bound,
        model,
        &enc_vars,
        &[prefix.to_vec()],
        t_max,
        true,
    );
    let logits = output_logits(
        &mut tape,
        &bound,
        model.config.tied_decoder_embeddings,
        states,
    );
    let log_probs = tape.log_softmax(logits);
    let last_row = tape.value(log_probs).row_slice(t_max - 1).to_vec();

    let mut attention = vec![0.0; enc.src_len];
    let head_weights = &cross[0];
    for &w in head_weights {
        let weights = tape.value(w);
        for s in 0..enc.src_len {
            attention[s] += weights.at(t_max - 1, s) / head_weights.len() as f64;
        }
    }
    (last_row, attention)
}
